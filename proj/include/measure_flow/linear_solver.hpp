#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "measure_flow/curve.hpp"
#include "measure_flow/dual_norms.hpp"
#include "measure_flow/error.hpp"
#include "measure_flow/fields.hpp"
#include "measure_flow/measure.hpp"
#include "measure_flow/parallel.hpp"

namespace measure_flow {

inline constexpr double kBlowUpRadius = 1e12;

// Positions X(t_k) for every node of a grid, flattened node-major.
struct Trajectory {
  std::size_t dim = 1;
  std::vector<double> points;

  std::size_t nodes() const { return points.size() / dim; }
  ConstPoint at(std::size_t k) const { return ConstPoint(points.data() + k * dim, dim); }
};

namespace detail {

inline void check_state(ConstPoint x, double t) {
  for (double c : x) {
    if (!std::isfinite(c) || std::abs(c) > kBlowUpRadius) {
      throw Error(Errc::blow_up, "characteristic left |x| <= 1e12 before t = " + std::to_string(t));
    }
  }
}

// One classical RK4 step of  x' = b(t, x),  L' = w(t, x)  (w optional).
inline void rk4_step(const TimeVectorField& b, const TimeScalarField* w, double t, double dt, std::vector<double>& x,
                     double& L) {
  const std::size_t d = x.size();
  std::vector<double> k1(d), k2(d), k3(d), k4(d), tmp(d);
  double l1 = 0, l2 = 0, l3 = 0, l4 = 0;
  auto eval = [&](double s, const std::vector<double>& p, std::vector<double>& k, double& l) {
    b.value(s, p, k);
    if (w != nullptr) l = w->value(s, p);
  };
  eval(t, x, k1, l1);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * dt * k1[i];
  eval(t + 0.5 * dt, tmp, k2, l2);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + 0.5 * dt * k2[i];
  eval(t + 0.5 * dt, tmp, k3, l3);
  for (std::size_t i = 0; i < d; ++i) tmp[i] = x[i] + dt * k3[i];
  eval(t + dt, tmp, k4, l4);
  for (std::size_t i = 0; i < d; ++i) x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  L += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
}

}  // namespace detail

inline Trajectory integrate_flow(const TimeVectorField& b, ConstPoint x0, const TimeGrid& grid) {
  if (x0.size() != b.dim) throw Error(Errc::dim_mismatch, "start point and field dimensions differ");
  const std::size_t d = b.dim;
  Trajectory out{d, std::vector<double>(grid.nodes() * d)};
  std::vector<double> x(x0.begin(), x0.end());
  double unused = 0.0;
  std::copy(x.begin(), x.end(), out.points.begin());
  for (std::size_t k = 0; k < grid.steps(); ++k) {
    detail::rk4_step(b, nullptr, grid.time(k), grid.time(k + 1) - grid.time(k), x, unused);
    detail::check_state(x, grid.time(k + 1));
    std::copy(x.begin(), x.end(), out.points.begin() + static_cast<long>((k + 1) * d));
  }
  return out;
}

// nu_t = X_b(t, .) # (exp(int_0^t w(s, X_b(s, .)) ds) nu_0), particle by particle.
inline MeasureCurve solve_linear(const TimeVectorField& b, const TimeScalarField& w, const ParticleMeasure& mu0,
                                 const TimeGrid& grid) {
  const std::size_t d = mu0.dim(), n = mu0.size(), nodes = grid.nodes();
  if (b.dim != d || w.dim != d) throw Error(Errc::dim_mismatch, "fields and initial measure dimensions differ");
  std::vector<std::vector<double>> coords(nodes, std::vector<double>(n * d));
  std::vector<std::vector<double>> weights(nodes, std::vector<double>(n));
  parallel_for(n, [&](std::size_t i) {
    std::vector<double> x(mu0.point(i).begin(), mu0.point(i).end());
    double L = 0.0;
    std::copy(x.begin(), x.end(), coords[0].begin() + static_cast<long>(i * d));
    weights[0][i] = mu0.weight(i);
    for (std::size_t k = 0; k < grid.steps(); ++k) {
      detail::rk4_step(b, &w, grid.time(k), grid.time(k + 1) - grid.time(k), x, L);
      detail::check_state(x, grid.time(k + 1));
      const double growth = std::exp(L);
      if (!std::isfinite(growth) || !std::isfinite(L)) {
        throw Error(Errc::blow_up, "weight growth overflowed before t = " + std::to_string(grid.time(k + 1)));
      }
      std::copy(x.begin(), x.end(), coords[k + 1].begin() + static_cast<long>(i * d));
      weights[k + 1][i] = mu0.weight(i) * growth;
    }
  });
  MeasureCurve curve{grid, {}};
  curve.snapshots.reserve(nodes);
  for (std::size_t k = 0; k < nodes; ++k) curve.snapshots.emplace_back(d, std::move(coords[k]), std::move(weights[k]));
  return curve;
}

// Space-time test function with its partial derivatives.
struct SpaceTimeTest {
  std::size_t dim = 1;
  std::function<double(double, ConstPoint)> value;
  std::function<double(double, ConstPoint)> dt;
  std::function<void(double, ConstPoint, MutPoint)> grad;
};

// Weak-form defect
//   int_0^T <dt phi + b.grad phi + w phi, nu_t> dt + <phi(0), nu_0> - <phi(T), nu_T>
// with the trapezoid rule in t and exact particle sums. The last term vanishes when phi is
// supported before T.
inline double weak_residual(const MeasureCurve& curve, const TimeVectorField& b, const TimeScalarField& w,
                            const ParticleMeasure& mu0, const SpaceTimeTest& phi) {
  const std::size_t d = curve.dim();
  const std::size_t nodes = curve.snapshots.size();
  std::vector<double> g(d), bv(d);
  std::vector<double> integrand(nodes);
  for (std::size_t k = 0; k < nodes; ++k) {
    const double t = curve.grid.time(k);
    const ParticleMeasure& nu = curve.snapshots[k];
    double s = 0.0;
    for (std::size_t i = 0; i < nu.size(); ++i) {
      auto x = nu.point(i);
      phi.grad(t, x, g);
      b.value(t, x, bv);
      double adv = 0.0;
      for (std::size_t j = 0; j < d; ++j) adv += bv[j] * g[j];
      s += nu.weight(i) * (phi.dt(t, x) + adv + w.value(t, x) * phi.value(t, x));
    }
    integrand[k] = s;
  }
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < nodes; ++k) {
    integral += 0.5 * (curve.grid.time(k + 1) - curve.grid.time(k)) * (integrand[k] + integrand[k + 1]);
  }
  const double T = curve.grid.t_end();
  auto phi0 = [&](ConstPoint x) { return phi.value(0.0, x); };
  auto phiT = [&](ConstPoint x) { return phi.value(T, x); };
  return integral + pair(mu0, phi0) - pair(curve.snapshots.back(), phiT);
}

// Sampled sup over a box and over the grid nodes up to and including node k.
struct RunningSup {
  std::vector<double> values;  // one per node, nondecreasing
};

namespace detail {

template <class F>
RunningSup running_sup(const TimeGrid& grid, F&& per_node) {
  RunningSup out;
  double best = 0.0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    best = std::max(best, per_node(grid.time(k)));
    out.values.push_back(best);
  }
  return out;
}

inline double vector_sup(const TimeVectorField& b, double t, const BoxGrid& box) {
  return sampled_sup_norm(box, at_time(b, t));
}

inline double jacobian_sup(const TimeVectorField& b, double t, const BoxGrid& box) {
  return sampled_sup_jacobian(box, at_time(b, t));
}

}  // namespace detail

struct FlowStabilityReport {
  std::vector<double> lhs;  // |X_b(t_k, x) - X_bbar(t_k, x)|
  std::vector<double> rhs;  // exp(t C_t) int_0^t ||b - bbar||_inf ds
  double margin = 0.0;      // min_k rhs - lhs
  std::size_t sampling_points = 0;
};

inline FlowStabilityReport flow_stability_gap(const TimeVectorField& b, const TimeVectorField& bbar, ConstPoint x,
                                              const TimeGrid& grid, const BoxGrid& box) {
  box.validate();
  FlowStabilityReport out;
  out.sampling_points = box.size();
  const Trajectory X = integrate_flow(b, x, grid);
  const Trajectory Y = integrate_flow(bbar, x, grid);
  const std::size_t d = b.dim;
  TimeVectorField diff{d, [&](double t, ConstPoint p, MutPoint o) {
                         std::vector<double> tmp(d);
                         b.value(t, p, o);
                         bbar.value(t, p, tmp);
                         for (std::size_t i = 0; i < d; ++i) o[i] -= tmp[i];
                       },
                       {}};
  std::vector<double> gap;
  for (std::size_t k = 0; k < grid.nodes(); ++k) gap.push_back(detail::vector_sup(diff, grid.time(k), box));
  const RunningSup cb = detail::running_sup(grid, [&](double t) { return detail::jacobian_sup(b, t, box); });
  const RunningSup cbb = detail::running_sup(grid, [&](double t) { return detail::jacobian_sup(bbar, t, box); });
  double integral = 0.0;
  out.margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    if (k > 0) integral += 0.5 * (grid.time(k) - grid.time(k - 1)) * (gap[k - 1] + gap[k]);
    const double t = grid.time(k);
    const double Ct = std::min(cb.values[k], cbb.values[k]);
    out.lhs.push_back(euclidean_distance(X.at(k), Y.at(k)));
    out.rhs.push_back(std::exp(t * Ct) * integral);
    out.margin = std::min(out.margin, out.rhs.back() - out.lhs.back());
  }
  return out;
}

struct FlowSensitivityReport {
  Trajectory fd;               // (X_{h+lambda} - X_h) / lambda
  std::vector<double> bound;   // t ||b1||_inf exp(C_h t)
  double max_ratio = 0.0;      // max_k |fd_k| / bound_k over nodes with bound_k > 0
  std::size_t sampling_points = 0;
};

inline FlowSensitivityReport flow_sensitivity_fd(const TimeVectorField& b0, const TimeVectorField& b1, double h,
                                                 double lambda, ConstPoint x, const TimeGrid& grid,
                                                 const BoxGrid& box) {
  if (lambda == 0.0) throw Error(Errc::invalid_argument, "lambda must be nonzero");
  box.validate();
  const std::size_t d = b0.dim;
  auto family = [&](double s) {
    TimeVectorField f;
    f.dim = d;
    f.value = [&b0, &b1, s, d](double t, ConstPoint p, MutPoint o) {
      std::vector<double> tmp(d);
      b0.value(t, p, o);
      b1.value(t, p, tmp);
      for (std::size_t i = 0; i < d; ++i) o[i] += s * tmp[i];
    };
    return f;
  };
  const Trajectory Xh = integrate_flow(family(h), x, grid);
  const Trajectory Xl = integrate_flow(family(h + lambda), x, grid);
  FlowSensitivityReport out;
  out.sampling_points = box.size();
  out.fd.dim = d;
  out.fd.points.resize(Xh.points.size());
  for (std::size_t i = 0; i < Xh.points.size(); ++i) out.fd.points[i] = (Xl.points[i] - Xh.points[i]) / lambda;
  const RunningSup s1 = detail::running_sup(grid, [&](double t) { return detail::vector_sup(b1, t, box); });
  const RunningSup j0 = detail::running_sup(grid, [&](double t) { return detail::jacobian_sup(b0, t, box); });
  const RunningSup j1 = detail::running_sup(grid, [&](double t) { return detail::jacobian_sup(b1, t, box); });
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    const double Ch = j0.values[k] + std::abs(h) * j1.values[k];
    out.bound.push_back(t * s1.values[k] * std::exp(Ch * t));
    const double fd = norm2(out.fd.at(k));
    if (out.bound.back() > 0.0) out.max_ratio = std::max(out.max_ratio, fd / out.bound.back());
  }
  return out;
}

struct TimeLipschitzReport {
  double max_ratio = 0.0;  // max_k flat(nu_{k+1}, nu_k) / dt_k
  double bound = 0.0;      // (C_1 sup||b|| + exp(||w|| T) ||w||) TV(nu_0)
  std::size_t sampling_points = 0;
};

// Bounding box of every snapshot of a curve.
inline BoxGrid curve_box(const MeasureCurve& curve, double pad, std::size_t points) {
  BoxGrid box = bounding_grid(curve.snapshots.front(), pad, points);
  for (const auto& s : curve.snapshots) {
    BoxGrid b = bounding_grid(s, pad, points);
    for (std::size_t k = 0; k < box.dim(); ++k) {
      box.lower[k] = std::min(box.lower[k], b.lower[k]);
      box.upper[k] = std::max(box.upper[k], b.upper[k]);
    }
  }
  return box;
}

// The sampled sup norms are taken over `box`, which should contain every trajectory.
inline TimeLipschitzReport time_lipschitz_check(const MeasureCurve& curve, const TimeVectorField& b,
                                                const TimeScalarField& w, const BoxGrid& box) {
  box.validate();
  TimeLipschitzReport out;
  out.sampling_points = box.size();
  const TimeGrid& grid = curve.grid;
  for (std::size_t k = 0; k + 1 < curve.snapshots.size(); ++k) {
    const double dt = grid.time(k + 1) - grid.time(k);
    out.max_ratio = std::max(out.max_ratio, flat_distance(curve.snapshots[k + 1], curve.snapshots[k]) / dt);
  }
  double bsup = 0.0, wsup = 0.0, wplus = 0.0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    bsup = std::max(bsup, detail::vector_sup(b, t, box));
    const auto wt = at_time(w, t);
    wsup = std::max(wsup, sampled_sup(box, wt));
    wplus = std::max(wplus, sampled_sup(box, [&](ConstPoint x) { return std::max(0.0, wt(x)); }));
  }
  const double T = grid.t_end();
  const double C1 = std::exp(wplus * (T + 1.0));
  out.bound = (C1 * bsup + std::exp(wsup * T) * wsup) * total_variation(curve.snapshots.front());
  return out;
}

}  // namespace measure_flow
