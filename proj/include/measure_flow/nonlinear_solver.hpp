#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "measure_flow/curve.hpp"
#include "measure_flow/dual_norms.hpp"
#include "measure_flow/error.hpp"
#include "measure_flow/fields.hpp"
#include "measure_flow/kernels.hpp"
#include "measure_flow/linear_solver.hpp"
#include "measure_flow/parallel.hpp"

namespace measure_flow {

enum class WeightKind { exponential, piecewise_exponential, polynomial_exponential, minimum };

// Positive time weight omega(t) for sup_t omega(t) ||f(t)||.
struct WeightFunction {
  WeightKind kind = WeightKind::exponential;
  double rate = 0.0;                  // g for e^{-gt}, C for C / ((1 + t^2) e^{Ct})
  std::vector<double> rates;          // g_n used on [n-1, n); the last one also covers later times
  std::vector<WeightFunction> parts;  // pointwise minimum

  double operator()(double t) const {
    switch (kind) {
      case WeightKind::exponential:
        return std::exp(-rate * t);
      case WeightKind::piecewise_exponential: {
        if (rates.empty()) return 1.0;
        const auto n = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(t))), rates.size() - 1);
        return std::exp(-rates[n] * t);
      }
      case WeightKind::polynomial_exponential:
        return rate / ((1.0 + t * t) * std::exp(rate * t));
      case WeightKind::minimum: {
        double v = std::numeric_limits<double>::infinity();
        for (const auto& p : parts) v = std::min(v, p(t));
        return v;
      }
    }
    return 1.0;
  }

  double max_rate() const {
    switch (kind) {
      case WeightKind::piecewise_exponential:
        return rates.empty() ? 0.0 : *std::max_element(rates.begin(), rates.end());
      case WeightKind::minimum: {
        double g = 0.0;
        for (const auto& p : parts) g = std::max(g, p.max_rate());
        return g;
      }
      default:
        return rate;
    }
  }

  std::string describe() const {
    switch (kind) {
      case WeightKind::exponential:
        return "exp(-" + format_rate(rate) + " t)";
      case WeightKind::piecewise_exponential: {
        std::string s = "piecewise exp, g = [";
        for (std::size_t i = 0; i < rates.size(); ++i) s += (i ? ", " : "") + format_rate(rates[i]);
        return s + "]";
      }
      case WeightKind::polynomial_exponential:
        return format_rate(rate) + " / ((1 + t^2) exp(" + format_rate(rate) + " t))";
      case WeightKind::minimum: {
        std::string s = "min(";
        for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? ", " : "") + parts[i].describe();
        return s + ")";
      }
    }
    return "";
  }

 private:
  static std::string format_rate(double g) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", g);
    return buf;
  }
};

inline WeightFunction exponential_weight(double g) {
  if (!(g >= 0.0) || !std::isfinite(g)) throw Error(Errc::invalid_argument, "weight rate must be finite and >= 0");
  WeightFunction w;
  w.rate = g;
  return w;
}

inline WeightFunction unit_weight() { return exponential_weight(0.0); }

inline WeightFunction piecewise_exponential_weight(std::vector<double> rates) {
  for (double g : rates) {
    if (!(g >= 0.0) || !std::isfinite(g)) throw Error(Errc::invalid_argument, "weight rates must be finite and >= 0");
  }
  WeightFunction w;
  w.kind = WeightKind::piecewise_exponential;
  w.rates = std::move(rates);
  return w;
}

inline WeightFunction polynomial_exponential_weight(double C) {
  if (!(C > 0.0) || !std::isfinite(C)) throw Error(Errc::invalid_argument, "weight constant must be positive");
  WeightFunction w;
  w.kind = WeightKind::polynomial_exponential;
  w.rate = C;
  return w;
}

inline WeightFunction min_weight(std::vector<WeightFunction> parts) {
  if (parts.empty()) throw Error(Errc::invalid_argument, "minimum of no weights");
  WeightFunction w;
  w.kind = WeightKind::minimum;
  w.parts = std::move(parts);
  return w;
}

// min(omega_1, omega_2) with omega_2's constant tied to the largest calibrated rate.
inline WeightFunction combined_weight(const WeightFunction& omega1) {
  const double C = std::max(omega1.max_rate(), 1e-12);
  return min_weight({omega1, polynomial_exponential_weight(C)});
}

inline void require_positive_weight(const WeightFunction& w, const TimeGrid& grid) {
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double v = w(grid.time(k));
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(Errc::invalid_argument, "weight is not positive at t = " + std::to_string(grid.time(k)));
    }
  }
}

// ---------------------------------------------------------------------------------------
// Curve distances

enum class CurveNorm { flat, z_upper, tv, pairing };

inline const char* curve_norm_name(CurveNorm n) {
  switch (n) {
    case CurveNorm::flat: return "flat";
    case CurveNorm::z_upper: return "z_upper";
    case CurveNorm::tv: return "tv";
    case CurveNorm::pairing: return "pairing";
  }
  return "?";
}

inline CurveNorm parse_curve_norm(const std::string& s) {
  if (s == "flat") return CurveNorm::flat;
  if (s == "z_upper") return CurveNorm::z_upper;
  if (s == "tv") return CurveNorm::tv;
  if (s == "pairing") return CurveNorm::pairing;
  throw Error(Errc::config_error, "unknown norm `" + s + "` (valid: flat, z_upper, tv, pairing)");
}

struct DistanceOptions {
  CurveNorm norm = CurveNorm::flat;
  double alpha = 0.5;
};

// Lower bound of the dual C^{1+alpha} norm from a fixed lattice of Gaussian bumps laid over
// the support of mu. Cheap and deterministic; used where only relative sizes matter.
inline double pairing_norm(const ParticleMeasure& raw, double alpha) {
  const ParticleMeasure mu = compact(raw);
  if (mu.empty()) return 0.0;
  const std::size_t d = mu.dim();
  const std::size_t per_axis = d == 1 ? 33 : (d == 2 ? 9 : 5);
  const BoxGrid box = bounding_grid(mu, 0.5, per_axis);
  static constexpr double kWidths[] = {0.05, 0.1, 0.2, 0.4, 0.8, 1.6, 3.2};
  std::vector<double> c(d);
  double best = 0.0;
  for (std::size_t a = 0; a < box.size(); ++a) {
    box.node(a, c);
    for (double width : kWidths) {
      BumpAtom atom{c, width, 1.0};
      best = std::max(best, detail::atom_ratio(mu, atom, alpha));
    }
  }
  return best;
}

inline double snapshot_norm(const ParticleMeasure& mu, const DistanceOptions& opt) {
  switch (opt.norm) {
    case CurveNorm::flat: return flat_norm(mu).value;
    case CurveNorm::z_upper: return z_upper_norm(mu, opt.alpha);
    case CurveNorm::tv: return total_variation(compact(mu));
    case CurveNorm::pairing: return pairing_norm(mu, opt.alpha);
  }
  return 0.0;
}

// Per-node omega(t_k) * ||c1(t_k) - c2(t_k)||.
inline std::vector<double> weighted_node_distances(const MeasureCurve& c1, const MeasureCurve& c2,
                                                   const WeightFunction& omega, const DistanceOptions& opt = {}) {
  require_same_grid(c1, c2);
  std::vector<double> out(c1.snapshots.size());
  parallel_for(out.size(), [&](std::size_t k) {
    out[k] = omega(c1.grid.time(k)) * snapshot_norm(difference(c1.snapshots[k], c2.snapshots[k]), opt);
  });
  return out;
}

inline double weighted_curve_distance(const MeasureCurve& c1, const MeasureCurve& c2, const WeightFunction& omega,
                                      const DistanceOptions& opt = {}) {
  const auto per_node = weighted_node_distances(c1, c2, omega, opt);
  return per_node.empty() ? 0.0 : *std::max_element(per_node.begin(), per_node.end());
}

// Same as weighted_curve_distance for a single curve against zero.
inline double weighted_curve_norm(const MeasureCurve& c, const WeightFunction& omega, const DistanceOptions& opt = {}) {
  double best = 0.0;
  std::vector<double> per_node(c.snapshots.size());
  parallel_for(per_node.size(), [&](std::size_t k) {
    per_node[k] = omega(c.grid.time(k)) * snapshot_norm(c.snapshots[k], opt);
  });
  for (double v : per_node) best = std::max(best, v);
  return best;
}

// ---------------------------------------------------------------------------------------
// Operators B, S, T

// Coefficients built from the snapshots of a curve. Between nodes the two neighbouring
// coefficient sets are blended linearly in t.
struct CurveCoefficients {
  TimeGrid grid;
  std::shared_ptr<const std::vector<Coefficients>> per_node;
  TimeVectorField b;
  TimeScalarField w;
};

namespace detail {

// Left node index and blend factor for time t.
inline std::pair<std::size_t, double> locate(const TimeGrid& grid, double t) {
  const std::size_t steps = grid.steps();
  const double s = std::clamp(t / grid.dt(), 0.0, static_cast<double>(steps));
  std::size_t k = std::min(static_cast<std::size_t>(s), steps - 1);
  double theta = std::clamp((t - grid.time(k)) / (grid.time(k + 1) - grid.time(k)), 0.0, 1.0);
  return {k, theta};
}

}  // namespace detail

inline CurveCoefficients operator_B(const MeasureCurve& curve, const FieldModel& model) {
  if (curve.snapshots.size() != curve.grid.nodes()) throw Error(Errc::grid_mismatch, "curve does not cover its grid");
  if (curve.dim() != model.dim()) throw Error(Errc::dim_mismatch, "curve and model dimensions differ");
  auto nodes = std::make_shared<std::vector<Coefficients>>(curve.snapshots.size());
  parallel_for(nodes->size(), [&](std::size_t k) { (*nodes)[k] = perturbed_coefficients(model, curve.snapshots[k]); });

  CurveCoefficients out;
  out.grid = curve.grid;
  out.per_node = nodes;
  const std::size_t d = model.dim();
  const TimeGrid grid = curve.grid;
  out.b.dim = d;
  out.b.value = [nodes, grid, d](double t, ConstPoint x, MutPoint o) {
    auto [k, theta] = detail::locate(grid, t);
    if (theta == 0.0) return (*nodes)[k].b.value(x, o);
    if (theta == 1.0) return (*nodes)[k + 1].b.value(x, o);
    std::vector<double> tmp(d);
    (*nodes)[k].b.value(x, o);
    (*nodes)[k + 1].b.value(x, tmp);
    for (std::size_t i = 0; i < d; ++i) o[i] = (1.0 - theta) * o[i] + theta * tmp[i];
  };
  out.b.jacobian = [nodes, grid, d](double t, ConstPoint x, MutPoint J) {
    auto [k, theta] = detail::locate(grid, t);
    if (theta == 0.0) return (*nodes)[k].b.jacobian(x, J);
    if (theta == 1.0) return (*nodes)[k + 1].b.jacobian(x, J);
    std::vector<double> tmp(d * d);
    (*nodes)[k].b.jacobian(x, J);
    (*nodes)[k + 1].b.jacobian(x, tmp);
    for (std::size_t i = 0; i < d * d; ++i) J[i] = (1.0 - theta) * J[i] + theta * tmp[i];
  };
  out.w.dim = d;
  out.w.value = [nodes, grid](double t, ConstPoint x) {
    auto [k, theta] = detail::locate(grid, t);
    if (theta == 0.0) return (*nodes)[k].w.value(x);
    if (theta == 1.0) return (*nodes)[k + 1].w.value(x);
    return (1.0 - theta) * (*nodes)[k].w.value(x) + theta * (*nodes)[k + 1].w.value(x);
  };
  return out;
}

inline MeasureCurve operator_S(const TimeVectorField& b, const TimeScalarField& w, const ParticleMeasure& mu0,
                               const TimeGrid& grid) {
  return solve_linear(b, w, mu0, grid);
}

// T_h = S o B_h with the model's current h.
inline MeasureCurve operator_T(const MeasureCurve& curve, const FieldModel& model, const ParticleMeasure& mu0) {
  const CurveCoefficients c = operator_B(curve, model);
  return operator_S(c.b, c.w, mu0, curve.grid);
}

// ---------------------------------------------------------------------------------------
// Fixed-point iteration

struct SchemeTrace {
  std::vector<double> distances;  // ||nu^{n+1} - nu^n|| for n = 0, 1, ...
  std::vector<double> ratios;
  bool converged = false;
  std::size_t n_iter = 0;

  void push(double d) {
    if (!distances.empty() && distances.back() > 0.0) ratios.push_back(d / distances.back());
    distances.push_back(d);
    n_iter = distances.size();
  }
};

class NoConvergenceError : public Error {
 public:
  NoConvergenceError(std::size_t max_iter, SchemeTrace trace)
      : Error(Errc::no_convergence, "no convergence after " + std::to_string(max_iter) + " iterations (last distance " +
                                        (trace.distances.empty() ? std::string("n/a") : format_distance(trace.distances.back())) +
                                        ")"),
        trace_(std::move(trace)) {}

  const SchemeTrace& trace() const { return trace_; }

 private:
  static std::string format_distance(double d) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", d);
    return buf;
  }
  SchemeTrace trace_;
};

struct FixedPointOptions {
  double tol = 1e-8;
  std::size_t max_iter = 60;
  DistanceOptions distance;
  bool keep_iterates = false;
  const MeasureCurve* start = nullptr;  // overrides the default starting curve
};

struct FixedPointResult {
  MeasureCurve curve;
  SchemeTrace trace;
  std::vector<MeasureCurve> iterates;  // nu^0, nu^1, ... when requested
};

// Iterates nu^{n+1} = T_h(nu^n). The start is the constant curve mu0 for h = 0 and the
// solved unperturbed curve for h != 0.
inline FixedPointResult fixed_point_solve(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid,
                                          const WeightFunction& omega, const FixedPointOptions& opt = {}) {
  if (!(opt.tol > 0.0)) throw Error(Errc::invalid_argument, "tolerance must be positive");
  if (mu0.dim() != model.dim()) throw Error(Errc::dim_mismatch, "initial measure and model dimensions differ");
  require_positive_weight(omega, grid);

  MeasureCurve current;
  if (opt.start != nullptr) {
    if (!(opt.start->grid == grid)) throw Error(Errc::grid_mismatch, "starting curve lives on another grid");
    current = *opt.start;
  } else if (model.h() == 0.0) {
    current = MeasureCurve::constant(grid, mu0);
  } else {
    FixedPointOptions base = opt;
    base.keep_iterates = false;
    current = fixed_point_solve(model.with_h(0.0), mu0, grid, omega, base).curve;
  }

  FixedPointResult out;
  if (opt.keep_iterates) out.iterates.push_back(current);
  for (std::size_t n = 0; n < opt.max_iter; ++n) {
    MeasureCurve next = operator_T(current, model, mu0);
    const double dist = weighted_curve_distance(next, current, omega, opt.distance);
    out.trace.push(dist);
    current = std::move(next);
    if (opt.keep_iterates) out.iterates.push_back(current);
    if (dist <= opt.tol) {
      out.trace.converged = true;
      out.curve = std::move(current);
      return out;
    }
  }
  throw NoConvergenceError(opt.max_iter, std::move(out.trace));
}

struct ContractionFit {
  double c_hat = 0.0;
  double r_squared = 0.0;
};

// Least-squares fit of log(distance_n) = a + n log(c) over the leading positive distances.
inline ContractionFit contraction_ratio(const std::vector<double>& distances) {
  std::vector<double> ys;
  for (double d : distances) {
    if (!(d > 0.0)) break;
    ys.push_back(std::log(d));
  }
  if (ys.size() < 3) throw Error(Errc::too_few_iterations, "need at least 3 positive distances for a geometric fit");
  const double n = static_cast<double>(ys.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += ys[i];
    sxx += x * x;
    sxy += x * ys[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double icpt = (sy - slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double f = icpt + slope * static_cast<double>(i);
    ss_res += (ys[i] - f) * (ys[i] - f);
    ss_tot += (ys[i] - sy / n) * (ys[i] - sy / n);
  }
  return {std::exp(slope), ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0};
}

inline ContractionFit contraction_ratio(const SchemeTrace& trace) { return contraction_ratio(trace.distances); }

// ---------------------------------------------------------------------------------------
// Weight calibration

struct CalibrationOptions {
  DistanceOptions distance;
  double max_rate = 1e6;
  double min_initial_rate = 0.5;
};

// Rough sup |m| over the region the initial particles occupy.
inline double rate_sup_estimate(const FieldModel& model, const ParticleMeasure& mu0) {
  const Coefficients c = perturbed_coefficients(model, mu0);
  const BoxGrid box = bounding_grid(mu0, 1.0, model.dim() == 1 ? 101 : 21);
  return sampled_sup(box, [&](ConstPoint x) { return std::abs(c.w.value(x)); });
}

// Piecewise-exponential weight with one rate per unit interval. Each rate starts at the
// sup |m| estimate and doubles until two probe iterates of T_h contract by <= c on the
// interval, measured against the weighted first difference on [0, n].
inline WeightFunction calibrate_weight(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid,
                                       double c, const CalibrationOptions& opt = {}) {
  if (!(c > 0.0 && c < 1.0)) throw Error(Errc::invalid_argument, "target contraction must lie in (0, 1)");
  const MeasureCurve nu0 = MeasureCurve::constant(grid, mu0);
  const MeasureCurve nu1 = operator_T(nu0, model, mu0);
  const MeasureCurve nu2 = operator_T(nu1, model, mu0);
  const WeightFunction one = unit_weight();
  const std::vector<double> d1 = weighted_node_distances(nu1, nu0, one, opt.distance);
  const std::vector<double> d2 = weighted_node_distances(nu2, nu1, one, opt.distance);

  const double g0 = std::max(rate_sup_estimate(model, mu0), opt.min_initial_rate);
  const std::size_t intervals = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(grid.t_end() - 1e-9)));
  std::vector<double> rates;
  for (std::size_t n = 0; n < intervals; ++n) {
    const bool last = n + 1 == intervals;
    double g = g0;
    for (;;) {
      std::vector<double> trial = rates;
      trial.push_back(g);
      const WeightFunction w = piecewise_exponential_weight(trial);
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < grid.nodes(); ++k) {
        const double t = grid.time(k);
        const bool before_end = last || t < static_cast<double>(n + 1);
        if (!before_end) break;
        den = std::max(den, w(t) * d1[k]);
        if (t >= static_cast<double>(n)) num = std::max(num, w(t) * d2[k]);
      }
      if (num <= c * den) break;
      g *= 2.0;
      if (g > opt.max_rate) {
        throw Error(Errc::calibration_failure,
                    "weight rate on [" + std::to_string(n) + ", " + std::to_string(n + 1) + ") exceeds the limit");
      }
    }
    rates.push_back(g);
  }
  return piecewise_exponential_weight(std::move(rates));
}

}  // namespace measure_flow
