#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "measure_flow/curve.hpp"
#include "measure_flow/error.hpp"
#include "measure_flow/kernels.hpp"
#include "measure_flow/nonlinear_solver.hpp"

namespace measure_flow {

// (mu^{h+lambda}_t - mu^h_t) / lambda at every node, formed particle by particle.
struct QuotientCurve {
  double h = 0.0;
  double lambda = 0.0;
  MeasureCurve curve;
};

struct SensitivityOptions {
  WeightFunction omega = unit_weight();
  DistanceOptions distance{CurveNorm::z_upper, 0.5};
  FixedPointOptions solver{1e-11, 80, {}, false, nullptr};
};

// Solves the perturbed problem at parameter h. The unperturbed solution, when given, is the
// starting curve of the scheme.
inline MeasureCurve solve_at(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid, double h,
                             const SensitivityOptions& opt, const MeasureCurve* base = nullptr) {
  if (base != nullptr && model.perturbation_is_zero()) return *base;
  FixedPointOptions fp = opt.solver;
  fp.keep_iterates = false;
  if (base != nullptr && h != 0.0) fp.start = base;
  return fixed_point_solve(model.with_h(h), mu0, grid, opt.omega, fp).curve;
}

inline MeasureCurve unperturbed_solution(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid,
                                         const SensitivityOptions& opt) {
  return solve_at(model, mu0, grid, 0.0, opt);
}

namespace detail {

inline void check_parameter(double h) {
  if (!(h > -0.5 && h < 0.5)) throw Error(Errc::h_out_of_range, "parameter " + std::to_string(h) + " outside (-1/2, 1/2)");
}

inline QuotientCurve quotient_from(const MeasureCurve& upper, const MeasureCurve& lower, double h, double lambda) {
  return {h, lambda, combine_curves(1.0 / lambda, upper, -1.0 / lambda, lower)};
}

}  // namespace detail

inline QuotientCurve fd_quotient(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid, double h,
                                 double lambda, const SensitivityOptions& opt = {}, const MeasureCurve* base = nullptr) {
  if (lambda == 0.0 || !std::isfinite(lambda)) throw Error(Errc::invalid_argument, "increment must be nonzero");
  detail::check_parameter(h);
  detail::check_parameter(h + lambda);
  MeasureCurve own_base;
  if (base == nullptr) {
    own_base = unperturbed_solution(model, mu0, grid, opt);
    base = &own_base;
  }
  const MeasureCurve at_h = h == 0.0 ? *base : solve_at(model, mu0, grid, h, opt, base);
  const MeasureCurve shifted = solve_at(model, mu0, grid, h + lambda, opt, base);
  return detail::quotient_from(shifted, at_h, h, lambda);
}

// 2 q_{lambda/2} - q_lambda removes the first-order term of a smooth quotient.
inline MeasureCurve richardson(const QuotientCurve& q, const QuotientCurve& q_half) {
  return combine_curves(2.0, q_half.curve, -1.0, q.curve);
}

// ---------------------------------------------------------------------------------------

struct CauchyTable {
  std::vector<double> lambdas;
  std::vector<std::vector<double>> pairwise;  // symmetric, zero diagonal
  std::vector<double> successive;             // d(q_{lambda_i}, q_{lambda_{i+1}})
  double fitted_order = 0.0;                  // slope of log successive vs log lambda_i
};

inline std::vector<double> halving_ladder(double first = 1e-1, std::size_t rungs = 8) {
  std::vector<double> out;
  for (std::size_t i = 0; i < rungs; ++i) out.push_back(first * std::pow(0.5, static_cast<double>(i)));
  return out;
}

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0, n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    n += 1;
  }
  if (n < 2) return 0.0;
  const double den = n * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (n * sxy - sx * sy) / den;
}

inline CauchyTable cauchy_diagnostic(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid, double h,
                                     const std::vector<double>& lambdas, const SensitivityOptions& opt = {},
                                     bool full_matrix = true) {
  if (lambdas.size() < 3) throw Error(Errc::invalid_argument, "Cauchy diagnostic needs at least 3 increments");
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    if (!(lambdas[i] > 0.0)) throw Error(Errc::invalid_argument, "increments must be positive");
    if (i > 0 && !(lambdas[i] < lambdas[i - 1])) throw Error(Errc::invalid_argument, "increments must decrease strictly");
  }
  const MeasureCurve base = unperturbed_solution(model, mu0, grid, opt);
  const MeasureCurve at_h = h == 0.0 ? base : solve_at(model, mu0, grid, h, opt, &base);
  std::vector<QuotientCurve> q;
  for (double lam : lambdas) {
    detail::check_parameter(h + lam);
    q.push_back(detail::quotient_from(solve_at(model, mu0, grid, h + lam, opt, &base), at_h, h, lam));
  }
  CauchyTable out;
  out.lambdas = lambdas;
  const std::size_t n = lambdas.size();
  out.pairwise.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (!full_matrix && j != i + 1) continue;
      const double d = weighted_curve_distance(q[i].curve, q[j].curve, opt.omega, opt.distance);
      out.pairwise[i][j] = out.pairwise[j][i] = d;
    }
  }
  for (std::size_t i = 0; i + 1 < n; ++i) out.successive.push_back(out.pairwise[i][i + 1]);
  out.fitted_order = loglog_slope(std::vector<double>(lambdas.begin(), lambdas.end() - 1), out.successive);
  return out;
}

// ---------------------------------------------------------------------------------------

struct DerivativeEstimate {
  QuotientCurve estimate;  // q_{lambda0 / 2}
  double error_bracket = 0.0;  // weighted d(q_{lambda0}, q_{lambda0 / 2})
};

// The limit lives in the dual of C^{1+alpha}, not among measures; only the quotient
// approximant and its pairings are exposed.
inline DerivativeEstimate derivative_estimate(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid,
                                              double h, double lambda0, const SensitivityOptions& opt = {},
                                              const MeasureCurve* base = nullptr) {
  if (!(std::abs(lambda0) > 0.0) || lambda0 / 2 == 0.0) throw Error(Errc::invalid_argument, "increment too small");
  MeasureCurve own_base;
  if (base == nullptr) {
    own_base = unperturbed_solution(model, mu0, grid, opt);
    base = &own_base;
  }
  DerivativeEstimate out;
  const QuotientCurve full = fd_quotient(model, mu0, grid, h, lambda0, opt, base);
  out.estimate = fd_quotient(model, mu0, grid, h, lambda0 / 2, opt, base);
  out.error_bracket = weighted_curve_distance(full.curve, out.estimate.curve, opt.omega, opt.distance);
  return out;
}

// ---------------------------------------------------------------------------------------

struct DecayTable {
  std::vector<double> a;       // a_n = ||nu^{lambda,n+1} - nu^{lambda,n}|| / |lambda|
  std::vector<double> ratios;  // a_{n+1} / a_n where a_n > 0
};

// Runs the perturbed scheme at h + lambda from the solved curve at h and records the scaled
// successive differences of its iterates.
inline DecayTable iterate_quotient_decay(const FieldModel& model, const ParticleMeasure& mu0, const TimeGrid& grid,
                                         double lambda, std::size_t n_max, const SensitivityOptions& opt = {},
                                         double h = 0.0) {
  if (lambda == 0.0) throw Error(Errc::invalid_argument, "increment must be nonzero");
  detail::check_parameter(h);
  detail::check_parameter(h + lambda);
  const MeasureCurve base = unperturbed_solution(model, mu0, grid, opt);
  MeasureCurve current = h == 0.0 ? base : solve_at(model, mu0, grid, h, opt, &base);
  const FieldModel perturbed = model.with_h(h + lambda);
  DecayTable out;
  for (std::size_t n = 0; n <= n_max; ++n) {
    MeasureCurve next = operator_T(current, perturbed, mu0);
    const double a = weighted_curve_distance(next, current, opt.omega, opt.distance) / std::abs(lambda);
    if (!out.a.empty() && out.a.back() > 0.0) out.ratios.push_back(a / out.a.back());
    out.a.push_back(a);
    current = std::move(next);
  }
  return out;
}

// ---------------------------------------------------------------------------------------

struct ContinuityScan {
  std::vector<double> h_values;
  std::vector<double> gaps;  // weighted distance between estimates at adjacent h
  double max_gap = 0.0;
  std::vector<DerivativeEstimate> estimates;
};

inline ContinuityScan derivative_continuity_scan(const FieldModel& model, const ParticleMeasure& mu0,
                                                 const TimeGrid& grid, const std::vector<double>& h_values,
                                                 double lambda0, const SensitivityOptions& opt = {}) {
  if (h_values.size() < 2) throw Error(Errc::invalid_argument, "continuity scan needs at least two parameters");
  for (std::size_t i = 0; i < h_values.size(); ++i) {
    detail::check_parameter(h_values[i]);
    if (i > 0 && !(h_values[i] > h_values[i - 1])) throw Error(Errc::invalid_argument, "parameters must be sorted");
  }
  const MeasureCurve base = unperturbed_solution(model, mu0, grid, opt);
  ContinuityScan out;
  out.h_values = h_values;
  for (double h : h_values) out.estimates.push_back(derivative_estimate(model, mu0, grid, h, lambda0, opt, &base));
  for (std::size_t i = 0; i + 1 < h_values.size(); ++i) {
    const double g = weighted_curve_distance(out.estimates[i].estimate.curve, out.estimates[i + 1].estimate.curve,
                                             opt.omega, opt.distance);
    out.gaps.push_back(g);
    out.max_gap = std::max(out.max_gap, g);
  }
  return out;
}

// <q(t_k), f> at every node.
inline std::vector<double> pair_curve(const MeasureCurve& c, const ScalarFunction& f) {
  std::vector<double> out;
  out.reserve(c.snapshots.size());
  for (const auto& s : c.snapshots) out.push_back(pair(s, f));
  return out;
}

}  // namespace measure_flow
