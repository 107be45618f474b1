#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "measure_flow/config.hpp"
#include "measure_flow/dual_norms.hpp"
#include "measure_flow/io.hpp"
#include "measure_flow/linear_solver.hpp"
#include "measure_flow/nonlinear_solver.hpp"
#include "measure_flow/sensitivity.hpp"

namespace measure_flow {

// Margins below this count as failures.
inline constexpr double kValidationSlack = 1e-9;

// RFC-4180 table; numbers use %.17g.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : width_(header.size()) { add(header); }

  static std::string cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  }

  template <class... T>
  void row(const T&... cells) {
    add({cell(cells)...});
  }

  const std::string& text() const { return text_; }

 private:
  void add(const std::vector<std::string>& cells) {
    if (cells.size() != width_) throw Error(Errc::invalid_argument, "CSV row has the wrong number of cells");
    for (std::size_t i = 0; i < cells.size(); ++i) text_ += (i ? "," : "") + cells[i];
    text_ += "\n";
  }

  std::size_t width_;
  std::string text_;
};

struct RunOutput {
  nlohmann::json summary = nlohmann::json::object();      // flat key/value map
  std::vector<std::pair<std::string, std::string>> files;  // name, contents (CSV)
  int exit_code = 0;
  std::string message;
};

inline void write_outputs(const RunOutput& out, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::io_error, "cannot create output directory " + dir.string());
  for (const auto& [name, text] : out.files) write_text_file((dir / name).string(), text);
  write_text_file((dir / "summary.json").string(), out.summary.dump(2) + "\n");
}

// ---------------------------------------------------------------------------------------
// Test functions

// C^2 step: 0 below 0, 1 above 1.
inline double smooth_step(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

// 1 on [lower, upper], 0 outside the box widened by `width`, C^2 in between.
inline ScalarFunction smooth_indicator(std::vector<double> lower, std::vector<double> upper, double width) {
  return [lower = std::move(lower), upper = std::move(upper), width](ConstPoint x) {
    double v = 1.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      v *= smooth_step((x[k] - lower[k] + width) / width) * smooth_step((upper[k] + width - x[k]) / width);
    }
    return v;
  };
}

// cos(t) exp(-|x - c|^2 / (2 s^2)).
inline SpaceTimeTest gaussian_space_time_test(std::vector<double> c, double s) {
  auto g = [c, s](ConstPoint x) {
    double r2 = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) r2 += (x[k] - c[k]) * (x[k] - c[k]);
    return std::exp(-0.5 * r2 / (s * s));
  };
  SpaceTimeTest phi;
  phi.dim = c.size();
  phi.value = [g](double t, ConstPoint x) { return std::cos(t) * g(x); };
  phi.dt = [g](double t, ConstPoint x) { return -std::sin(t) * g(x); };
  phi.grad = [g, c, s](double t, ConstPoint x, MutPoint out) {
    const double v = std::cos(t) * g(x);
    for (std::size_t k = 0; k < x.size(); ++k) out[k] = -v * (x[k] - c[k]) / (s * s);
  };
  return phi;
}

namespace detail {

inline std::size_t box_points(std::size_t dim) { return dim == 1 ? 401 : dim == 2 ? 61 : 11; }

// Test functions around the initial support: centred, and shifted by one width each way.
inline std::vector<SpaceTimeTest> residual_tests(const ParticleMeasure& mu0) {
  const BoxGrid box = bounding_grid(mu0, 0.0, 1);
  std::vector<double> c(mu0.dim());
  double s = 1.0;
  for (std::size_t k = 0; k < mu0.dim(); ++k) {
    c[k] = 0.5 * (box.lower[k] + box.upper[k]);
    s = std::max(s, 0.5 * (box.upper[k] - box.lower[k]));
  }
  std::vector<SpaceTimeTest> out;
  for (double shift : {0.0, -0.5, 0.5}) {
    std::vector<double> ck = c;
    ck[0] += shift * s;
    out.push_back(gaussian_space_time_test(ck, s));
  }
  return out;
}

inline FixedPointOptions solver_options(const ScenarioConfig& c) {
  FixedPointOptions fp;
  fp.tol = c.solver.tol;
  fp.max_iter = c.solver.max_iter;
  fp.distance = {c.solver.norm, c.alpha};
  return fp;
}

inline SensitivityOptions sensitivity_options(const ScenarioConfig& c, const WeightFunction& omega, CurveNorm norm) {
  SensitivityOptions opt;
  opt.omega = omega;
  opt.distance = {norm, c.alpha};
  opt.solver = solver_options(c);
  return opt;
}

inline std::string trace_csv(const SchemeTrace& trace) {
  CsvTable t({"iter", "distance", "ratio"});
  for (std::size_t n = 0; n < trace.distances.size(); ++n) {
    const double r = n > 0 && trace.distances[n - 1] > 0.0 ? trace.distances[n] / trace.distances[n - 1]
                                                           : std::numeric_limits<double>::quiet_NaN();
    t.row(n + 1, trace.distances[n], r);
  }
  return t.text();
}

inline void put_contraction(nlohmann::json& s, const SchemeTrace& trace) {
  s["n_iter"] = trace.n_iter;
  s["converged"] = trace.converged;
  s["final_distance"] = trace.distances.empty() ? 0.0 : trace.distances.back();
  try {
    const ContractionFit fit = contraction_ratio(trace);
    s["c_hat"] = fit.c_hat;
    s["r_squared"] = fit.r_squared;
  } catch (const Error& e) {
    if (e.code() != Errc::too_few_iterations) throw;
  }
}

struct Solved {
  WeightFunction omega;
  FixedPointResult result;
};

inline Solved solve_configured(const ScenarioConfig& c, const FieldModel& model) {
  Solved s;
  s.omega = weight_from_spec(c, model);
  s.result = fixed_point_solve(model, c.initial_measure, c.grid, s.omega, solver_options(c));
  return s;
}

inline std::string cauchy_csv(const CauchyTable& t) {
  CsvTable out({"lambda_i", "lambda_j", "distance"});
  for (std::size_t i = 0; i < t.lambdas.size(); ++i) {
    for (std::size_t j = i + 1; j < t.lambdas.size(); ++j) out.row(t.lambdas[i], t.lambdas[j], t.pairwise[i][j]);
  }
  return out.text();
}

inline bool decreasing(const std::vector<double>& v) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    if (!(v[i + 1] < v[i])) return false;
  }
  return true;
}

}  // namespace detail

// ---------------------------------------------------------------------------------------
// Norms

struct NormRow {
  double flat = 0.0, z_lower = 0.0, z_upper = 0.0, tv = 0.0;
};

inline NormRow measure_norms(const ParticleMeasure& mu, double alpha) {
  NormRow r;
  const ParticleMeasure m = compact(mu);
  r.tv = total_variation(m);
  if (m.empty() || r.tv == 0.0) return r;
  const ZNormBracket z = z_norm_bracket(m, alpha, BumpDictionary::for_measure(m, alpha));
  r.flat = z.flat;
  r.z_lower = z.lower;
  r.z_upper = z.upper;
  return r;
}

inline std::string norms_csv(const NormRow& r) {
  CsvTable t({"flat", "z_lower", "z_upper", "tv"});
  t.row(r.flat, r.z_lower, r.z_upper, r.tv);
  return t.text();
}

// ---------------------------------------------------------------------------------------
// Experiments

inline RunOutput run_solve(const ScenarioConfig& c) {
  RunOutput out;
  auto& s = out.summary;
  const FieldModel& model = c.model;
  const detail::Solved solved = detail::solve_configured(c, model);
  const MeasureCurve& curve = solved.result.curve;
  const ParticleMeasure& mu0 = c.initial_measure;
  detail::put_contraction(s, solved.result.trace);
  s["weight"] = solved.omega.describe();

  const CurveCoefficients coef = operator_B(curve, model);
  const MeasureCurve image = operator_S(coef.b, coef.w, mu0, c.grid);
  s["fixed_point_defect"] = weighted_curve_distance(image, curve, solved.omega, {c.solver.norm, c.alpha});

  double residual = 0.0;
  for (const auto& phi : detail::residual_tests(mu0)) {
    residual = std::max(residual, std::abs(weak_residual(curve, coef.b, coef.w, mu0, phi)));
  }
  s["weak_residual"] = residual;

  const ParticleMeasure& last = curve.snapshots.back();
  s["tv_initial"] = total_variation(mu0);
  s["tv_final"] = total_variation(last);
  s["mass_final"] = total_mass(last);
  const ParticleMeasure moved = compact(difference(last, mu0));
  s["displacement_flat"] = moved.empty() ? 0.0 : flat_norm(moved).value;
  s["displacement_z_upper"] = z_upper_norm(moved, c.alpha);

  if (c.experiment.exact_velocity) {
    const auto& v = *c.experiment.exact_velocity;
    double err = 0.0;
    for (std::size_t k = 0; k < curve.snapshots.size(); ++k) {
      const double t = c.grid.time(k);
      const ParticleMeasure& mu = curve.snapshots[k];
      for (std::size_t i = 0; i < mu.size(); ++i) {
        for (std::size_t j = 0; j < c.dim; ++j) err = std::max(err, std::abs(mu.point(i)[j] - mu0.point(i)[j] - v[j] * t));
      }
    }
    s["position_error"] = err;
  }
  out.files.emplace_back("curve.csv", write_curve_csv_string(curve));
  out.files.emplace_back("trace.csv", detail::trace_csv(solved.result.trace));
  return out;
}

inline RunOutput run_sensitivity(const ScenarioConfig& c) {
  RunOutput out;
  auto& s = out.summary;
  const ExperimentSpec& e = c.experiment;
  const ParticleMeasure& mu0 = c.initial_measure;
  const FieldModel model = c.model.with_h(0.0);
  const detail::Solved base = detail::solve_configured(c, model);
  detail::put_contraction(s, base.result.trace);
  s["weight"] = base.omega.describe();
  const SensitivityOptions opt = detail::sensitivity_options(c, base.omega, e.norm);
  s["norm"] = curve_norm_name(e.norm);
  s["h"] = e.h;

  const CauchyTable table = cauchy_diagnostic(model, mu0, c.grid, e.h, halving_ladder(e.lambda0, e.rungs), opt);
  s["cauchy_order"] = table.fitted_order;
  s["cauchy_monotone"] = detail::decreasing(table.successive);
  s["cauchy_last"] = table.successive.back();
  out.files.emplace_back("cauchy.csv", detail::cauchy_csv(table));

  const MeasureCurve& curve0 = base.result.curve;
  const DerivativeEstimate est = derivative_estimate(model, mu0, c.grid, e.h, e.derivative_lambda, opt, &curve0);
  s["derivative_lambda"] = e.derivative_lambda;
  s["derivative_error_bracket"] = est.error_bracket;
  if (e.pairing) {
    const OuterFunction f = make_outer(e.pairing->first, e.pairing->second);
    const std::vector<double> p = pair_curve(est.estimate.curve, [f](ConstPoint x) { return f(x[0]); });
    CsvTable t({"t", "pairing"});
    for (std::size_t k = 0; k < p.size(); ++k) t.row(c.grid.time(k), p[k]);
    out.files.emplace_back("derivative.csv", t.text());
    s["pairing_final"] = p.back();
  }

  if (e.decay_steps > 0) {
    // measured in the solver norm so the ratios compare with c_hat
    const SensitivityOptions dopt = detail::sensitivity_options(c, base.omega, c.solver.norm);
    const DecayTable d = iterate_quotient_decay(model, mu0, c.grid, e.decay_lambda, e.decay_steps, dopt, e.h);
    CsvTable t({"n", "a_n", "ratio"});
    double worst = 0.0;
    for (std::size_t n = 0; n < d.a.size(); ++n) {
      const double r = n > 0 && d.a[n - 1] > 0.0 ? d.a[n] / d.a[n - 1] : std::numeric_limits<double>::quiet_NaN();
      if (n > 0 && std::isfinite(r)) worst = std::max(worst, r);
      t.row(n, d.a[n], r);
    }
    s["decay_max_ratio"] = worst;
    out.files.emplace_back("decay.csv", t.text());
  }

  if (!e.continuity_h.empty()) {
    const ContinuityScan scan = derivative_continuity_scan(model, mu0, c.grid, e.continuity_h, e.derivative_lambda, opt);
    CsvTable t({"h", "gap"});
    for (std::size_t i = 0; i < scan.gaps.size(); ++i) t.row(scan.h_values[i], scan.gaps[i]);
    s["continuity_max_gap"] = scan.max_gap;
    out.files.emplace_back("continuity.csv", t.text());
  }
  return out;
}

// Flat distance between the quotients at +h and -h, and the Cauchy behaviour of the
// quotient ladder in the Z bound and in the flat norm.
inline RunOutput run_counterexample(const ScenarioConfig& c) {
  RunOutput out;
  auto& s = out.summary;
  const ExperimentSpec& e = c.experiment;
  const ParticleMeasure& mu0 = c.initial_measure;
  const FieldModel model = c.model.with_h(0.0);
  const WeightFunction omega = weight_from_spec(c, model);
  const double h = std::abs(e.h);
  if (h == 0.0) throw Error(Errc::config_error, "`experiment.h`: counterexample needs h != 0");
  const SensitivityOptions zopt = detail::sensitivity_options(c, omega, CurveNorm::z_upper);
  const MeasureCurve base = unperturbed_solution(model, mu0, c.grid, zopt);
  const QuotientCurve qp = fd_quotient(model, mu0, c.grid, 0.0, h, zopt, &base);
  const QuotientCurve qm = fd_quotient(model, mu0, c.grid, 0.0, -h, zopt, &base);
  const double T = c.grid.t_end();
  s["h"] = h;
  s["t"] = T;
  s["alpha"] = c.alpha;
  s["flat_gap"] = flat_distance(qp.curve.snapshots.back(), qm.curve.snapshots.back());
  s["flat_gap_bound"] = 2.0 * T * (1.0 - h);

  const std::vector<double> ladder = halving_ladder(e.lambda0, e.rungs);
  const CauchyTable z = cauchy_diagnostic(model, mu0, c.grid, 0.0, ladder, zopt);
  s["z_cauchy_order"] = z.fitted_order;
  s["z_cauchy_monotone"] = detail::decreasing(z.successive);
  s["z_cauchy_last"] = z.successive.back();
  out.files.emplace_back("cauchy.csv", detail::cauchy_csv(z));

  const SensitivityOptions fopt = detail::sensitivity_options(c, omega, CurveNorm::flat);
  const CauchyTable f = cauchy_diagnostic(model, mu0, c.grid, 0.0, ladder, fopt);
  s["flat_cauchy_order"] = f.fitted_order;
  s["flat_cauchy_min"] = *std::min_element(f.successive.begin(), f.successive.end());
  out.files.emplace_back("cauchy_flat.csv", detail::cauchy_csv(f));
  return out;
}

// ---------------------------------------------------------------------------------------
// Validation suite

struct ValidationCheck {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
};

struct ValidationReport {
  std::vector<ValidationCheck> checks;

  bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& k) { return k.margin >= -kValidationSlack; });
  }
};

namespace detail {

// sup of w^+ over the coefficient nodes, sampled on a box and at the particles.
inline double sampled_rate_sup(const CurveCoefficients& coef, const MeasureCurve& curve, const BoxGrid& box) {
  double best = 0.0;
  std::vector<double> x(box.dim());
  for (std::size_t k = 0; k < coef.per_node->size(); ++k) {
    const ScalarField& w = (*coef.per_node)[k].w;
    for (std::size_t i = 0; i < box.size(); ++i) {
      box.node(i, x);
      best = std::max(best, w.value(x));
    }
    const ParticleMeasure& mu = curve.snapshots[k];
    for (std::size_t i = 0; i < mu.size(); ++i) best = std::max(best, w.value(mu.point(i)));
  }
  return best;
}

inline BoxGrid union_box(const BoxGrid& a, const BoxGrid& b) {
  BoxGrid out = a;
  for (std::size_t k = 0; k < a.dim(); ++k) {
    out.lower[k] = std::min(a.lower[k], b.lower[k]);
    out.upper[k] = std::max(a.upper[k], b.upper[k]);
  }
  return out;
}

}  // namespace detail

inline ValidationReport validate_scenario(const ScenarioConfig& c, nlohmann::json* summary = nullptr) {
  ValidationReport rep;
  const FieldModel& model = c.model;
  const ParticleMeasure& mu0 = c.initial_measure;
  const TimeGrid& grid = c.grid;
  const detail::Solved solved = detail::solve_configured(c, model);
  const MeasureCurve& curve = solved.result.curve;
  const CurveCoefficients coef = operator_B(curve, model);
  const std::size_t pts = detail::box_points(c.dim);
  const BoxGrid box = curve_box(curve, 1.0, pts);
  const double tv0 = total_variation(mu0);
  auto add = [&](std::string name, double lhs, double rhs, double margin) {
    rep.checks.push_back({std::move(name), lhs, rhs, margin});
  };

  // TV(nu_t) <= exp(t sup w+) TV(nu_0) for t > 0, relative to TV(nu_0)
  {
    const double S = c.validate.declared_sup_m_plus ? *c.validate.declared_sup_m_plus
                                                    : detail::sampled_rate_sup(coef, curve, box);
    double worst = 0.0;
    for (std::size_t k = 1; k < grid.nodes(); ++k) {
      worst = std::max(worst, total_variation(curve.snapshots[k]) * std::exp(-grid.time(k) * S));
    }
    add("tv_growth", worst, tv0, tv0 > 0.0 ? (tv0 - worst) / tv0 : -worst);
    if (summary) (*summary)["sup_m_plus"] = S;
  }

  // Gronwall bound between the solved coefficients and those frozen at mu0
  {
    const CurveCoefficients frozen = operator_B(MeasureCurve::constant(grid, mu0), model);
    const MeasureCurve frozen_curve = operator_S(frozen.b, frozen.w, mu0, grid);
    const BoxGrid fbox = detail::union_box(box, curve_box(frozen_curve, 1.0, pts));
    double margin = std::numeric_limits<double>::infinity(), lhs = 0.0, rhs = 0.0;
    const std::size_t n = mu0.size();
    const std::size_t probes = std::min<std::size_t>(n, 5);
    for (std::size_t p = 0; p < probes; ++p) {
      const std::size_t i = probes == 1 ? 0 : p * (n - 1) / (probes - 1);
      const FlowStabilityReport r = flow_stability_gap(coef.b, frozen.b, mu0.point(i), grid, fbox);
      for (std::size_t k = 1; k < r.lhs.size(); ++k) {
        if (r.rhs[k] - r.lhs[k] < margin) {
          margin = r.rhs[k] - r.lhs[k];
          lhs = r.lhs[k];
          rhs = r.rhs[k];
        }
      }
    }
    if (!std::isfinite(margin)) margin = 0.0;
    add("flow_stability", lhs, rhs, margin);
  }

  // Weak residual at dt / 2 is at most half the residual at dt.
  {
    const TimeGrid fine(grid.t_end(), grid.dt() / 2);
    const FixedPointResult fr = fixed_point_solve(model, mu0, fine, solved.omega, detail::solver_options(c));
    const CurveCoefficients fc = operator_B(fr.curve, model);
    double r1 = 0.0, r2 = 0.0;
    for (const auto& phi : detail::residual_tests(mu0)) {
      r1 = std::max(r1, std::abs(weak_residual(curve, coef.b, coef.w, mu0, phi)));
      r2 = std::max(r2, std::abs(weak_residual(fr.curve, fc.b, fc.w, mu0, phi)));
    }
    const double floor = 1e-8 * std::max(1.0, tv0) * (1.0 + grid.t_end());
    add("weak_residual", r2, 0.5 * r1 + floor, 0.5 * r1 + floor - r2);
    if (summary) {
      (*summary)["weak_residual"] = r1;
      (*summary)["weak_residual_half_dt"] = r2;
    }
  }

  // Contraction of the scheme and the fixed-point defect
  {
    double c_hat = 0.0;
    try {
      c_hat = contraction_ratio(solved.result.trace).c_hat;
    } catch (const Error& e) {
      if (e.code() != Errc::too_few_iterations) throw;
    }
    add("contraction", c_hat, 1.0, 1.0 - c_hat);
    const MeasureCurve image = operator_S(coef.b, coef.w, mu0, grid);
    const double defect = weighted_curve_distance(image, curve, solved.omega, {c.solver.norm, c.alpha});
    add("fixed_point_defect", defect, 2.0 * c.solver.tol, 2.0 * c.solver.tol - defect);
    if (summary) detail::put_contraction(*summary, solved.result.trace);
  }

  // z_lower <= z_upper <= flat <= tv for the displacement at the middle and the end
  {
    double m1 = std::numeric_limits<double>::infinity(), m2 = m1, m3 = m1;
    ValidationCheck c1{"norm_nesting_z", 0, 0, 0}, c2{"norm_nesting_flat", 0, 0, 0}, c3{"norm_nesting_tv", 0, 0, 0};
    for (std::size_t k : {grid.steps() / 2, grid.steps()}) {
      const ParticleMeasure nu = compact(difference(curve.snapshots[k], mu0));
      ZNormBracket z;
      if (!nu.empty() && total_variation(nu) > 0.0) z = z_norm_bracket(nu, c.alpha, BumpDictionary::for_measure(nu, c.alpha), 20);
      const double tv = total_variation(nu);
      if (z.upper - z.lower < m1) c1 = {c1.name, z.lower, z.upper, m1 = z.upper - z.lower};
      if (z.flat - z.upper < m2) c2 = {c2.name, z.upper, z.flat, m2 = z.flat - z.upper};
      if (tv - z.flat < m3) c3 = {c3.name, z.flat, tv, m3 = tv - z.flat};
    }
    rep.checks.push_back(c1);
    rep.checks.push_back(c2);
    rep.checks.push_back(c3);
  }

  // Lipschitz continuity in time of the solved curve
  {
    const TimeLipschitzReport r = time_lipschitz_check(curve, coef.b, coef.w, box);
    add("time_lipschitz", r.max_ratio, r.bound, r.bound - r.max_ratio * (1.0 - 1e-12));
  }
  return rep;
}

inline RunOutput run_validate(const ScenarioConfig& c) {
  RunOutput out;
  const ValidationReport rep = validate_scenario(c, &out.summary);
  CsvTable t({"check", "lhs", "rhs", "margin", "pass"});
  for (const auto& k : rep.checks) {
    const bool ok = k.margin >= -kValidationSlack;
    t.row(k.name, k.lhs, k.rhs, k.margin, std::string(ok ? "true" : "false"));
    out.summary["margin_" + k.name] = k.margin;
    if (!ok) out.message += (out.message.empty() ? "" : "; ") + k.name + " failed with margin " + format_double(k.margin);
  }
  out.summary["validation_passed"] = rep.passed();
  out.files.emplace_back("validation.csv", t.text());
  out.exit_code = rep.passed() ? 0 : 2;
  return out;
}

// ---------------------------------------------------------------------------------------
// Parameter sweep

struct SweepRow {
  double h = 0.0;
  double J = 0.0;
  double dJ_dh = 0.0;
  bool censored = false;  // exit_time never reached within the horizon
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::size_t best = 0;
};

namespace detail {

inline std::size_t node_of(const TimeGrid& grid, double t) {
  if (t == 0.0) return grid.steps();
  const double s = t / grid.dt();
  const auto k = static_cast<std::size_t>(std::llround(s));
  if (!(t > 0.0) || t > grid.t_end() * (1 + 1e-12) || std::abs(s - static_cast<double>(k)) > 1e-9 * std::max(1.0, s)) {
    throw Error(Errc::config_error, "`experiment.time` must be a grid node in (0, t_end]");
  }
  return k;
}

}  // namespace detail

inline SweepResult parameter_sweep(const ScenarioConfig& c, const WeightFunction& omega) {
  const SweepSpec& sw = c.experiment.sweep;
  const ParticleMeasure& mu0 = c.initial_measure;
  const TimeGrid& grid = c.grid;
  const FieldModel model = c.model.with_h(0.0);
  const SensitivityOptions opt = detail::sensitivity_options(c, omega, c.solver.norm);
  const ScalarFunction chi = smooth_indicator(sw.region_lower, sw.region_upper, sw.ramp_width);
  const MeasureCurve base = unperturbed_solution(model, mu0, grid, opt);
  const std::size_t node = sw.objective == "mass_in_region" ? detail::node_of(grid, sw.time) : 0;

  SweepResult out;
  for (std::size_t i = 0; i < sw.h_count; ++i) {
    SweepRow row;
    row.h = i + 1 == sw.h_count ? sw.h_max : sw.h_min + (sw.h_max - sw.h_min) * static_cast<double>(i) / (sw.h_count - 1);
    const MeasureCurve at_h = row.h == 0.0 ? base : solve_at(model, mu0, grid, row.h, opt, &base);
    const double lam = row.h + sw.lambda < 0.5 ? sw.lambda : -sw.lambda;
    const QuotientCurve q = detail::quotient_from(solve_at(model, mu0, grid, row.h + lam, opt, &base), at_h, row.h, lam);
    const std::vector<double> M = pair_curve(at_h, chi);
    const std::vector<double> dM = pair_curve(q.curve, chi);
    if (sw.objective == "mass_in_region") {
      row.J = M[node];
      row.dJ_dh = dM[node];
    } else {
      // first crossing of threshold * M(0), linear between nodes; dT/dh = -dM/dh / dM/dt there
      const double level = sw.threshold * M[0];
      row.J = grid.t_end();
      row.censored = true;
      for (std::size_t k = 0; k + 1 < M.size(); ++k) {
        if (M[k] > level && M[k + 1] <= level) {
          const double dt = grid.time(k + 1) - grid.time(k);
          const double theta = (M[k] - level) / (M[k] - M[k + 1]);
          row.J = grid.time(k) + theta * dt;
          const double dMdt = (M[k + 1] - M[k]) / dt;
          const double dMdh = (1.0 - theta) * dM[k] + theta * dM[k + 1];
          row.dJ_dh = -dMdh / dMdt;
          row.censored = false;
          break;
        }
      }
    }
    out.rows.push_back(row);
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    if (out.rows[i].J < out.rows[out.best].J) out.best = i;
  }
  return out;
}

inline RunOutput run_sweep(const ScenarioConfig& c) {
  if (c.experiment.kind != "sweep") throw Error(Errc::config_error, "`experiment.kind` must be \"sweep\" for a sweep");
  RunOutput out;
  auto& s = out.summary;
  const WeightFunction omega = weight_from_spec(c, c.model.with_h(0.0));
  const SweepResult r = parameter_sweep(c, omega);
  CsvTable t({"h", "J", "dJ_dh", "censored"});
  std::size_t censored = 0;
  for (const auto& row : r.rows) {
    t.row(row.h, row.J, row.dJ_dh, std::string(row.censored ? "true" : "false"));
    censored += row.censored;
  }
  const SweepRow& best = r.rows[r.best];
  s["objective"] = c.experiment.sweep.objective;
  s["h_star"] = best.h;
  s["J_star"] = best.J;
  s["dJ_dh_at_h_star"] = best.dJ_dh;
  s["censored_samples"] = censored;
  s["weight"] = omega.describe();
  out.files.emplace_back("sweep.csv", t.text());
  return out;
}

// ---------------------------------------------------------------------------------------

inline void put_common(nlohmann::json& s, const ScenarioConfig& c) {
  s["scenario"] = c.name;
  s["experiment"] = c.experiment.kind;
  s["dim"] = c.dim;
  s["particles"] = c.initial_measure.size();
  s["model_h"] = c.model.h();
  s["alpha"] = c.alpha;
  s["t_end"] = c.grid.t_end();
  s["dt"] = c.grid.dt();
}

// Runs the configured experiment. A scheme that does not converge still reports its trace.
inline RunOutput run_scenario(const ScenarioConfig& c) {
  RunOutput out;
  try {
    const std::string& k = c.experiment.kind;
    if (k == "solve") out = run_solve(c);
    else if (k == "sensitivity") out = run_sensitivity(c);
    else if (k == "counterexample") out = run_counterexample(c);
    else if (k == "validate") out = run_validate(c);
    else out = run_sweep(c);
  } catch (const NoConvergenceError& e) {
    out = RunOutput{};
    out.summary["converged"] = false;
    out.summary["error"] = e.what();
    out.files.emplace_back("trace.csv", detail::trace_csv(e.trace()));
    out.exit_code = 1;
    out.message = e.what();
  }
  put_common(out.summary, c);
  return out;
}

}  // namespace measure_flow
