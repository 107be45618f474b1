// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "measure_flow/config.hpp"
#include "measure_flow/sensitivity.hpp"
#include "test_support.hpp"

using namespace measure_flow;
namespace ts = measure_flow::test_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string scenario(const std::string& name) { return std::string(SCENARIO_DIR) + "/" + name + ".toml"; }

double sin_at(ConstPoint x) { return std::sin(x[0]); }
double one_at(ConstPoint) { return 1.0; }

// ---------------------------------------------------------------- 1, 2: Example 1.1

Outcome example_flat_gap() {
  const TimeGrid grid(1.0, 0.1);
  const auto mu0 = ParticleMeasure::dirac(0.0);
  const auto qp = fd_quotient(ts::example_model(), mu0, grid, 0.0, 0.1);
  const auto qm = fd_quotient(ts::example_model(), mu0, grid, 0.0, -0.1);
  const double d = flat_distance(qp.curve.snapshots.back(), qm.curve.snapshots.back());
  const bool ok = d >= 1.8 - 1e-9 && d >= 2.0 - 2.0 * 0.1 - 1e-9;
  return {ok, "flat(q_0.1, q_-0.1) at t=1 = " + fmt(d) + " (need >= 1.8)"};
}

Outcome example_z_cauchy() {
  const TimeGrid grid(1.0, 0.25);
  const auto z = cauchy_diagnostic(ts::example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, halving_ladder(0.1, 6));
  bool monotone = true;
  for (std::size_t i = 0; i + 1 < z.successive.size(); ++i) monotone = monotone && z.successive[i + 1] < z.successive[i];
  return {monotone && z.fitted_order >= 0.4,
          std::string(monotone ? "monotone" : "NOT monotone") + ", fitted order " + fmt(z.fitted_order) + " (need >= 0.4)"};
}

// ---------------------------------------------------------------- 3: representation formula

Outcome representation_exactness() {
  const TimeGrid grid(1.0, 1e-3);
  double pos_err = 0.0;
  for (double h : {0.0, 0.3, -0.3}) {
    const auto curve = solve_linear(constant_velocity({1.0 + h}), constant_rate(1, 0.0), ParticleMeasure::dirac(0.0), grid);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      pos_err = std::max(pos_err, std::abs(curve.at(k).point(0)[0] - (1.0 + h) * grid.time(k)));
    }
  }
  std::mt19937 rng(31);
  double tv_err = 0.0;
  for (double c : {-0.7, 0.4, 1.3}) {
    const auto mu0 = ts::random_measure(rng, 5, 2);
    const auto curve = solve_linear(constant_velocity({0.3, -0.2}), constant_rate(2, c), mu0, TimeGrid(1.0, 0.01));
    for (std::size_t k = 0; k < curve.grid.nodes(); ++k) {
      const double want = std::exp(c * curve.grid.time(k)) * total_variation(mu0);
      tv_err = std::max(tv_err, std::abs(total_variation(curve.at(k)) - want) / want);
    }
  }
  return {pos_err <= 1e-8 && tv_err <= 1e-10,
          "position error " + fmt(pos_err) + " (<= 1e-8), TV relative error " + fmt(tv_err) + " (<= 1e-10)"};
}

// ---------------------------------------------------------------- 4: TV growth

Outcome tv_growth() {
  std::mt19937 rng(41);
  const TimeGrid grid(1.0, 0.05);
  double worst = std::numeric_limits<double>::infinity();  // min over t > 0 of cap / TV - 1
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const auto mu0 = ts::random_measure(rng, 6, d);
    const auto b = ts::random_smooth_field(rng, d);
    const auto w = ts::random_smooth_rate(rng, d, 0.8);
    const auto curve = solve_linear(b, w, mu0, grid);
    // sup of w+ on a box holding every trajectory, at nodes and half steps, up to t
    const BoxGrid box = curve_box(curve, 0.5, d == 1 ? 401 : 41);
    double S = 0.0;
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      for (double t : {grid.time(k) - 0.5 * grid.dt(), grid.time(k)}) {
        if (t < 0.0) continue;
        S = std::max(S, sampled_sup(box, [&](ConstPoint x) { return std::max(0.0, w.value(t, x)); }));
      }
      if (k == 0) continue;
      const double cap = std::exp(grid.time(k) * S) * total_variation(mu0);
      worst = std::min(worst, cap / total_variation(curve.at(k)) - 1.0);
    }
  }
  double eq_err = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const double c = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    const auto mu0 = ts::random_measure(rng, 6, d);
    const auto curve = solve_linear(ts::random_smooth_field(rng, d), constant_rate(d, c), mu0, grid);
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
      const double cap = std::exp(grid.time(k) * c) * total_variation(mu0);
      eq_err = std::max(eq_err, std::abs(total_variation(curve.at(k)) - cap) / cap);
    }
  }
  return {worst >= -1e-9 && eq_err <= 1e-10,
          "min relative slack " + fmt(worst) + " over 100 models, constant-rate equality error " + fmt(eq_err)};
}

// ---------------------------------------------------------------- 5: weak residual order

// phi(t, x) = (1 - (x - c)^2 / r^2)^4_+ (1 + t / 2)
SpaceTimeTest bump(double c, double r) {
  auto s = [c, r](double x) { return 1.0 - (x - c) * (x - c) / (r * r); };
  SpaceTimeTest p;
  p.dim = 1;
  p.value = [s](double t, ConstPoint x) {
    const double v = std::max(0.0, s(x[0]));
    return v * v * v * v * (1.0 + 0.5 * t);
  };
  p.dt = [s](double, ConstPoint x) {
    const double v = std::max(0.0, s(x[0]));
    return 0.5 * v * v * v * v;
  };
  p.grad = [s, c, r](double t, ConstPoint x, MutPoint g) {
    const double v = std::max(0.0, s(x[0]));
    g[0] = 4.0 * v * v * v * (-2.0 * (x[0] - c) / (r * r)) * (1.0 + 0.5 * t);
  };
  return p;
}

Outcome weak_residual_order() {
  const FieldModel model = ts::demo_model();
  const auto mu0 = ts::demo_measure();
  const std::vector<SpaceTimeTest> tests{bump(-1.0, 1.0), bump(-0.4, 0.8), bump(0.0, 1.5), bump(0.5, 1.0), bump(1.1, 0.7)};
  std::vector<double> logdt;
  std::vector<std::vector<double>> logr(tests.size());
  for (double dt : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
    const TimeGrid grid(1.0, dt);
    const WeightFunction omega = calibrate_weight(model, mu0, grid, 0.1);
    FixedPointOptions opt;
    opt.tol = 1e-12;
    const auto solved = fixed_point_solve(model, mu0, grid, omega, opt);
    const CurveCoefficients bw = operator_B(solved.curve, model);
    logdt.push_back(std::log(dt));
    for (std::size_t i = 0; i < tests.size(); ++i) {
      logr[i].push_back(std::log(std::abs(weak_residual(solved.curve, bw.b, bw.w, mu0, tests[i]))));
    }
  }
  double order = std::numeric_limits<double>::infinity();
  for (const auto& r : logr) order = std::min(order, ts::fitted_slope(logdt, r));
  return {order >= 1.9, "smallest fitted order over 5 tests " + fmt(order) + " (need >= 1.9)"};
}

// ---------------------------------------------------------------- 6, 7: demo scheme

struct Demo {
  ScenarioConfig config;
  WeightFunction omega;
  DistanceOptions distance;
};

Demo load_demo() {
  Demo d{load_config(scenario("nonlinear_demo")), unit_weight(), {}};
  d.omega = weight_from_spec(d.config, d.config.model);
  d.distance = {d.config.solver.norm, d.config.alpha};
  return d;
}

Outcome demo_contraction() {
  const Demo d = load_demo();
  FixedPointOptions opt;
  opt.tol = d.config.solver.tol;
  opt.max_iter = d.config.solver.max_iter;
  opt.distance = d.distance;
  const auto r = fixed_point_solve(d.config.model, d.config.initial_measure, d.config.grid, d.omega, opt);
  const auto fit = contraction_ratio(r.trace);
  const MeasureCurve again = operator_T(r.curve, d.config.model, d.config.initial_measure);
  const double defect = weighted_curve_distance(again, r.curve, d.omega, d.distance);
  return {fit.c_hat < 1.0 && fit.r_squared >= 0.98 && defect <= 2.0 * opt.tol,
          "c_hat " + fmt(fit.c_hat) + ", R^2 " + fmt(fit.r_squared) + ", defect " + fmt(defect) + " (<= " +
              fmt(2.0 * opt.tol) + ")"};
}

Outcome iterate_decay() {
  const Demo d = load_demo();
  SensitivityOptions opt;
  opt.omega = d.omega;
  opt.distance = d.distance;
  opt.solver.tol = d.config.solver.tol;
  opt.solver.max_iter = d.config.solver.max_iter;
  opt.solver.distance = d.distance;
  const auto scheme = fixed_point_solve(d.config.model, d.config.initial_measure, d.config.grid, d.omega, opt.solver);
  const double c_hat = contraction_ratio(scheme.trace).c_hat;
  const auto t = iterate_quotient_decay(d.config.model, d.config.initial_measure, d.config.grid, 1e-2, 6, opt);
  double worst = t.ratios.empty() ? std::numeric_limits<double>::infinity() : 0.0;
  for (double r : t.ratios) worst = std::max(worst, r);
  return {t.ratios.size() == 6 && worst <= c_hat + 0.05,
          "max a_{n+1}/a_n " + fmt(worst) + " over " + std::to_string(t.ratios.size()) + " ratios, c_hat " + fmt(c_hat)};
}

// ---------------------------------------------------------------- 8: flow estimates

Outcome flow_estimates() {
  std::mt19937 rng(81);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const TimeGrid grid(1.0, 0.05);
  double margin = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const auto b = ts::random_smooth_field(rng, d), bb = ts::random_smooth_field(rng, d);
    std::vector<double> x(d);
    for (double& c : x) c = U(rng);
    margin = std::min(margin, flow_stability_gap(b, bb, x, grid, BoxGrid::cube(d, -3, 3, d == 1 ? 301 : 41)).margin);
  }
  double ratio = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const auto b0 = ts::random_smooth_field(rng, d), b1 = ts::random_smooth_field(rng, d);
    const double h = 0.4 * U(rng);
    std::vector<double> x(d);
    for (double& c : x) c = U(rng);
    ratio = std::max(ratio, flow_sensitivity_fd(b0, b1, h, 1e-5, x, grid, BoxGrid::cube(d, -3, 3, d == 1 ? 301 : 41)).max_ratio);
  }
  return {margin >= -1e-9 && ratio <= 1.0 + 1e-6,
          "Gronwall margin " + fmt(margin) + " (>= -1e-9), max |d_h X| / bound " + fmt(ratio) + " (<= 1 + 1e-6)"};
}

// ---------------------------------------------------------------- 9: superposition operator

std::vector<Kernel> kernels(std::size_t d) {
  return {gaussian_kernel(d, 1.0), gaussian_kernel(d, 0.4), wendland_kernel(d, 1.5), wendland_kernel(d, 0.7),
          constant_kernel(d, -2.0)};
}

std::vector<OuterFunction> outers() {
  return {make_outer("identity", {}),
          make_outer("constant", {{"c", 0.3}}),
          make_outer("linear", {{"a", -2.0}, {"b", 0.5}}),
          make_outer("tanh", {{"a", 1.5}, {"k", 2.0}}),
          make_outer("gaussian", {{"a", 0.8}, {"sigma", 0.6}}),
          make_outer("sine", {{"a", 1.0}, {"k", 3.0}, {"phase", 0.2}})};
}

double frechet_order(std::mt19937& rng, const OuterFunction& u, const Kernel& K) {
  const auto mb = ts::random_measure(rng, 10, 1);
  const auto nu = ts::random_measure(rng, 10, 1);
  const auto base = superpose(u, kernel_convolve(K, mb));
  const auto D = superposition_derivative(u, mb, nu, K);
  const auto grid = BoxGrid::cube(1, -4, 4, 401);
  std::vector<double> logl, logr;
  for (double lam : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const auto moved = superpose(u, kernel_convolve(K, linear_combination(1.0, mb, lam, nu)));
    const double r = sampled_sup(grid, [&](ConstPoint x) { return std::abs(moved.value(x) - base.value(x) - lam * D.value(x)); });
    logl.push_back(std::log(lam));
    logr.push_back(std::log(r));
  }
  return ts::fitted_slope(logl, logr);
}

Outcome superposition_operator() {
  std::mt19937 rng(91);
  const double alpha = 0.5;
  double margin = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + trial % 2;
    const auto ks = kernels(d);
    const auto us = outers();
    const Kernel& K = ks[rng() % ks.size()];
    const OuterFunction& u = us[rng() % us.size()];
    const auto mu = scaled(ts::random_measure(rng, 2 + rng() % 8, d), 0.5 + 2.0 * (rng() % 100) / 100.0);
    const BoxGrid box = BoxGrid::cube(d, -4, 4, d == 1 ? 301 : 25);
    const double N = total_variation(mu);
    const ScalarField k = kernel_convolve(K, mu);
    margin = std::min(margin, N * kernel_norm_bound(K, alpha) - holder_norm_estimate(k, box, alpha));
    margin = std::min(margin, coefficient_bound_constant(u, K, alpha) * (1 + N + N * N) -
                                  holder_norm_estimate(superpose(u, k), box, alpha));
  }
  double order = std::numeric_limits<double>::infinity();
  order = std::min(order, frechet_order(rng, make_outer("tanh", {}), gaussian_kernel(1, 1.0)));
  order = std::min(order, frechet_order(rng, make_outer("sine", {{"k", 3.0}}), gaussian_kernel(1, 0.4)));
  order = std::min(order, frechet_order(rng, make_outer("gaussian", {{"sigma", 0.6}}), wendland_kernel(1, 1.5)));
  return {margin >= 0.0 && order >= 1.0 + alpha - 0.1,
          "min norm-bound margin " + fmt(margin) + " over 50 triples, Frechet remainder order " + fmt(order) +
              " (need >= " + fmt(1.0 + alpha - 0.1) + ")"};
}

// ---------------------------------------------------------------- 10: derivative pairings

Outcome derivative_pairings() {
  const TimeGrid grid(1.0, 0.01);
  const auto ex = derivative_estimate(ts::example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, 1e-4);
  const double sin_err = std::abs(pair(ex.estimate.curve.snapshots.back(), sin_at) - std::cos(1.0));

  const Kernel K = gaussian_kernel(1, 1.0);
  Coefficient zero{{make_outer("constant", {{"c", 0.0}})}, K};
  Coefficient one{{make_outer("constant", {{"c", 1.0}})}, K};
  const FieldModel growth(1, zero, zero, zero, one);
  const auto g = derivative_estimate(growth, ParticleMeasure(1, {-0.3, 0.8}, {0.4, 0.6}), grid, 0.0, 1e-4);
  const auto p = pair_curve(g.estimate.curve, one_at);
  double mass_err = 0.0;
  for (std::size_t k = 0; k < grid.nodes(); ++k) mass_err = std::max(mass_err, std::abs(p[k] - grid.time(k)));
  return {sin_err <= 5e-3 && mass_err <= 1e-4,
          "|<q_1, sin> - cos 1| = " + fmt(sin_err) + " (<= 5e-3), max |<q_t, 1> - t| = " + fmt(mass_err) + " (<= 1e-4)"};
}

struct Criterion {
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"1 example flat-metric lower bound", 1.0, example_flat_gap},
      {"2 example Z-quotient Cauchy property", 10.0, example_z_cauchy},
      {"3 representation-formula exactness", 10.0, representation_exactness},
      {"4 TV growth bound", 30.0, tv_growth},
      {"5 weak-residual convergence", 60.0, weak_residual_order},
      {"6 contraction and fixed point", 60.0, demo_contraction},
      {"7 iterate-quotient geometric decay", 120.0, iterate_decay},
      {"8 flow estimates", 30.0, flow_estimates},
      {"9 superposition operator", 30.0, superposition_operator},
      {"10 derivative oracle pairings", 10.0, derivative_pairings},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("%s  %s: %s [%.2f s of %.0f s%s]\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs, c.budget_s,
                in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
