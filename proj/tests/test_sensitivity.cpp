#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "measure_flow/sensitivity.hpp"
#include "test_support.hpp"

using namespace measure_flow;
using test_support::demo_measure;
using test_support::demo_model;
using test_support::example_model;

namespace {

double sin_at(ConstPoint x) { return std::sin(x[0]); }
double one_at(ConstPoint) { return 1.0; }

// v0 = tanh, no perturbation terms
FieldModel unperturbed_demo() {
  const Kernel K = gaussian_kernel(1, 0.5);
  Coefficient v0{{make_outer("tanh", {{"a", 1.0}, {"k", 1.0}})}, K};
  Coefficient zero{{make_outer("constant", {{"c", 0.0}})}, K};
  return FieldModel(1, v0, zero, zero, zero);
}

// b = 0, m0 = 0, m1 = 1
FieldModel growth_model() {
  const Kernel K = gaussian_kernel(1, 1.0);
  Coefficient zero{{make_outer("constant", {{"c", 0.0}})}, K};
  Coefficient one{{make_outer("constant", {{"c", 1.0}})}, K};
  return FieldModel(1, zero, zero, zero, one);
}

SensitivityOptions flat_options() {
  SensitivityOptions o;
  o.distance = {CurveNorm::flat, 0.5};
  return o;
}

}  // namespace

TEST(FdQuotient, ExampleModelMatchesClosedForm) {
  const TimeGrid grid(1.0, 0.1);
  const double lam = 0.1;
  auto q = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, lam);
  EXPECT_EQ(q.lambda, lam);
  for (std::size_t k = 0; k < grid.nodes(); ++k) {
    const double t = grid.time(k);
    const auto& s = q.curve.at(k);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_NEAR(s.point(0)[0], (1 + lam) * t, 1e-12);
    EXPECT_NEAR(s.weight(0), 1 / lam, 1e-12);
    EXPECT_NEAR(s.point(1)[0], t, 1e-12);
    EXPECT_NEAR(s.weight(1), -1 / lam, 1e-12);
  }
}

TEST(FdQuotient, CommutesWithPairing) {
  const TimeGrid grid(1.0, 0.05);
  const auto mu0 = demo_measure();
  const double h = 0.1, lam = 0.02;
  SensitivityOptions opt;
  auto q = fd_quotient(demo_model(), mu0, grid, h, lam, opt);
  auto upper = solve_at(demo_model(), mu0, grid, h + lam, opt, nullptr);
  auto lower = solve_at(demo_model(), mu0, grid, h, opt, nullptr);
  for (std::size_t k = 0; k < grid.nodes(); k += 5) {
    const double expect = (pair(upper.at(k), sin_at) - pair(lower.at(k), sin_at)) / lam;
    EXPECT_NEAR(pair(q.curve.at(k), sin_at), expect, 1e-8);
  }
}

TEST(FdQuotient, NoPerturbationGivesZero) {
  auto q = fd_quotient(unperturbed_demo(), demo_measure(), TimeGrid(1.0, 0.1), 0.0, 0.05);
  for (const auto& s : q.curve.snapshots) EXPECT_EQ(total_variation(compact(s)), 0.0);
}

TEST(FdQuotient, ParameterRangeIsChecked) {
  const TimeGrid grid(1.0, 0.1);
  for (auto [h, lam] : std::vector<std::pair<double, double>>{{0.45, 0.1}, {-0.5, 0.1}, {0.0, -0.6}}) {
    try {
      fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, h, lam);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::h_out_of_range);
    }
  }
  EXPECT_THROW(fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, 0.0), Error);
}

TEST(FdQuotient, SymmetricQuotientsCloseInZ) {
  const TimeGrid grid(1.0, 0.25);
  const double alpha = 0.5;
  for (double lam : {0.2, 0.1, 0.05}) {
    auto qp = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, lam);
    auto qm = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, -lam);
    for (std::size_t k = 1; k < grid.nodes(); ++k) {
      const double t = grid.time(k);
      const double bound = 2.0 / (1 + alpha) * std::pow(lam, alpha) * std::pow(t, 1 + alpha);
      EXPECT_LE(z_upper_norm(difference(qp.curve.at(k), qm.curve.at(k)), alpha), bound * (1 + 1e-9));
    }
  }
}

TEST(FdQuotient, FlatMetricFailsOnExample) {
  const TimeGrid grid(1.0, 0.5);
  for (double h : {0.2, 0.1, 0.05}) {
    auto qp = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, h);
    auto qm = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, -h);
    EXPECT_GE(flat_distance(qp.curve.snapshots.back(), qm.curve.snapshots.back()), 2 - 2 * h - 1e-9);
  }
}

TEST(Cauchy, ExampleIsCauchyInZButNotFlat) {
  const TimeGrid grid(1.0, 0.25);
  auto ladder = halving_ladder(0.1, 6);
  auto z = cauchy_diagnostic(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, ladder);
  ASSERT_EQ(z.successive.size(), 5u);
  for (std::size_t i = 0; i + 1 < z.successive.size(); ++i) EXPECT_LT(z.successive[i + 1], z.successive[i]);
  EXPECT_GE(z.fitted_order, 0.4);
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    EXPECT_EQ(z.pairwise[i][i], 0.0);
    for (std::size_t j = 0; j < ladder.size(); ++j) EXPECT_EQ(z.pairwise[i][j], z.pairwise[j][i]);
  }

  auto flat = cauchy_diagnostic(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, ladder, flat_options());
  for (double d : flat.successive) EXPECT_GE(d, 1.0 - 1e-9);  // never small
  EXPECT_LT(flat.fitted_order, 0.1);
}

TEST(Cauchy, NoPerturbationAndBadLadders) {
  const TimeGrid grid(1.0, 0.25);
  auto t = cauchy_diagnostic(unperturbed_demo(), demo_measure(), grid, 0.0, {0.1, 0.05, 0.025});
  for (const auto& row : t.pairwise)
    for (double d : row) EXPECT_EQ(d, 0.0);
  EXPECT_THROW(cauchy_diagnostic(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, {0.1, 0.05}), Error);
  EXPECT_THROW(cauchy_diagnostic(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, {0.1, 0.1, 0.05}), Error);
}

TEST(DerivativeEstimate, ExampleSinePairing) {
  const TimeGrid grid(1.0, 0.01);
  auto est = derivative_estimate(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, 1e-3);
  auto p = pair_curve(est.estimate.curve, sin_at);
  for (std::size_t k = 0; k < grid.nodes(); k += 10) {
    const double t = grid.time(k);
    EXPECT_NEAR(p[k], t * std::cos(t), 5e-3);
  }
  EXPECT_NEAR(p.back(), std::cos(1.0), 5e-3);
  EXPECT_GT(est.error_bracket, 0.0);
  EXPECT_LT(est.error_bracket, 0.25);
}

TEST(DerivativeEstimate, ZeroAndGrowthOnly) {
  const TimeGrid grid(1.0, 0.05);
  auto zero = derivative_estimate(unperturbed_demo(), demo_measure(), grid, 0.0, 1e-3);
  EXPECT_EQ(zero.error_bracket, 0.0);
  for (const auto& s : zero.estimate.curve.snapshots) EXPECT_EQ(total_variation(compact(s)), 0.0);

  const auto mu0 = ParticleMeasure(1, {-0.3, 0.8}, {0.4, 0.6});
  auto g = derivative_estimate(growth_model(), mu0, grid, 0.0, 1e-4);
  auto p = pair_curve(g.estimate.curve, one_at);
  for (std::size_t k = 0; k < grid.nodes(); ++k) EXPECT_NEAR(p[k], grid.time(k) * 1.0, 1e-4);
}

TEST(DerivativeEstimate, SymmetricAndRichardsonAreSecondOrder) {
  const TimeGrid grid(1.0, 0.5);
  std::vector<double> central_err, rich_err, plain_err;
  for (double lam : {0.08, 0.04, 0.02}) {
    auto qp = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, lam);
    auto qm = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, -lam);
    auto qh = fd_quotient(example_model(), ParticleMeasure::dirac(0.0), grid, 0.0, lam / 2);
    const double exact = std::cos(1.0);
    const double central = 0.5 * (pair(qp.curve.snapshots.back(), sin_at) + pair(qm.curve.snapshots.back(), sin_at));
    central_err.push_back(std::abs(central - exact));
    rich_err.push_back(std::abs(pair(richardson(qp, qh).snapshots.back(), sin_at) - exact));
    plain_err.push_back(std::abs(pair(qh.curve.snapshots.back(), sin_at) - exact));
  }
  EXPECT_NEAR(central_err[1] / central_err[0], 0.25, 0.02);
  EXPECT_NEAR(central_err[2] / central_err[1], 0.25, 0.02);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(rich_err[i], plain_err[i]);
}

TEST(IterateDecay, LinearModelStopsAfterOneStep) {
  auto t = iterate_quotient_decay(example_model(), ParticleMeasure::dirac(0.0), TimeGrid(1.0, 0.1), 1e-2, 4,
                                  flat_options());
  ASSERT_EQ(t.a.size(), 5u);
  EXPECT_GT(t.a[0], 0.0);
  for (std::size_t n = 1; n < t.a.size(); ++n) EXPECT_EQ(t.a[n], 0.0);
}

TEST(IterateDecay, DemoDecaysGeometricallyAtTheSchemeRate) {
  const TimeGrid grid(2.0, 0.01);
  const auto mu0 = demo_measure();
  SensitivityOptions opt = flat_options();
  opt.omega = calibrate_weight(demo_model(), mu0, grid, 0.1);
  auto scheme = fixed_point_solve(demo_model(), mu0, grid, opt.omega);
  const double c_hat = contraction_ratio(scheme.trace).c_hat;
  auto t = iterate_quotient_decay(demo_model(), mu0, grid, 1e-2, 6, opt);
  ASSERT_EQ(t.ratios.size(), 6u);
  for (double r : t.ratios) EXPECT_LE(r, c_hat + 0.05);
  auto fit = contraction_ratio(t.a);
  EXPECT_GE(fit.r_squared, 0.98);
  EXPECT_NEAR(fit.c_hat, c_hat, 0.05);
}

TEST(ContinuityScan, ExampleGapsScaleWithSpacing) {
  const TimeGrid grid(1.0, 0.25);
  SensitivityOptions opt;
  opt.distance = {CurveNorm::pairing, 0.5};
  auto coarse = derivative_continuity_scan(example_model(), ParticleMeasure::dirac(0.0), grid, {0.0, 0.1, 0.2}, 1e-3, opt);
  auto fine = derivative_continuity_scan(example_model(), ParticleMeasure::dirac(0.0), grid, {0.0, 0.05, 0.1}, 1e-3, opt);
  ASSERT_EQ(coarse.gaps.size(), 2u);
  EXPECT_GT(coarse.max_gap, 0.0);
  // in a dual C^{1+alpha} norm a moving dipole is only Hoelder continuous: ratio 2^{-alpha}
  EXPECT_LT(fine.gaps[0], coarse.gaps[0]);
  EXPECT_NEAR(fine.gaps[0] / coarse.gaps[0], std::pow(0.5, 0.5), 0.05);
  // a fixed test function sees O(dh): <q, sin> -> t cos((1+h) t)
  auto p0 = pair_curve(coarse.estimates[0].estimate.curve, sin_at);
  auto p1 = pair_curve(coarse.estimates[1].estimate.curve, sin_at);
  auto pf = pair_curve(fine.estimates[1].estimate.curve, sin_at);
  EXPECT_NEAR(p1.back(), std::cos(1.1), 5e-3);
  EXPECT_NEAR(std::abs(pf.back() - p0.back()) / std::abs(p1.back() - p0.back()), 0.5, 0.125);

  auto none = derivative_continuity_scan(unperturbed_demo(), demo_measure(), grid, {0.0, 0.1}, 1e-3, opt);
  EXPECT_EQ(none.max_gap, 0.0);
  EXPECT_THROW(derivative_continuity_scan(example_model(), ParticleMeasure::dirac(0.0), grid, {0.1, 0.0}, 1e-3, opt),
               Error);
}

TEST(ContinuityScan, DemoGapsHalveUnderRefinement) {
  const TimeGrid grid(1.0, 0.05);
  SensitivityOptions opt;
  opt.distance = {CurveNorm::pairing, 0.5};
  auto coarse = derivative_continuity_scan(demo_model(), demo_measure(), grid, {0.0, 0.1}, 1e-3, opt);
  auto fine = derivative_continuity_scan(demo_model(), demo_measure(), grid, {0.0, 0.05}, 1e-3, opt);
  EXPECT_NEAR(fine.max_gap / coarse.max_gap, 0.5, 0.125);
}
