#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "measure_flow/dual_norms.hpp"
#include "measure_flow/kernels.hpp"
#include "measure_flow/parallel.hpp"
#include "test_support.hpp"

using namespace measure_flow;

namespace {

std::vector<Kernel> registry_kernels(std::size_t d) {
  return {gaussian_kernel(d, 1.0), gaussian_kernel(d, 0.4), wendland_kernel(d, 1.5), wendland_kernel(d, 0.7),
          constant_kernel(d, -2.0)};
}

std::vector<OuterFunction> registry_outer() {
  return {make_outer("identity", {}),
          make_outer("constant", {{"c", 0.3}}),
          make_outer("linear", {{"a", -2.0}, {"b", 0.5}}),
          make_outer("tanh", {{"a", 1.5}, {"k", 2.0}}),
          make_outer("gaussian", {{"a", 0.8}, {"sigma", 0.6}}),
          make_outer("sine", {{"a", 1.0}, {"k", 3.0}, {"phase", 0.2}})};
}

OuterFunction square() {
  OuterFunction u;
  u.name = "square";
  u.jet = [](double s) { return std::array<double, 4>{s * s, 2 * s, 2.0, 0.0}; };
  return u;
}

Coefficient coefficient(std::vector<OuterFunction> u, Kernel k) { return {std::move(u), std::move(k)}; }

}  // namespace

TEST(KernelConvolve, ConstantKernelGivesTotalMass) {
  std::mt19937 rng(1);
  auto mu = test_support::random_measure(rng, 7, 2);
  auto k = kernel_convolve(constant_kernel(2, 1.0), mu);
  std::vector<double> x{0.3, -4.0};
  EXPECT_NEAR(k.value(x), total_mass(mu), 1e-14);
}

TEST(KernelConvolve, GaussianOfDirac) {
  auto k = kernel_convolve(gaussian_kernel(1, 1.0), ParticleMeasure::dirac(0.0));
  for (double x : {-2.0, 0.0, 0.7}) EXPECT_NEAR(k.value(std::vector<double>{x}), std::exp(-0.5 * x * x), 1e-15);
}

TEST(KernelConvolve, FarParticleIsNegligible) {
  ParticleMeasure mu(1, {0.0, 10.0}, {1.0, -1.0});
  auto k = kernel_convolve(gaussian_kernel(1, 1.0), mu);
  const double direct = 1.0 * std::exp(0.0) - 1.0 * std::exp(-50.0);
  EXPECT_NEAR(k.value(std::vector<double>{0.0}), direct, 1e-15);
  EXPECT_NEAR(k.value(std::vector<double>{0.0}), 1.0, 1e-10);
  EXPECT_THROW(kernel_convolve(gaussian_kernel(2, 1.0), mu), Error);
}

TEST(KernelConvolve, IsLinearInTheMeasure) {
  std::mt19937 rng(2);
  for (const Kernel& K : registry_kernels(2)) {
    auto mu = test_support::random_measure(rng, 6, 2);
    auto nu = test_support::random_measure(rng, 4, 2);
    const double a = 1.7, b = -0.4;
    auto lhs = kernel_convolve(K, linear_combination(a, mu, b, nu));
    auto km = kernel_convolve(K, mu), kn = kernel_convolve(K, nu);
    for (int t = 0; t < 20; ++t) {
      std::vector<double> x{std::uniform_real_distribution<double>(-3, 3)(rng), std::uniform_real_distribution<double>(-3, 3)(rng)};
      EXPECT_NEAR(lhs.value(x), a * km.value(x) + b * kn.value(x), 1e-12);
    }
  }
}

TEST(Kernel, GradientsMatchCentralDifferences) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(-1.5, 1.5);
  for (const Kernel& K : registry_kernels(2)) {
    for (int t = 0; t < 50; ++t) {
      std::vector<double> y{U(rng), U(rng)}, x{U(rng), U(rng)}, g(2);
      K.grad_x(y, x, g);
      for (std::size_t j = 0; j < 2; ++j) {
        auto xp = x, xm = x;
        xp[j] += 1e-6;
        xm[j] -= 1e-6;
        EXPECT_NEAR(g[j], (K.eval(y, xp) - K.eval(y, xm)) / 2e-6, 1e-6) << K.name;
      }
    }
  }
}

TEST(Kernel, RecordedBoundsDominateSampledValues) {
  for (const Kernel& K : registry_kernels(2)) {
    std::vector<double> y{0.1, -0.2}, g(2);
    auto grid = BoxGrid::cube(2, -3, 3, 121);
    std::vector<double> x(2);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      grid.node(i, x);
      EXPECT_LE(std::abs(K.eval(y, x)), K.bounds.sup + 1e-12);
      K.grad_x(y, x, g);
      EXPECT_LE(norm2(g), K.bounds.grad_sup + 1e-12) << K.name;
    }
  }
  EXPECT_THROW(make_kernel("cauchy", 1, {}), Error);
}

TEST(OuterFunction, DerivativesMatchFiniteDifferencesAndSups) {
  for (const OuterFunction& u : registry_outer()) {
    for (double s = -3.0; s <= 3.0; s += 0.05) {
      const auto j = u.jet(s), jp = u.jet(s + 1e-5), jm = u.jet(s - 1e-5);
      for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(j[k + 1], (jp[k] - jm[k]) / 2e-5, 1e-5 * (1 + std::abs(j[k + 1]))) << u.name << " order " << k + 1;
        EXPECT_LE(std::abs(j[k + 1]), u.derivative_sup[k] + 1e-12) << u.name;
      }
    }
  }
  EXPECT_THROW(make_outer("relu", {}), Error);
}

TEST(Superpose, IdentityConstantAndTanh) {
  auto k = kernel_convolve(gaussian_kernel(1, 1.0), ParticleMeasure::dirac(0.0));
  std::vector<double> x{0.4};
  EXPECT_DOUBLE_EQ(superpose(make_outer("identity", {}), k).value(x), k.value(x));
  EXPECT_DOUBLE_EQ(superpose(make_outer("constant", {{"c", 2.5}}), k).value(x), 2.5);
  EXPECT_NEAR(superpose(make_outer("tanh", {}), k).value(std::vector<double>{0.0}), std::tanh(1.0), 1e-15);
  std::vector<double> g(1);
  superpose(make_outer("tanh", {}), k).gradient(x, g);
  const double kx = std::exp(-0.08);
  EXPECT_NEAR(g[0], (1 - std::tanh(kx) * std::tanh(kx)) * (-0.4 * kx), 1e-14);
}

TEST(SuperpositionDerivative, QuadraticAndZeroDirection) {
  std::mt19937 rng(4);
  auto mb = test_support::random_measure(rng, 5, 1);
  auto nu = test_support::random_measure(rng, 3, 1);
  auto K = gaussian_kernel(1, 0.8);
  auto D = superposition_derivative(square(), mb, nu, K);
  auto kb = kernel_convolve(K, mb), kn = kernel_convolve(K, nu);
  for (double x = -2; x <= 2; x += 0.25) {
    std::vector<double> p{x};
    EXPECT_NEAR(D.value(p), 2 * kb.value(p) * kn.value(p), 1e-13);
  }
  auto Z = superposition_derivative(make_outer("tanh", {}), mb, ParticleMeasure(1), K);
  EXPECT_EQ(Z.value(std::vector<double>{0.3}), 0.0);
}

TEST(SuperpositionDerivative, FrechetRemainderIsSuperlinear) {
  std::mt19937 rng(5);
  const double alpha = 0.5;
  auto mb = test_support::random_measure(rng, 10, 1);
  auto nu = test_support::random_measure(rng, 10, 1);
  auto K = gaussian_kernel(1, 1.0);
  auto u = make_outer("tanh", {});
  auto base = superpose(u, kernel_convolve(K, mb));
  auto D = superposition_derivative(u, mb, nu, K);
  auto grid = BoxGrid::cube(1, -4, 4, 401);
  std::vector<double> logl, logr;
  for (double lam : {1e-1, 1e-2, 1e-3, 1e-4}) {
    auto moved = superpose(u, kernel_convolve(K, linear_combination(1.0, mb, lam, nu)));
    const double r = sampled_sup(grid, [&](ConstPoint x) { return moved.value(x) - base.value(x) - lam * D.value(x); });
    logl.push_back(std::log(lam));
    logr.push_back(std::log(r));
  }
  EXPECT_GE(test_support::fitted_slope(logl, logr), 1.0 + alpha);
}

TEST(SuperpositionDerivative, GradientMatchesFiniteDifference) {
  std::mt19937 rng(6);
  auto mb = test_support::random_measure(rng, 4, 2);
  auto nu = test_support::random_measure(rng, 4, 2);
  auto D = superposition_derivative(make_outer("sine", {{"k", 2.0}}), mb, nu, wendland_kernel(2, 2.0));
  std::vector<double> x{0.2, -0.3}, g(2);
  D.gradient(x, g);
  for (std::size_t j = 0; j < 2; ++j) {
    auto xp = x, xm = x;
    xp[j] += 1e-6;
    xm[j] -= 1e-6;
    EXPECT_NEAR(g[j], (D.value(xp) - D.value(xm)) / 2e-6, 1e-6);
  }
}

TEST(KernelBounds, KernelNormBoundHolds) {
  std::mt19937 rng(7);
  for (double alpha : {0.3, 0.5, 1.0}) {
    for (const Kernel& K : registry_kernels(1)) {
      for (int t = 0; t < 4; ++t) {
        auto mu = test_support::random_measure(rng, 1 + t * 3, 1);
        auto k = kernel_convolve(K, mu);
        const double est = holder_norm_estimate(k, BoxGrid::cube(1, -4, 4, 301), alpha);
        EXPECT_LE(est, total_variation(mu) * kernel_norm_bound(K, alpha) + 1e-12) << K.name;
      }
    }
  }
}

TEST(KernelBounds, CoefficientBoundHolds) {
  std::mt19937 rng(8);
  const double alpha = 0.5;
  for (const Kernel& K : registry_kernels(1)) {
    for (const OuterFunction& u : registry_outer()) {
      const double C = coefficient_bound_constant(u, K, alpha);
      for (int t = 0; t < 3; ++t) {
        auto mu = scaled(test_support::random_measure(rng, 2 + 2 * t, 1), 0.5 + t);
        const double N = total_variation(mu);
        const double est = holder_norm_estimate(superpose(u, kernel_convolve(K, mu)), BoxGrid::cube(1, -4, 4, 301), alpha);
        EXPECT_LE(est, C * (1 + N + N * N) + 1e-12) << K.name << " / " << u.name;
      }
    }
  }
}

TEST(PerturbedCoefficients, ExampleFieldAndZeroModel) {
  auto one = make_outer("constant", {{"c", 1.0}});
  auto K = constant_kernel(1, 0.0);
  FieldModel m(1, coefficient({one}, K), coefficient({one}, K), zero_coefficient(1, 1), zero_coefficient(1, 1), 0.25);
  auto c = perturbed_coefficients(m, ParticleMeasure::dirac(0.3));
  double b;
  c.b.value(std::vector<double>{1.7}, MutPoint(&b, 1));
  EXPECT_DOUBLE_EQ(b, 1.25);
  EXPECT_EQ(c.w.value(std::vector<double>{1.7}), 0.0);

  auto c0 = perturbed_coefficients(m.with_h(0.0), ParticleMeasure::dirac(0.3));
  c0.b.value(std::vector<double>{1.7}, MutPoint(&b, 1));
  EXPECT_DOUBLE_EQ(b, 1.0);

  FieldModel z(2, zero_coefficient(2, 2), zero_coefficient(2, 2), zero_coefficient(2, 1), zero_coefficient(2, 1), 0.1);
  auto cz = perturbed_coefficients(z, ParticleMeasure::dirac(std::vector<double>{0.0, 1.0}));
  double v[2];
  cz.b.value(std::vector<double>{0.5, 0.5}, MutPoint(v, 2));
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);
}

TEST(PerturbedCoefficients, EachTermUsesItsOwnKernel) {
  std::mt19937 rng(9);
  auto mu = test_support::random_measure(rng, 6, 1);
  auto tanh = make_outer("tanh", {}), sine = make_outer("sine", {});
  auto Kv0 = gaussian_kernel(1, 1.0), Kv1 = wendland_kernel(1, 2.0), Km0 = gaussian_kernel(1, 0.5), Km1 = constant_kernel(1, 1.0);
  const double h = -0.3;
  FieldModel m(1, coefficient({tanh}, Kv0), coefficient({sine}, Kv1), coefficient({sine}, Km0),
               coefficient({tanh}, Km1), h);
  auto c = perturbed_coefficients(m, mu);
  for (double x = -2; x <= 2; x += 0.5) {
    std::vector<double> p{x};
    double b, J;
    c.b.value(p, MutPoint(&b, 1));
    const double expect_b = tanh(kernel_convolve(Kv0, mu).value(p)) + h * sine(kernel_convolve(Kv1, mu).value(p));
    EXPECT_NEAR(b, expect_b, 1e-14);
    const double expect_w = sine(kernel_convolve(Km0, mu).value(p)) + h * tanh(kernel_convolve(Km1, mu).value(p));
    EXPECT_NEAR(c.w.value(p), expect_w, 1e-14);
    c.b.jacobian(p, MutPoint(&J, 1));
    double bp, bm;
    c.b.value(std::vector<double>{x + 1e-6}, MutPoint(&bp, 1));
    c.b.value(std::vector<double>{x - 1e-6}, MutPoint(&bm, 1));
    EXPECT_NEAR(J, (bp - bm) / 2e-6, 1e-7);
  }
}

TEST(FieldModel, EnforcesPerturbationRange) {
  auto z = [] { return zero_coefficient(1, 1); };
  for (double h : {0.5, -0.5, 0.7}) {
    try {
      FieldModel(1, z(), z(), z(), z(), h);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::h_out_of_range);
    }
  }
  EXPECT_NO_THROW(FieldModel(1, z(), z(), z(), z(), 0.499));
  EXPECT_THROW(FieldModel(1, zero_coefficient(1, 2), z(), z(), z(), 0.0), Error);
}

TEST(CrowdVelocity, SelfInteractionSupportAndSingleNeighbour) {
  std::vector<double> x{0.5, -0.5};
  CrowdParams p;
  p.radius = 1.0;
  double v[2];
  crowd_velocity(ParticleMeasure::dirac(x), p).value(x, MutPoint(v, 2));
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);

  ParticleMeasure far(2, {0.0, 0.0, 3.0, 0.0}, {1.0, 1.0});
  crowd_velocity(far, p).value(std::vector<double>{0.0, 0.0}, MutPoint(v, 2));
  EXPECT_EQ(v[0], 0.0);
  EXPECT_EQ(v[1], 0.0);

  p.radius = 2.0;
  p.radial = [](double r) { return r <= 2.0 ? 1.0 - std::abs(r - 1.0) : 0.0; };  // K_r(R/2) = 1
  p.vision = [](double) { return 1.0; };
  ParticleMeasure nb(2, {0.6, 0.8}, {1.0});
  crowd_velocity(nb, p).value(std::vector<double>{0.0, 0.0}, MutPoint(v, 2));
  EXPECT_NEAR(v[0], 0.6, 1e-15);
  EXPECT_NEAR(v[1], 0.8, 1e-15);

  try {
    crowd_velocity(ParticleMeasure::dirac(0.0), p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::wrong_dimension);
  }
}

TEST(CrowdVelocity, VisionConeIgnoresNeighboursBehind) {
  CrowdParams p;
  p.radius = 2.0;
  p.heading = [](ConstPoint, MutPoint h) {
    h[0] = 1.0;
    h[1] = 0.0;
  };
  ParticleMeasure behind(2, {-1.0, 0.0}, {1.0});
  ParticleMeasure ahead(2, {1.0, 0.0}, {1.0});
  double v[2];
  crowd_velocity(behind, p).value(std::vector<double>{0.0, 0.0}, MutPoint(v, 2));
  EXPECT_EQ(v[0], 0.0);
  crowd_velocity(ahead, p).value(std::vector<double>{0.0, 0.0}, MutPoint(v, 2));
  EXPECT_NEAR(v[0], detail::wendland(0.5), 1e-15);
  EXPECT_DOUBLE_EQ(default_vision(0.0), 1.0);
  EXPECT_NEAR(default_vision(0.5 * std::numbers::pi), 0.5, 1e-15);
  EXPECT_EQ(default_vision(2.0), 0.0);
}

TEST(Fields, ParallelEvaluationIsDeterministic) {
  std::mt19937 rng(10);
  auto mu = test_support::random_measure(rng, 50, 2);
  FieldModel m(2, coefficient({make_outer("tanh", {}), make_outer("sine", {})}, gaussian_kernel(2, 1.0)),
               zero_coefficient(2, 2), coefficient({make_outer("gaussian", {})}, wendland_kernel(2, 1.0)),
               zero_coefficient(2, 1), 0.0);
  auto c = perturbed_coefficients(m, mu);
  auto grid = BoxGrid::cube(2, -2, 2, 40);
  auto run = [&](std::size_t threads) {
    set_thread_count(threads);
    std::vector<double> out(grid.size() * 3);
    parallel_for(grid.size(), [&](std::size_t i) {
      double x[2];
      grid.node(i, MutPoint(x, 2));
      c.b.value(ConstPoint(x, 2), MutPoint(out.data() + 3 * i, 2));
      out[3 * i + 2] = c.w.value(ConstPoint(x, 2));
    });
    return out;
  };
  auto serial = run(1);
  auto threaded = run(4);
  set_thread_count(1);
  EXPECT_EQ(serial, threaded);
}
