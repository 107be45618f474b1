#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "measure_flow/error.hpp"
#include "measure_flow/fields.hpp"
#include "measure_flow/measure.hpp"

namespace measure_flow {

using Params = std::map<std::string, double>;

inline double param(const Params& p, const std::string& key, double fallback) {
  auto it = p.find(key);
  return it == p.end() ? fallback : it->second;
}

// (2 D1)^{1-a} D2^a bounds the a-Hölder seminorm of a map with sup D1 and Lipschitz constant D2.
inline double holder_interpolation(double d1, double d2, double alpha) {
  if (d2 == 0.0) return 0.0;
  if (d1 == 0.0) return alpha == 1.0 ? d2 : 0.0;
  return std::pow(2.0 * d1, 1.0 - alpha) * std::pow(d2, alpha);
}

// ---------------------------------------------------------------- kernels

struct KernelBounds {
  double sup = 0.0;       // sup |K|
  double grad_sup = 0.0;  // sup |grad_x K|
  double hess_sup = 0.0;  // sup of the operator norm of the x-Hessian

  // sup_y ||K(y, .)||_{C^{1+alpha}}
  double norm(double alpha) const { return sup + grad_sup + holder_interpolation(grad_sup, hess_sup, alpha); }
};

struct Kernel {
  std::string name;
  std::size_t dim = 1;
  std::function<double(ConstPoint y, ConstPoint x)> eval;
  std::function<void(ConstPoint y, ConstPoint x, MutPoint g)> grad_x;
  KernelBounds bounds;
  Params params;
};

namespace detail {

// Wendland psi_{3,2}(r) = (1-r)^6 (35 r^2 + 18 r + 3) / 3 on [0, 1], normalised to psi(0) = 1.
inline double wendland(double r) {
  if (r >= 1.0) return 0.0;
  const double s = 1.0 - r;
  const double s2 = s * s;
  return s2 * s2 * s2 * (35.0 * r * r + 18.0 * r + 3.0) / 3.0;
}

// psi'(r) / r, finite at 0.
inline double wendland_d1_over_r(double r) {
  if (r >= 1.0) return 0.0;
  const double s = 1.0 - r;
  return -(56.0 / 3.0) * s * s * s * s * s * (5.0 * r + 1.0);
}

inline double wendland_d2(double r) {
  if (r >= 1.0) return 0.0;
  const double s = 1.0 - r;
  return (56.0 / 3.0) * s * s * s * s * (35.0 * r * r - 4.0 * r - 1.0);
}

// Sup of |f| over [0, 1] by dense sampling; f is smooth so the margin covers the gap.
inline double profile_sup(const std::function<double(double)>& f) {
  double best = 0.0;
  constexpr int n = 20000;
  for (int i = 0; i <= n; ++i) best = std::max(best, std::abs(f(static_cast<double>(i) / n)));
  return best * (1.0 + 1e-6);
}

}  // namespace detail

inline Kernel gaussian_kernel(std::size_t dim, double sigma) {
  if (!(sigma > 0.0)) throw Error(Errc::config_error, "gaussian kernel needs sigma > 0");
  Kernel k;
  k.name = "gaussian";
  k.dim = dim;
  k.params = {{"sigma", sigma}};
  const double inv = 1.0 / (sigma * sigma);
  k.eval = [inv](ConstPoint y, ConstPoint x) {
    double r2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) r2 += (x[i] - y[i]) * (x[i] - y[i]);
    return std::exp(-0.5 * r2 * inv);
  };
  k.grad_x = [inv](ConstPoint y, ConstPoint x, MutPoint g) {
    double r2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) r2 += (x[i] - y[i]) * (x[i] - y[i]);
    const double e = std::exp(-0.5 * r2 * inv);
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = -(x[i] - y[i]) * inv * e;
  };
  k.bounds = {1.0, std::exp(-0.5) / sigma, inv};
  return k;
}

inline Kernel wendland_kernel(std::size_t dim, double radius) {
  if (!(radius > 0.0)) throw Error(Errc::config_error, "wendland kernel needs radius > 0");
  Kernel k;
  k.name = "wendland";
  k.dim = dim;
  k.params = {{"radius", radius}};
  k.eval = [radius](ConstPoint y, ConstPoint x) { return detail::wendland(euclidean_distance(x, y) / radius); };
  k.grad_x = [radius](ConstPoint y, ConstPoint x, MutPoint g) {
    const double rho = euclidean_distance(x, y) / radius;
    // grad = psi'(rho) / R * (x - y) / |x - y| = psi'(rho)/rho * (x - y) / R^2
    const double f = detail::wendland_d1_over_r(rho) / (radius * radius);
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = f * (x[i] - y[i]);
  };
  const double d1 = detail::profile_sup([](double r) { return r * detail::wendland_d1_over_r(r); });
  const double d2 = std::max(detail::profile_sup(detail::wendland_d2), detail::profile_sup(detail::wendland_d1_over_r));
  k.bounds = {1.0, d1 / radius, d2 / (radius * radius)};
  return k;
}

inline Kernel constant_kernel(std::size_t dim, double c) {
  Kernel k;
  k.name = "constant";
  k.dim = dim;
  k.params = {{"c", c}};
  k.eval = [c](ConstPoint, ConstPoint) { return c; };
  k.grad_x = [](ConstPoint, ConstPoint, MutPoint g) { std::fill(g.begin(), g.end(), 0.0); };
  k.bounds = {std::abs(c), 0.0, 0.0};
  return k;
}

inline Kernel make_kernel(const std::string& name, std::size_t dim, const Params& p) {
  if (name == "gaussian") return gaussian_kernel(dim, param(p, "sigma", 1.0));
  if (name == "wendland") return wendland_kernel(dim, param(p, "radius", 1.0));
  if (name == "constant") return constant_kernel(dim, param(p, "c", 1.0));
  throw Error(Errc::config_error, "unknown kernel `" + name + "` (gaussian, wendland, constant)");
}

// --------------------------------------------------------- outer functions

struct OuterFunction {
  std::string name;
  // u, u', u'', u''' at s
  std::function<std::array<double, 4>(double)> jet;
  double at_zero = 0.0;
  std::array<double, 3> derivative_sup{};  // global sups of |u'|, |u''|, |u'''|
  Params params;

  double operator()(double s) const { return jet(s)[0]; }
  double derivative(double s) const { return jet(s)[1]; }
};

inline OuterFunction make_outer(const std::string& name, const Params& p) {
  OuterFunction u;
  u.name = name;
  u.params = p;
  if (name == "identity") {
    u.jet = [](double s) { return std::array<double, 4>{s, 1.0, 0.0, 0.0}; };
    u.derivative_sup = {1.0, 0.0, 0.0};
  } else if (name == "constant") {
    const double c = param(p, "c", 0.0);
    u.jet = [c](double) { return std::array<double, 4>{c, 0.0, 0.0, 0.0}; };
  } else if (name == "linear") {
    const double a = param(p, "a", 1.0), b = param(p, "b", 0.0);
    u.jet = [a, b](double s) { return std::array<double, 4>{a * s + b, a, 0.0, 0.0}; };
    u.derivative_sup = {std::abs(a), 0.0, 0.0};
  } else if (name == "tanh") {
    const double a = param(p, "a", 1.0), k = param(p, "k", 1.0);
    u.jet = [a, k](double s) {
      const double t = std::tanh(k * s), q = 1.0 - t * t;
      return std::array<double, 4>{a * t, a * k * q, -2.0 * a * k * k * t * q, -2.0 * a * k * k * k * q * (1.0 - 3.0 * t * t)};
    };
    const double ak = std::abs(a * k);
    u.derivative_sup = {ak, ak * std::abs(k) * 4.0 / (3.0 * std::sqrt(3.0)), 2.0 * ak * k * k};
  } else if (name == "gaussian") {
    const double a = param(p, "a", 1.0), sigma = param(p, "sigma", 1.0);
    if (!(sigma > 0.0)) throw Error(Errc::config_error, "gaussian outer function needs sigma > 0");
    u.jet = [a, sigma](double s) {
      const double z = s / sigma, e = a * std::exp(-0.5 * z * z);
      return std::array<double, 4>{e, -z * e / sigma, (z * z - 1.0) * e / (sigma * sigma),
                                   (3.0 * z - z * z * z) * e / (sigma * sigma * sigma)};
    };
    // |3z - z^3| e^{-z^2/2} peaks at z^2 = 3 - sqrt 6
    const double z3 = std::sqrt(3.0 - std::sqrt(6.0));
    const double c3 = (3.0 * z3 - z3 * z3 * z3) * std::exp(-0.5 * z3 * z3);
    u.derivative_sup = {std::abs(a) * std::exp(-0.5) / sigma, std::abs(a) / (sigma * sigma),
                        std::abs(a) * c3 / (sigma * sigma * sigma)};
  } else if (name == "sine") {
    const double a = param(p, "a", 1.0), k = param(p, "k", 1.0), phase = param(p, "phase", 0.0);
    u.jet = [a, k, phase](double s) {
      const double sn = std::sin(k * s + phase), cs = std::cos(k * s + phase);
      return std::array<double, 4>{a * sn, a * k * cs, -a * k * k * sn, -a * k * k * k * cs};
    };
    const double ak = std::abs(a);
    const double kk = std::abs(k);
    u.derivative_sup = {ak * kk, ak * kk * kk, ak * kk * kk * kk};
  } else {
    throw Error(Errc::config_error,
                "unknown outer function `" + name + "` (identity, constant, linear, tanh, gaussian, sine)");
  }
  u.at_zero = u.jet(0.0)[0];
  return u;
}

// ------------------------------------------------------------- operations

// k_mu(x) = sum_i a_i K(y_i, x)
inline ScalarField kernel_convolve(const Kernel& K, const ParticleMeasure& mu) {
  if (K.dim != mu.dim()) throw Error(Errc::dim_mismatch, "kernel and measure dimensions differ");
  ScalarField f;
  f.dim = mu.dim();
  f.value = [K, mu](ConstPoint x) {
    double s = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) s += mu.weight(i) * K.eval(mu.point(i), x);
    return s;
  };
  f.gradient = [K, mu](ConstPoint x, MutPoint g) {
    std::fill(g.begin(), g.end(), 0.0);
    std::vector<double> gi(mu.dim());
    for (std::size_t i = 0; i < mu.size(); ++i) {
      K.grad_x(mu.point(i), x, gi);
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += mu.weight(i) * gi[k];
    }
  };
  return f;
}

// x -> u(k(x))
inline ScalarField superpose(const OuterFunction& u, const ScalarField& k) {
  ScalarField f;
  f.dim = k.dim;
  f.value = [u, kv = k.value](ConstPoint x) { return u(kv(x)); };
  f.gradient = [u, kv = k.value, kg = k.gradient](ConstPoint x, MutPoint g) {
    const double du = u.derivative(kv(x));
    kg(x, g);
    for (double& c : g) c *= du;
  };
  return f;
}

// Directional derivative of mu -> u(k_mu) at mu_bar along nu: x -> u'(k_mu_bar(x)) k_nu(x).
inline ScalarField superposition_derivative(const OuterFunction& u, const ParticleMeasure& mu_bar,
                                            const ParticleMeasure& nu, const Kernel& K) {
  const ScalarField kb = kernel_convolve(K, mu_bar);
  const ScalarField kn = kernel_convolve(K, nu);
  ScalarField f;
  f.dim = kb.dim;
  f.value = [u, kb, kn](ConstPoint x) { return u.derivative(kb.value(x)) * kn.value(x); };
  f.gradient = [u, kb, kn](ConstPoint x, MutPoint g) {
    const auto j = u.jet(kb.value(x));
    const double knx = kn.value(x);
    std::vector<double> gb(g.size());
    kb.gradient(x, gb);
    kn.gradient(x, g);
    for (std::size_t k = 0; k < g.size(); ++k) g[k] = j[2] * gb[k] * knx + j[1] * g[k];
  };
  return f;
}

// Lemma-3.1 style constant: ||k_mu||_{C^{1+alpha}} <= TV(mu) * kernel_norm_bound(K, alpha).
inline double kernel_norm_bound(const Kernel& K, double alpha) { return K.bounds.norm(alpha); }

// C with ||u(k_mu)||_{C^{1+alpha}} <= C (1 + N + N^2), N = TV(mu).
inline double coefficient_bound_constant(const OuterFunction& u, const Kernel& K, double alpha) {
  const KernelBounds& b = K.bounds;
  const double u1 = u.derivative_sup[0], u2 = u.derivative_sup[1];
  const double kernel_holder = holder_interpolation(b.grad_sup, b.hess_sup, alpha);
  double chain = 0.0;
  if (u1 > 0.0 && u2 > 0.0 && b.grad_sup > 0.0) {
    chain = std::pow(2.0 * u1, 1.0 - alpha) * std::pow(u2 * b.grad_sup, alpha) * b.grad_sup;
  }
  return std::abs(u.at_zero) + u1 * (b.sup + b.grad_sup + kernel_holder) + chain;
}

// ---------------------------------------------------------------- crowd

struct CrowdParams {
  double radius = 1.0;
  std::function<double(double)> radial;             // K_r on [0, radius]; Wendland profile when empty
  std::function<double(double)> vision;             // g on [-pi, pi]; cos^2(a/2) on |a| <= pi/2 when empty
  std::function<void(ConstPoint, MutPoint)> heading;  // direction of the individual at x
};

inline double default_vision(double angle) {
  if (std::abs(angle) > 0.5 * std::numbers::pi) return 0.0;
  const double c = std::cos(0.5 * angle);
  return c * c;
}

// v(x) = sum_{y_i != x} a_i K_r(|y_i - x|) g(angle(y_i - x, heading(x))) (y_i - x) / |y_i - x|
inline VectorField crowd_velocity(const ParticleMeasure& mu, CrowdParams p) {
  if (mu.dim() != 2) throw Error(Errc::wrong_dimension, "crowd velocity is defined in two dimensions");
  if (!(p.radius > 0.0)) throw Error(Errc::invalid_argument, "crowd radius must be positive");
  if (!p.radial) p.radial = [R = p.radius](double r) { return detail::wendland(r / R); };
  if (!p.vision) p.vision = default_vision;
  if (!p.heading) {
    p.heading = [](ConstPoint, MutPoint h) {
      h[0] = 1.0;
      h[1] = 0.0;
    };
  }
  VectorField f;
  f.dim = 2;
  f.value = [mu, p](ConstPoint x, MutPoint out) {
    out[0] = out[1] = 0.0;
    double h[2];
    p.heading(x, MutPoint(h, 2));
    const double hn = std::hypot(h[0], h[1]);
    for (std::size_t i = 0; i < mu.size(); ++i) {
      auto y = mu.point(i);
      const double dx = y[0] - x[0], dy = y[1] - x[1];
      const double r = std::hypot(dx, dy);
      if (r < 1e-12 || r > p.radius) continue;
      const double angle = hn > 0.0 ? std::atan2(h[0] * dy - h[1] * dx, h[0] * dx + h[1] * dy) : 0.0;
      const double s = mu.weight(i) * p.radial(r) * p.vision(angle) / r;
      out[0] += s * dx;
      out[1] += s * dy;
    }
  };
  f.jacobian = [v = f.value](ConstPoint x, MutPoint J) {
    double xp[2] = {x[0], x[1]}, fp[2], fm[2];
    for (std::size_t j = 0; j < 2; ++j) {
      const double step = 1e-6 * std::max(1.0, std::abs(x[j]));
      xp[j] = x[j] + step;
      v(ConstPoint(xp, 2), MutPoint(fp, 2));
      xp[j] = x[j] - step;
      v(ConstPoint(xp, 2), MutPoint(fm, 2));
      xp[j] = x[j];
      for (std::size_t i = 0; i < 2; ++i) J[i * 2 + j] = (fp[i] - fm[i]) / (2.0 * step);
    }
  };
  return f;
}

// ---------------------------------------------------------------- model

// u_i(k_mu) with one outer function per output component (d for velocities, 1 for rates).
struct Coefficient {
  std::vector<OuterFunction> components;
  Kernel kernel;
};

inline Coefficient zero_coefficient(std::size_t dim, std::size_t components) {
  return {std::vector<OuterFunction>(components, make_outer("constant", {{"c", 0.0}})), constant_kernel(dim, 0.0)};
}

struct CrowdTerm {
  double strength = 1.0;
  double radius = 1.0;
  std::vector<double> default_heading{1.0, 0.0};
};

// b = v0(k^{v0}_mu) + h v1(k^{v1}_mu) [+ crowd],  w = m0(k^{m0}_mu) + h m1(k^{m1}_mu)
class FieldModel {
 public:
  FieldModel(std::size_t dim, Coefficient v0, Coefficient v1, Coefficient m0, Coefficient m1, double h = 0.0)
      : dim_(dim), v0_(std::move(v0)), v1_(std::move(v1)), m0_(std::move(m0)), m1_(std::move(m1)) {
    for (const Coefficient* c : {&v0_, &v1_}) {
      if (c->components.size() != dim_) throw Error(Errc::dim_mismatch, "velocity needs one outer function per axis");
    }
    for (const Coefficient* c : {&m0_, &m1_}) {
      if (c->components.size() != 1) throw Error(Errc::dim_mismatch, "rate needs exactly one outer function");
    }
    for (const Coefficient* c : {&v0_, &v1_, &m0_, &m1_}) {
      if (c->kernel.dim != dim_) throw Error(Errc::dim_mismatch, "kernel dimension differs from model dimension");
    }
    set_h(h);
  }

  std::size_t dim() const { return dim_; }
  double h() const { return h_; }
  const Coefficient& v0() const { return v0_; }
  const Coefficient& v1() const { return v1_; }
  const Coefficient& m0() const { return m0_; }
  const Coefficient& m1() const { return m1_; }
  const std::optional<CrowdTerm>& crowd() const { return crowd_; }

  // True when v1 and m1 are identically zero, so h has no effect at all.
  bool perturbation_is_zero() const {
    for (const Coefficient* c : {&v1_, &m1_}) {
      for (const auto& u : c->components) {
        if (u.name != "constant" || u.at_zero != 0.0) return false;
      }
    }
    return true;
  }

  void set_h(double h) {
    if (!(h > -0.5 && h < 0.5)) throw Error(Errc::h_out_of_range, "h must lie in (-1/2, 1/2)");
    h_ = h;
  }

  FieldModel with_h(double h) const {
    FieldModel m = *this;
    m.set_h(h);
    return m;
  }

  void set_crowd(CrowdTerm c) {
    if (dim_ != 2) throw Error(Errc::wrong_dimension, "crowd term needs d = 2");
    crowd_ = std::move(c);
  }

 private:
  std::size_t dim_;
  Coefficient v0_, v1_, m0_, m1_;
  std::optional<CrowdTerm> crowd_;
  double h_ = 0.0;
};

struct Coefficients {
  VectorField b;
  ScalarField w;
};

// Coefficients frozen at mu. The crowd heading is the direction of the kernel velocity at x,
// falling back to the configured default where that velocity vanishes.
inline Coefficients perturbed_coefficients(const FieldModel& model, const ParticleMeasure& mu) {
  const std::size_t d = model.dim();
  const double h = model.h();
  struct Term {
    double scale;
    std::vector<OuterFunction> u;
    ScalarField k;
  };
  std::vector<Term> vel, rate;
  vel.push_back({1.0, model.v0().components, kernel_convolve(model.v0().kernel, mu)});
  if (h != 0.0) vel.push_back({h, model.v1().components, kernel_convolve(model.v1().kernel, mu)});
  rate.push_back({1.0, model.m0().components, kernel_convolve(model.m0().kernel, mu)});
  if (h != 0.0) rate.push_back({h, model.m1().components, kernel_convolve(model.m1().kernel, mu)});

  Coefficients out;
  auto base_value = [vel, d](ConstPoint x, MutPoint o) {
    std::fill(o.begin(), o.end(), 0.0);
    for (const Term& t : vel) {
      const double kx = t.k.value(x);
      for (std::size_t i = 0; i < d; ++i) o[i] += t.scale * t.u[i](kx);
    }
  };
  auto base_jacobian = [vel, d](ConstPoint x, MutPoint J) {
    std::fill(J.begin(), J.end(), 0.0);
    std::vector<double> g(d);
    for (const Term& t : vel) {
      const double kx = t.k.value(x);
      t.k.gradient(x, g);
      for (std::size_t i = 0; i < d; ++i) {
        const double du = t.scale * t.u[i].derivative(kx);
        for (std::size_t j = 0; j < d; ++j) J[i * d + j] += du * g[j];
      }
    }
  };
  out.b.dim = d;
  if (model.crowd()) {
    const CrowdTerm c = *model.crowd();
    CrowdParams p;
    p.radius = c.radius;
    p.heading = [base_value, c](ConstPoint x, MutPoint hd) {
      base_value(x, hd);
      if (std::hypot(hd[0], hd[1]) < 1e-12) {
        hd[0] = c.default_heading[0];
        hd[1] = c.default_heading[1];
      }
    };
    const VectorField crowd = crowd_velocity(mu, p);
    out.b.value = [base_value, crowd, s = c.strength](ConstPoint x, MutPoint o) {
      double cv[2];
      base_value(x, o);
      crowd.value(x, MutPoint(cv, 2));
      o[0] += s * cv[0];
      o[1] += s * cv[1];
    };
    out.b.jacobian = [base_jacobian, crowd, s = c.strength](ConstPoint x, MutPoint J) {
      double cj[4];
      base_jacobian(x, J);
      crowd.jacobian(x, MutPoint(cj, 4));
      for (std::size_t i = 0; i < 4; ++i) J[i] += s * cj[i];
    };
  } else {
    out.b.value = base_value;
    out.b.jacobian = base_jacobian;
  }
  out.w.dim = d;
  out.w.value = [rate](ConstPoint x) {
    double s = 0.0;
    for (const Term& t : rate) s += t.scale * t.u[0](t.k.value(x));
    return s;
  };
  out.w.gradient = [rate, d](ConstPoint x, MutPoint g) {
    std::fill(g.begin(), g.end(), 0.0);
    std::vector<double> gk(d);
    for (const Term& t : rate) {
      t.k.gradient(x, gk);
      const double du = t.scale * t.u[0].derivative(t.k.value(x));
      for (std::size_t j = 0; j < d; ++j) g[j] += du * gk[j];
    }
  };
  return out;
}

}  // namespace measure_flow
