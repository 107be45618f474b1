#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "measure_flow/error.hpp"
#include "measure_flow/measure.hpp"

namespace measure_flow {

// Scalar field on R^d with its gradient.
struct ScalarField {
  std::size_t dim = 1;
  std::function<double(ConstPoint)> value;
  std::function<void(ConstPoint, MutPoint)> gradient;
};

// Vector field R^d -> R^d. `jacobian` writes d*d entries row-major (d out_i / d x_j).
struct VectorField {
  std::size_t dim = 1;
  std::function<void(ConstPoint, MutPoint)> value;
  std::function<void(ConstPoint, MutPoint)> jacobian;
};

struct TimeScalarField {
  std::size_t dim = 1;
  std::function<double(double, ConstPoint)> value;
};

struct TimeVectorField {
  std::size_t dim = 1;
  std::function<void(double, ConstPoint, MutPoint)> value;
  std::function<void(double, ConstPoint, MutPoint)> jacobian;  // optional
};

inline ScalarField constant_scalar_field(std::size_t dim, double c) {
  return {dim, [c](ConstPoint) { return c; }, [](ConstPoint, MutPoint g) { std::fill(g.begin(), g.end(), 0.0); }};
}

inline VectorField constant_vector_field(std::vector<double> c) {
  const std::size_t d = c.size();
  return {d, [c](ConstPoint, MutPoint out) { std::copy(c.begin(), c.end(), out.begin()); },
          [](ConstPoint, MutPoint J) { std::fill(J.begin(), J.end(), 0.0); }};
}

inline TimeVectorField constant_in_time(VectorField f) {
  TimeVectorField out;
  out.dim = f.dim;
  out.value = [v = f.value](double, ConstPoint x, MutPoint o) { v(x, o); };
  if (f.jacobian) out.jacobian = [j = f.jacobian](double, ConstPoint x, MutPoint o) { j(x, o); };
  return out;
}

inline TimeScalarField constant_in_time(ScalarField f) {
  return {f.dim, [v = f.value](double, ConstPoint x) { return v(x); }};
}

inline TimeVectorField constant_velocity(std::vector<double> c) { return constant_in_time(constant_vector_field(std::move(c))); }

inline TimeScalarField constant_rate(std::size_t dim, double c) {
  return {dim, [c](double, ConstPoint) { return c; }};
}

// Tensor-product sampling grid on a box [lower, upper] with `points` samples per axis.
struct BoxGrid {
  std::vector<double> lower;
  std::vector<double> upper;
  std::size_t points = 0;

  std::size_t dim() const { return lower.size(); }

  std::size_t size() const {
    std::size_t n = 1;
    for (std::size_t k = 0; k < dim(); ++k) n *= points;
    return dim() == 0 ? 0 : n;
  }

  void validate() const {
    if (lower.empty() || lower.size() != upper.size() || points == 0) {
      throw Error(Errc::empty_grid, "sampling grid has no points");
    }
    for (std::size_t k = 0; k < dim(); ++k) {
      if (!(lower[k] <= upper[k])) throw Error(Errc::empty_grid, "sampling box has lower > upper");
    }
  }

  void node(std::size_t flat, MutPoint out) const {
    for (std::size_t k = 0; k < dim(); ++k) {
      const std::size_t idx = flat % points;
      flat /= points;
      out[k] = points == 1 ? 0.5 * (lower[k] + upper[k])
                           : lower[k] + (upper[k] - lower[k]) * static_cast<double>(idx) / static_cast<double>(points - 1);
    }
  }

  std::vector<double> nodes() const {
    validate();
    std::vector<double> out(size() * dim());
    for (std::size_t i = 0; i < size(); ++i) node(i, MutPoint(out.data() + i * dim(), dim()));
    return out;
  }

  static BoxGrid cube(std::size_t dim, double lo, double hi, std::size_t points) {
    return {std::vector<double>(dim, lo), std::vector<double>(dim, hi), points};
  }
};

// Bounding box of a measure's support, padded by `pad` on every side.
inline BoxGrid bounding_grid(const ParticleMeasure& mu, double pad, std::size_t points) {
  BoxGrid g{std::vector<double>(mu.dim(), 0.0), std::vector<double>(mu.dim(), 0.0), points};
  if (mu.empty()) {
    for (std::size_t k = 0; k < mu.dim(); ++k) {
      g.lower[k] = -pad;
      g.upper[k] = pad;
    }
    return g;
  }
  for (std::size_t k = 0; k < mu.dim(); ++k) {
    double lo = mu.point(0)[k], hi = lo;
    for (std::size_t i = 1; i < mu.size(); ++i) {
      lo = std::min(lo, mu.point(i)[k]);
      hi = std::max(hi, mu.point(i)[k]);
    }
    g.lower[k] = lo - pad;
    g.upper[k] = hi + pad;
  }
  return g;
}

inline double norm2(ConstPoint v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Frobenius norm; bounds the operator norm from above.
inline double frobenius(ConstPoint m) { return norm2(m); }

inline double sampled_sup(const BoxGrid& grid, const std::function<double(ConstPoint)>& f) {
  grid.validate();
  std::vector<double> x(grid.dim());
  double best = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    grid.node(i, x);
    best = std::max(best, std::abs(f(x)));
  }
  return best;
}

inline double sampled_sup_norm(const BoxGrid& grid, const VectorField& f) {
  std::vector<double> v(f.dim);
  return sampled_sup(grid, [&](ConstPoint x) {
    f.value(x, v);
    return norm2(v);
  });
}

inline double sampled_sup_jacobian(const BoxGrid& grid, const VectorField& f) {
  std::vector<double> J(f.dim * f.dim);
  return sampled_sup(grid, [&](ConstPoint x) {
    f.jacobian(x, J);
    return frobenius(J);
  });
}

// Snapshot of a time-dependent field at a fixed time.
inline VectorField at_time(const TimeVectorField& b, double t) {
  VectorField f;
  f.dim = b.dim;
  f.value = [v = b.value, t](ConstPoint x, MutPoint o) { v(t, x, o); };
  if (b.jacobian) {
    f.jacobian = [j = b.jacobian, t](ConstPoint x, MutPoint o) { j(t, x, o); };
  } else {
    // central differences
    f.jacobian = [v = b.value, t, d = b.dim](ConstPoint x, MutPoint J) {
      std::vector<double> xp(x.begin(), x.end()), fp(d), fm(d);
      for (std::size_t j = 0; j < d; ++j) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
        xp[j] = x[j] + h;
        v(t, xp, fp);
        xp[j] = x[j] - h;
        v(t, xp, fm);
        xp[j] = x[j];
        for (std::size_t i = 0; i < d; ++i) J[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
      }
    };
  }
  return f;
}

inline std::function<double(ConstPoint)> at_time(const TimeScalarField& w, double t) {
  return [v = w.value, t](ConstPoint x) { return v(t, x); };
}

}  // namespace measure_flow
