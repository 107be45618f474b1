#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "measure_flow/error.hpp"

namespace measure_flow {

using ConstPoint = std::span<const double>;
using MutPoint = std::span<double>;

// Point map r : R^d -> R^d, writes r(x) into the output span.
using PointMap = std::function<void(ConstPoint, MutPoint)>;
using ScalarFunction = std::function<double(ConstPoint)>;

// Signed Radon measure represented as a finite weighted Dirac ensemble
//   mu = sum_i a_i delta_{x_i},  x_i in R^d.
// Positions are stored row-major in one buffer. Coincident particles and zero
// weights are kept as-is; `compact` merges them explicitly.
class ParticleMeasure {
 public:
  explicit ParticleMeasure(std::size_t dim = 1) : dim_(dim) {
    if (dim == 0) throw Error(Errc::invalid_argument, "dimension must be positive");
  }

  ParticleMeasure(std::size_t dim, std::vector<double> coords, std::vector<double> weights)
      : dim_(dim), coords_(std::move(coords)), weights_(std::move(weights)) {
    if (dim == 0) throw Error(Errc::invalid_argument, "dimension must be positive");
    if (coords_.size() != weights_.size() * dim_) {
      throw Error(Errc::length_mismatch, "coordinate buffer holds " + std::to_string(coords_.size()) +
                                             " values for " + std::to_string(weights_.size()) +
                                             " particles in dimension " + std::to_string(dim_));
    }
    for (double c : coords_) {
      if (!std::isfinite(c)) throw Error(Errc::non_finite, "particle coordinate is not finite");
    }
    for (double w : weights_) {
      if (!std::isfinite(w)) throw Error(Errc::non_finite, "particle weight is not finite");
    }
  }

  static ParticleMeasure dirac(ConstPoint x, double weight = 1.0) {
    return ParticleMeasure(x.size(), std::vector<double>(x.begin(), x.end()), {weight});
  }
  static ParticleMeasure dirac(double x, double weight = 1.0) {
    return ParticleMeasure(1, {x}, {weight});
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  bool empty() const noexcept { return weights_.empty(); }

  ConstPoint point(std::size_t i) const { return {coords_.data() + i * dim_, dim_}; }
  double weight(std::size_t i) const { return weights_[i]; }

  const std::vector<double>& coords() const noexcept { return coords_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  void add(ConstPoint x, double w) {
    if (x.size() != dim_) throw Error(Errc::dim_mismatch, "particle has wrong dimension");
    if (!std::isfinite(w)) throw Error(Errc::non_finite, "particle weight is not finite");
    for (double c : x) {
      if (!std::isfinite(c)) throw Error(Errc::non_finite, "particle coordinate is not finite");
    }
    coords_.insert(coords_.end(), x.begin(), x.end());
    weights_.push_back(w);
  }

 private:
  std::size_t dim_;
  std::vector<double> coords_;
  std::vector<double> weights_;
};

inline double euclidean_distance(ConstPoint x, ConstPoint y) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double d = x[k] - y[k];
    s += d * d;
  }
  return std::sqrt(s);
}

inline double total_variation(const ParticleMeasure& mu) {
  double s = 0.0;
  for (double w : mu.weights()) s += std::abs(w);
  return s;
}

inline double total_mass(const ParticleMeasure& mu) {
  return std::accumulate(mu.weights().begin(), mu.weights().end(), 0.0);
}

inline ParticleMeasure push_forward(const ParticleMeasure& mu, const PointMap& r) {
  std::vector<double> coords(mu.coords().size());
  const std::size_t d = mu.dim();
  for (std::size_t i = 0; i < mu.size(); ++i) {
    MutPoint out(coords.data() + i * d, d);
    r(mu.point(i), out);
    for (double c : out) {
      if (!std::isfinite(c)) {
        throw Error(Errc::non_finite_map, "map is not finite at particle " + std::to_string(i));
      }
    }
  }
  return ParticleMeasure(d, std::move(coords), mu.weights());
}

inline ParticleMeasure reweight(const ParticleMeasure& mu, std::span<const double> factors) {
  if (factors.size() != mu.size()) {
    throw Error(Errc::length_mismatch, "got " + std::to_string(factors.size()) + " factors for " +
                                           std::to_string(mu.size()) + " particles");
  }
  std::vector<double> w(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!std::isfinite(factors[i]) || factors[i] <= 0.0) {
      throw Error(Errc::invalid_argument, "reweight factors must be finite and positive");
    }
    w[i] = factors[i] * mu.weight(i);
  }
  return ParticleMeasure(mu.dim(), mu.coords(), std::move(w));
}

// alpha*mu + beta*nu as the concatenated particle list (mu's particles first).
inline ParticleMeasure linear_combination(double alpha, const ParticleMeasure& mu, double beta,
                                          const ParticleMeasure& nu) {
  if (mu.dim() != nu.dim()) {
    throw Error(Errc::dim_mismatch, "cannot combine measures of dimension " + std::to_string(mu.dim()) +
                                        " and " + std::to_string(nu.dim()));
  }
  std::vector<double> coords;
  coords.reserve(mu.coords().size() + nu.coords().size());
  coords.insert(coords.end(), mu.coords().begin(), mu.coords().end());
  coords.insert(coords.end(), nu.coords().begin(), nu.coords().end());
  std::vector<double> w;
  w.reserve(mu.size() + nu.size());
  for (double a : mu.weights()) w.push_back(alpha * a);
  for (double b : nu.weights()) w.push_back(beta * b);
  return ParticleMeasure(mu.dim(), std::move(coords), std::move(w));
}

inline ParticleMeasure difference(const ParticleMeasure& mu, const ParticleMeasure& nu) {
  return linear_combination(1.0, mu, -1.0, nu);
}

inline ParticleMeasure scaled(const ParticleMeasure& mu, double alpha) {
  std::vector<double> w(mu.weights());
  for (double& a : w) a *= alpha;
  return ParticleMeasure(mu.dim(), mu.coords(), std::move(w));
}

inline double pair(const ParticleMeasure& mu, const ScalarFunction& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double v = f(mu.point(i));
    if (!std::isfinite(v)) {
      throw Error(Errc::non_finite_field, "test function is not finite at particle " + std::to_string(i));
    }
    s += mu.weight(i) * v;
  }
  return s;
}

// Merges particles whose positions agree within `tol` (max-norm, chained by sorted
// order) and drops zero weights. Output is sorted lexicographically by position.
inline ParticleMeasure compact(const ParticleMeasure& mu, double tol = 1e-12) {
  const std::size_t d = mu.dim();
  std::vector<std::size_t> order(mu.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto pa = mu.point(a);
    auto pb = mu.point(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  });
  auto close = [&](ConstPoint x, ConstPoint y) {
    for (std::size_t k = 0; k < d; ++k) {
      if (std::abs(x[k] - y[k]) > tol) return false;
    }
    return true;
  };
  ParticleMeasure out(d);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    double w = mu.weight(order[i]);
    while (j < order.size() && close(mu.point(order[j]), mu.point(order[i]))) {
      w += mu.weight(order[j]);
      ++j;
    }
    if (w != 0.0) out.add(mu.point(order[i]), w);
    i = j;
  }
  return out;
}

inline ParticleMeasure positive_part(const ParticleMeasure& mu) {
  ParticleMeasure out(mu.dim());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu.weight(i) > 0.0) out.add(mu.point(i), mu.weight(i));
  }
  return out;
}

inline ParticleMeasure negative_part(const ParticleMeasure& mu) {
  ParticleMeasure out(mu.dim());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (mu.weight(i) < 0.0) out.add(mu.point(i), -mu.weight(i));
  }
  return out;
}

}  // namespace measure_flow
