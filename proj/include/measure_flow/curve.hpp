#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "measure_flow/error.hpp"
#include "measure_flow/measure.hpp"

namespace measure_flow {

// Uniform time grid 0 = t_0 < ... < t_n = t_end with t_k = k * dt.
class TimeGrid {
 public:
  TimeGrid() = default;

  TimeGrid(double t_end, double dt) : t_end_(t_end), dt_(dt) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw Error(Errc::invalid_argument, "dt must be positive");
    if (!(t_end > 0.0) || !std::isfinite(t_end)) throw Error(Errc::invalid_argument, "t_end must be positive");
    const double ratio = t_end / dt;
    steps_ = static_cast<std::size_t>(std::llround(ratio));
    if (steps_ == 0 || std::abs(ratio - static_cast<double>(steps_)) > 1e-9 * std::max(1.0, ratio)) {
      throw Error(Errc::invalid_argument, "t_end must be an integer multiple of dt");
    }
  }

  double t_end() const { return t_end_; }
  double dt() const { return dt_; }
  std::size_t steps() const { return steps_; }
  std::size_t nodes() const { return steps_ + 1; }
  double time(std::size_t k) const { return k == steps_ ? t_end_ : static_cast<double>(k) * dt_; }

  bool operator==(const TimeGrid& o) const { return steps_ == o.steps_ && t_end_ == o.t_end_; }

 private:
  double t_end_ = 1.0;
  double dt_ = 1.0;
  std::size_t steps_ = 1;
};

// Curve t -> mu_t sampled on a grid; every snapshot carries the same particle ids.
struct MeasureCurve {
  TimeGrid grid;
  std::vector<ParticleMeasure> snapshots;

  std::size_t dim() const { return snapshots.empty() ? 1 : snapshots.front().dim(); }
  const ParticleMeasure& at(std::size_t k) const { return snapshots.at(k); }

  static MeasureCurve constant(const TimeGrid& grid, const ParticleMeasure& mu) {
    return {grid, std::vector<ParticleMeasure>(grid.nodes(), mu)};
  }
};

inline void require_same_grid(const MeasureCurve& a, const MeasureCurve& b) {
  if (!(a.grid == b.grid) || a.snapshots.size() != b.snapshots.size()) {
    throw Error(Errc::grid_mismatch, "curves live on different time grids");
  }
}

// Per-node alpha*a + beta*b.
inline MeasureCurve combine_curves(double alpha, const MeasureCurve& a, double beta, const MeasureCurve& b) {
  require_same_grid(a, b);
  MeasureCurve out{a.grid, {}};
  out.snapshots.reserve(a.snapshots.size());
  for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
    out.snapshots.push_back(linear_combination(alpha, a.snapshots[k], beta, b.snapshots[k]));
  }
  return out;
}

}  // namespace measure_flow
