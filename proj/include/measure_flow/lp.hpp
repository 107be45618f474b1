#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

namespace measure_flow {

enum class LpStatus { optimal, infeasible, unbounded, iteration_limit };

struct LpSolution {
  LpStatus status = LpStatus::infeasible;
  double value = 0.0;
  std::vector<double> x;
};

// Dense two-phase tableau simplex for
//   maximize c.x  subject to  A x <= b,  x >= 0.
// Dantzig pricing; after a run of degenerate pivots the entering choice switches to
// Bland's smallest-index rule until progress resumes, so cycling cannot occur.
class DenseSimplex {
 public:
  DenseSimplex(const std::vector<std::vector<double>>& A, const std::vector<double>& b,
               const std::vector<double>& c, double eps = 1e-10)
      : m_(b.size()), n_(c.size()), eps_(eps), cols_(n_ + 2), basis_(m_), nonbasis_(n_ + 1),
        table_((m_ + 2) * cols_, 0.0) {
    for (std::size_t i = 0; i < m_; ++i) {
      // rows are equilibrated to unit max coefficient
      double scale = 0.0;
      for (std::size_t j = 0; j < n_; ++j) scale = std::max(scale, std::abs(A[i][j]));
      scale = scale > 0.0 ? 1.0 / scale : 1.0;
      for (std::size_t j = 0; j < n_; ++j) at(i, j) = A[i][j] * scale;
      basis_[i] = static_cast<long>(n_ + i);
      at(i, n_) = -1.0;
      at(i, n_ + 1) = b[i] * scale;
    }
    for (std::size_t j = 0; j < n_; ++j) {
      nonbasis_[j] = static_cast<long>(j);
      at(m_, j) = -c[j];
    }
    nonbasis_[n_] = -1;
    at(m_ + 1, n_) = 1.0;
  }

  LpSolution solve(std::size_t max_pivots = 1'000'000) {
    LpSolution out;
    max_pivots_ = max_pivots;
    std::size_t r = 0;
    for (std::size_t i = 1; i < m_; ++i) {
      if (at(i, n_ + 1) < at(r, n_ + 1)) r = i;
    }
    if (m_ > 0 && at(r, n_ + 1) < -eps_) {
      pivot(r, n_);
      const int phase1 = run(2);
      if (phase1 == 2) {
        out.status = LpStatus::iteration_limit;
        return out;
      }
      if (phase1 != 0 || at(m_ + 1, n_ + 1) < -eps_) {
        out.status = LpStatus::infeasible;
        return out;
      }
      for (std::size_t i = 0; i < m_; ++i) {
        if (basis_[i] == -1) {
          std::size_t s = 0;
          for (std::size_t j = 1; j <= n_; ++j) {
            if (better(at(i, j), nonbasis_[j], at(i, s), nonbasis_[s])) s = j;
          }
          pivot(i, s);
        }
      }
    }
    const int phase2 = run(1);
    out.x.assign(n_, 0.0);
    for (std::size_t i = 0; i < m_; ++i) {
      if (basis_[i] >= 0 && static_cast<std::size_t>(basis_[i]) < n_) {
        out.x[static_cast<std::size_t>(basis_[i])] = at(i, n_ + 1);
      }
    }
    if (phase2 == 2) {
      out.status = LpStatus::iteration_limit;
    } else if (phase2 == 1) {
      out.status = LpStatus::unbounded;
      out.value = std::numeric_limits<double>::infinity();
    } else {
      out.status = LpStatus::optimal;
      out.value = at(m_, n_ + 1);
    }
    return out;
  }

 private:
  double& at(std::size_t i, std::size_t j) { return table_[i * cols_ + j]; }

  static bool better(double a, long ia, double b, long ib) {
    return a < b || (a == b && ia < ib);
  }

  void pivot(std::size_t r, std::size_t s) {
    ++pivots_;
    const double inv = 1.0 / at(r, s);
    double* row_r = &table_[r * cols_];
    for (std::size_t i = 0; i < m_ + 2; ++i) {
      if (i == r) continue;
      double* row_i = &table_[i * cols_];
      const double f = row_i[s] * inv;
      if (std::abs(f) <= 0.0) continue;
      for (std::size_t j = 0; j < cols_; ++j) row_i[j] -= row_r[j] * f;
      row_i[s] = -f;
    }
    for (std::size_t j = 0; j < cols_; ++j) row_r[j] *= inv;
    row_r[s] = inv;
    std::swap(basis_[r], nonbasis_[s]);
  }

  // 0 = optimal, 1 = unbounded, 2 = pivot limit.
  int run(int phase) {
    const std::size_t obj = m_ + static_cast<std::size_t>(phase) - 1;
    for (;;) {
      if (pivots_ > max_pivots_) return 2;
      const bool bland = degenerate_run_ > kDegenerateLimit;
      long s = -1;
      for (std::size_t j = 0; j <= n_; ++j) {
        if (nonbasis_[j] == -phase) continue;
        const double rc = at(obj, j);
        if (rc >= -eps_) continue;
        if (s < 0) {
          s = static_cast<long>(j);
          continue;
        }
        const auto cur = static_cast<std::size_t>(s);
        if (bland ? nonbasis_[j] < nonbasis_[cur] : rc < at(obj, cur)) s = static_cast<long>(j);
      }
      if (s < 0) return 0;
      const auto sc = static_cast<std::size_t>(s);
      // ties go to the larger pivot element, or to the smaller basis index under Bland
      long r = -1;
      double best = 0.0;
      for (std::size_t i = 0; i < m_; ++i) {
        const double a = at(i, sc);
        if (a <= kPivotTol) continue;
        const double ratio = at(i, n_ + 1) / a;
        bool take = r < 0 || ratio < best - eps_;
        if (!take && ratio <= best + eps_) {
          const auto cur = static_cast<std::size_t>(r);
          take = bland ? basis_[i] < basis_[cur] : a > at(cur, sc);
        }
        if (take) {
          r = static_cast<long>(i);
          best = ratio;
        }
      }
      if (r < 0) return 1;
      degenerate_run_ = best <= eps_ ? degenerate_run_ + 1 : 0;
      pivot(static_cast<std::size_t>(r), sc);
    }
  }

  std::size_t m_, n_;
  double eps_;
  std::size_t cols_;
  std::vector<long> basis_, nonbasis_;
  std::vector<double> table_;
  std::size_t pivots_ = 0;
  std::size_t max_pivots_ = 0;
  std::size_t degenerate_run_ = 0;
  static constexpr std::size_t kDegenerateLimit = 50;
  static constexpr double kPivotTol = 1e-9;
};

}  // namespace measure_flow
