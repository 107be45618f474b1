#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "measure_flow/error.hpp"
#include "measure_flow/fields.hpp"
#include "measure_flow/lp.hpp"
#include "measure_flow/measure.hpp"
#include "measure_flow/min_cost_flow.hpp"

namespace measure_flow {

inline constexpr std::size_t kMaxNormParticles = 2000;

enum class LpFlag { solved, degenerate };

struct FlatNormResult {
  double value = 0.0;
  std::vector<double> optimal_test_values;  // f(x_i) of a maximizing test function
  LpFlag lp_status = LpFlag::solved;
};

// Flat (bounded-Lipschitz) norm
//   sup { sum_i a_i f_i : |f_i| <= 1, |f_i - f_j| <= |x_i - x_j| }.
// Solved exactly through its min-cost-flow dual: particles exchange mass at cost
// |x_i - x_j| or dump it to a ground node at cost 1. In one dimension only
// neighbouring particles need an edge; otherwise the graph is complete.
inline FlatNormResult flat_norm(const ParticleMeasure& mu, bool force_complete_graph = false) {
  FlatNormResult out;
  const std::size_t n = mu.size();
  if (n == 0) return out;
  if (n > kMaxNormParticles) {
    throw Error(Errc::invalid_argument, "flat norm limited to " + std::to_string(kMaxNormParticles) +
                                            " particles, got " + std::to_string(n));
  }
  const std::size_t ground = n;
  UndirectedFlowProblem net(n + 1);
  double mass = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    net.set_supply(i, mu.weight(i));
    mass += mu.weight(i);
    net.add_edge(i, ground, 1.0);
  }
  net.set_supply(ground, -mass);
  if (mu.dim() == 1 && !force_complete_graph) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mu.point(a)[0] < mu.point(b)[0]; });
    for (std::size_t k = 0; k + 1 < n; ++k) {
      net.add_edge(order[k], order[k + 1], mu.point(order[k + 1])[0] - mu.point(order[k])[0]);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double d = euclidean_distance(mu.point(i), mu.point(j));
        if (d < 2.0) net.add_edge(i, j, d);  // longer edges never beat routing via ground
      }
    }
  }
  auto res = net.solve(ground);
  out.value = res.cost;
  out.optimal_test_values.assign(res.prices.begin(), res.prices.begin() + static_cast<long>(n));
  for (double& f : out.optimal_test_values) f = std::clamp(f, -1.0, 1.0);
  const double scale = std::max(1.0, total_variation(mu));
  if (res.unrouted > 1e-12 * scale || std::abs(res.cost - res.dual_value) > 1e-9 * scale) {
    out.lp_status = LpFlag::degenerate;
  }
  return out;
}

inline double flat_distance(const ParticleMeasure& mu, const ParticleMeasure& nu) {
  if (mu.dim() != nu.dim()) throw Error(Errc::dim_mismatch, "flat distance between different dimensions");
  return flat_norm(difference(mu, nu)).value;
}

struct JetBoundOptions {
  // Above this many particles, Hölder/Taylor constraints are only imposed between each
  // particle and its nearest neighbours. Dropping constraints keeps the bound valid.
  std::size_t complete_up_to = 24;
  std::size_t neighbours = 8;
  // Particles closer than this (relative to max(1, support extent)) are snapped together
  // before the LP; the displacement cost is added back to the bound.
  double snap_radius = 1e-5;
};

namespace detail {

// Greedy snapping in lexicographic order. A function with |grad f| <= 1 changes its pairing by
// at most sum |a_i| |x_i - x_rep|_1 under the snap, which is accumulated in `penalty`.
inline ParticleMeasure snap_close_particles(const ParticleMeasure& mu, double radius, double& penalty) {
  const std::size_t d = mu.dim();
  std::vector<std::size_t> order(mu.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    auto pa = mu.point(a);
    auto pb = mu.point(b);
    return std::lexicographical_compare(pa.begin(), pa.end(), pb.begin(), pb.end());
  });
  ParticleMeasure out(d);
  std::size_t i = 0;
  while (i < order.size()) {
    const auto head = mu.point(order[i]);
    double w = mu.weight(order[i]);
    std::size_t j = i + 1;
    while (j < order.size() && mu.point(order[j])[0] - head[0] <= radius) {
      double r1 = 0.0;  // l1 distance covers any gradient norm used for the unit ball
      for (std::size_t k = 0; k < d; ++k) r1 += std::abs(mu.point(order[j])[k] - head[k]);
      if (r1 > radius) break;
      w += mu.weight(order[j]);
      penalty += std::abs(mu.weight(order[j])) * r1;
      ++j;
    }
    if (w != 0.0) out.add(head, w);
    i = j;
  }
  return out;
}

}  // namespace detail

// Upper bound on the dual norm over the C^{1+alpha} unit ball
//   ||f||_inf + ||grad f||_inf + |grad f|_alpha <= 1.
// Any such f yields a jet (f_i, g_i = grad f(x_i)) with |f_i| <= A, |g_i|_inf <= B,
// |g_i - g_j|_inf <= C r^alpha and |f_j - f_i - g_i.(x_j - x_i)| <= C r^{1+alpha}/(1+alpha),
// A + B + C <= 1. The LP over those jets therefore dominates the true norm.
inline double jet_upper_bound(const ParticleMeasure& mu, double alpha, const JetBoundOptions& opt = {}) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(Errc::invalid_argument, "alpha must lie in (0, 1]");
  if (mu.empty()) return 0.0;
  // The bound is positively homogeneous, so work with unit total variation.
  const double scale = total_variation(mu);
  if (scale == 0.0) return 0.0;
  double extent = 1.0;
  for (std::size_t k = 0; k < mu.dim(); ++k) {
    double lo = mu.point(0)[k], hi = lo;
    for (std::size_t i = 1; i < mu.size(); ++i) {
      lo = std::min(lo, mu.point(i)[k]);
      hi = std::max(hi, mu.point(i)[k]);
    }
    extent = std::max(extent, hi - lo);
  }
  double penalty = 0.0;
  const ParticleMeasure m = detail::snap_close_particles(scaled(mu, 1.0 / scale), opt.snap_radius * extent, penalty);
  const std::size_t n = m.size();
  if (n == 0) return scale * penalty;
  const std::size_t d = m.dim();
  // free variables split as f = fp - fm, g = gp - gm so that x = 0 is feasible
  const std::size_t nf = n, ng = n * d;
  const std::size_t nv = 2 * (nf + ng) + 3;
  const std::size_t iA = nv - 3, iB = nv - 2, iC = nv - 1;
  auto Fp = [](std::size_t i) { return i; };
  auto Fm = [nf](std::size_t i) { return nf + i; };
  auto Gp = [nf, d](std::size_t i, std::size_t k) { return 2 * nf + i * d + k; };
  auto Gm = [nf, ng, d](std::size_t i, std::size_t k) { return 2 * nf + ng + i * d + k; };

  std::vector<std::vector<double>> A;
  std::vector<double> b;
  auto row = [&]() -> std::vector<double>& {
    A.emplace_back(nv, 0.0);
    b.push_back(0.0);
    return A.back();
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (double s : {1.0, -1.0}) {
      auto& r = row();
      r[Fp(i)] = s;
      r[Fm(i)] = -s;
      r[iA] = -1.0;
    }
    for (std::size_t k = 0; k < d; ++k) {
      for (double s : {1.0, -1.0}) {
        auto& r = row();
        r[Gp(i, k)] = s;
        r[Gm(i, k)] = -s;
        r[iB] = -1.0;
      }
    }
  }
  {
    auto& r = row();
    r[iA] = r[iB] = r[iC] = 1.0;
    b.back() = 1.0;
  }
  // each half of a split variable is at most 1; keeps the polytope bounded
  for (std::size_t v = 0; v < iA; ++v) {
    auto& r = row();
    r[v] = 1.0;
    b.back() = 1.0;
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (n <= opt.complete_up_to) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  } else {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      const std::size_t k = std::min(opt.neighbours + 1, n);
      std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(), [&](std::size_t a, std::size_t c) {
        return euclidean_distance(m.point(i), m.point(a)) < euclidean_distance(m.point(i), m.point(c));
      });
      for (std::size_t q = 0; q < k; ++q) {
        if (idx[q] != i) pairs.emplace_back(std::min(i, idx[q]), std::max(i, idx[q]));
      }
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  }

  for (auto [i, j] : pairs) {
    const double r = euclidean_distance(m.point(i), m.point(j));
    const double holder = std::pow(r, alpha);
    const double taylor = std::pow(r, 1.0 + alpha) / (1.0 + alpha);
    for (std::size_t k = 0; k < d; ++k) {
      for (double s : {1.0, -1.0}) {
        auto& rr = row();
        rr[Gp(i, k)] = s;
        rr[Gm(i, k)] = -s;
        rr[Gp(j, k)] = -s;
        rr[Gm(j, k)] = s;
        rr[iC] = -holder;
      }
    }
    // expansions around x_i and around x_j
    for (int side = 0; side < 2; ++side) {
      const std::size_t p = side == 0 ? i : j;
      const std::size_t q = side == 0 ? j : i;
      for (double s : {1.0, -1.0}) {
        // s * (f_q - f_p - g_p.delta) <= C * taylor
        auto& rr = row();
        rr[Fp(q)] += s;
        rr[Fm(q)] -= s;
        rr[Fp(p)] -= s;
        rr[Fm(p)] += s;
        for (std::size_t k = 0; k < d; ++k) {
          const double delta = m.point(q)[k] - m.point(p)[k];
          rr[Gp(p, k)] -= s * delta;
          rr[Gm(p, k)] += s * delta;
        }
        rr[iC] = -taylor;
      }
    }
  }

  std::vector<double> c(nv, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    c[Fp(i)] = m.weight(i);
    c[Fm(i)] = -m.weight(i);
  }
  // Solve the dual  min b.y  s.t.  A^T y >= c, y >= 0  (far fewer rows than the primal).
  // Every primal variable lies in [0, 1], so for any y >= 0
  //   b.y + sum_j max(0, c_j - (A^T y)_j)
  // bounds the primal optimum from above even when y is only approximately feasible.
  const std::size_t m_rows = A.size();
  std::vector<std::vector<double>> At(nv, std::vector<double>(m_rows));
  std::vector<double> neg_b(m_rows), neg_c(nv);
  for (std::size_t r = 0; r < m_rows; ++r) {
    neg_b[r] = -b[r];
    for (std::size_t v = 0; v < nv; ++v) At[v][r] = -A[r][v];
  }
  for (std::size_t v = 0; v < nv; ++v) neg_c[v] = -c[v];
  auto sol = DenseSimplex(At, neg_c, neg_b).solve(20 * (nv + m_rows));
  if (sol.status != LpStatus::optimal) {
    // near-coincident particles make the constraint matrix badly scaled; coarser snapping
    // keeps the bound valid at a small cost
    if (opt.snap_radius < 1e-2) {
      JetBoundOptions coarser = opt;
      coarser.snap_radius = std::max(10.0 * opt.snap_radius, 1e-12);
      return jet_upper_bound(mu, alpha, coarser);
    }
    throw Error(Errc::lp_failure, "jet bound LP did not certify optimality (status " +
                                      std::to_string(static_cast<int>(sol.status)) + ")");
  }
  double bound = 0.0;
  for (std::size_t r = 0; r < m_rows; ++r) bound += b[r] * std::max(0.0, sol.x[r]);
  for (std::size_t v = 0; v < nv; ++v) {
    double aty = 0.0;
    for (std::size_t r = 0; r < m_rows; ++r) aty += A[r][v] * std::max(0.0, sol.x[r]);
    bound += std::max(0.0, c[v] - aty);
  }
  return scale * (bound + penalty);
}

// Sampled C^{1+alpha} norm: sup|f| + sup|grad f| + max over sampled pairs of
// |grad f(x) - grad f(y)| / |x - y|^alpha. Never exceeds the true norm.
inline double holder_norm_estimate(const ScalarField& f, const BoxGrid& grid, double alpha) {
  grid.validate();
  if (grid.dim() != f.dim) throw Error(Errc::dim_mismatch, "grid and field dimensions differ");
  const std::size_t d = grid.dim();
  const std::size_t N = grid.size();
  const std::vector<double> X = grid.nodes();
  std::vector<double> grads(N * d);
  double sup_f = 0.0, sup_g = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    ConstPoint x(X.data() + i * d, d);
    sup_f = std::max(sup_f, std::abs(f.value(x)));
    MutPoint g(grads.data() + i * d, d);
    f.gradient(x, g);
    sup_g = std::max(sup_g, norm2(g));
  }
  double semi = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double dg = grads[i * d + k] - grads[j * d + k];
        const double dx = X[i * d + k] - X[j * d + k];
        num += dg * dg;
        den += dx * dx;
      }
      if (den > 0.0) semi = std::max(semi, std::sqrt(num) / std::pow(den, 0.5 * alpha));
    }
  }
  return sup_f + sup_g + semi;
}

// Isotropic Gaussian atom A * exp(-|x - c|^2 / (2 s^2)).
struct BumpAtom {
  std::vector<double> center;
  double width = 1.0;
  double amplitude = 1.0;

  double value(ConstPoint x) const {
    double r2 = 0.0;
    for (std::size_t k = 0; k < center.size(); ++k) r2 += (x[k] - center[k]) * (x[k] - center[k]);
    return amplitude * std::exp(-0.5 * r2 / (width * width));
  }

  void gradient(ConstPoint x, MutPoint g) const {
    const double v = value(x);
    for (std::size_t k = 0; k < center.size(); ++k) g[k] = -v * (x[k] - center[k]) / (width * width);
  }

  ScalarField field() const {
    BumpAtom self = *this;
    return {center.size(), [self](ConstPoint x) { return self.value(x); },
            [self](ConstPoint x, MutPoint g) { self.gradient(x, g); }};
  }

  // Closed-form upper bound of the C^{1+alpha} norm:
  // sup|f| = |A|, sup|grad f| = |A| e^{-1/2}/s, Lip(grad f) <= |A|/s^2, and
  // |grad f|_alpha <= Lip^alpha (2 sup|grad f|)^{1-alpha}.
  double norm_upper_bound(double alpha) const {
    const double a = std::abs(amplitude);
    const double g = a * std::exp(-0.5) / width;
    const double lip = a / (width * width);
    return a + g + std::pow(lip, alpha) * std::pow(2.0 * g, 1.0 - alpha);
  }
};

struct BumpDictionary {
  double alpha = 0.5;
  std::vector<BumpAtom> atoms;
  BoxGrid grid;  // box used when norms are estimated by sampling
  double min_width = 1e-3;
  double max_width = 1e3;

  // Default layout: `count` atoms centred on the heaviest particles, widths spread
  // geometrically around the support diameter.
  static BumpDictionary for_measure(const ParticleMeasure& mu, double alpha, std::size_t count = 8) {
    BumpDictionary dict;
    dict.alpha = alpha;
    dict.grid = bounding_grid(mu, 3.0, 41);
    std::vector<std::size_t> order(mu.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(mu.weight(a)) > std::abs(mu.weight(b)); });
    double diam = 0.0;
    for (std::size_t k = 0; k < mu.dim(); ++k) diam = std::max(diam, dict.grid.upper[k] - dict.grid.lower[k] - 6.0);
    const double base = std::max(diam, 1.0);
    for (std::size_t a = 0; a < count; ++a) {
      BumpAtom atom;
      if (mu.empty()) {
        atom.center.assign(mu.dim(), 0.0);
      } else {
        auto p = mu.point(order[a % order.size()]);
        atom.center.assign(p.begin(), p.end());
      }
      atom.width = base * std::pow(2.0, static_cast<double>(a) - 3.0);
      dict.atoms.push_back(std::move(atom));
    }
    return dict;
  }
};

struct ZNormBracket {
  double lower = 0.0;
  double upper = 0.0;
  double flat = 0.0;
  double jet = 0.0;
  BumpAtom best_atom;
};

namespace detail {

inline double atom_ratio(const ParticleMeasure& mu, const BumpAtom& atom, double alpha) {
  double p = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) p += mu.weight(i) * atom.value(mu.point(i));
  return std::abs(p) / atom.norm_upper_bound(alpha);
}

// Golden-section maximization of g on [a, b].
template <class G>
double golden_max(G&& g, double a, double b, int iters = 30) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double gc = g(c), gd = g(d);
  for (int k = 0; k < iters; ++k) {
    if (gc >= gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - phi * (b - a);
      gc = g(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + phi * (b - a);
      gd = g(d);
    }
  }
  return gc >= gd ? c : d;
}

}  // namespace detail

// Bracket [lower, upper] for the dual C^{1+alpha} norm of mu.
// lower: best |<mu, f>| / ||f|| over dictionary atoms after coordinate-descent tuning
//        of centre and width (norms by the closed-form atom bound, so lower is rigorous);
// upper: min(flat norm, jet LP bound), both of which dominate the dual norm.
inline ZNormBracket z_norm_bracket(const ParticleMeasure& mu, double alpha, const BumpDictionary& dict,
                                   std::size_t budget = 200, const JetBoundOptions& jet_opt = {}) {
  if (budget == 0) throw Error(Errc::budget_zero, "optimizer budget must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(Errc::invalid_argument, "alpha must lie in (0, 1]");
  ZNormBracket out;
  if (mu.empty() || total_variation(mu) == 0.0) return out;
  out.flat = flat_norm(mu).value;
  out.jet = jet_upper_bound(mu, alpha, jet_opt);
  out.upper = std::min(out.flat, out.jet);

  double best = 0.0;
  for (BumpAtom atom : dict.atoms) {
    if (atom.center.size() != mu.dim()) throw Error(Errc::dim_mismatch, "dictionary atom dimension");
    double current = detail::atom_ratio(mu, atom, alpha);
    double span = std::max(1.0, atom.width);
    for (std::size_t it = 0; it < budget; ++it) {
      const double before = current;
      for (std::size_t k = 0; k < mu.dim(); ++k) {
        const double c0 = atom.center[k];
        auto g = [&](double c) {
          atom.center[k] = c;
          return detail::atom_ratio(mu, atom, alpha);
        };
        const double cbest = detail::golden_max(g, c0 - span, c0 + span);
        const double v = g(cbest);
        if (v > current) {
          current = v;
        } else {
          atom.center[k] = c0;
        }
      }
      {
        const double l0 = std::log(atom.width);
        auto g = [&](double l) {
          atom.width = std::exp(l);
          return detail::atom_ratio(mu, atom, alpha);
        };
        const double lbest = detail::golden_max(g, std::max(std::log(dict.min_width), l0 - 2.0),
                                                std::min(std::log(dict.max_width), l0 + 2.0));
        const double v = g(lbest);
        if (v > current) {
          current = v;
        } else {
          atom.width = std::exp(l0);
        }
      }
      span = std::max(0.5 * span, 1e-3 * atom.width);
      if (current - before <= 1e-12 * std::max(1.0, current) && it > 3) break;
    }
    if (current > best) {
      best = current;
      out.best_atom = atom;
    }
  }
  double p = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) p += mu.weight(i) * out.best_atom.value(mu.point(i));
  out.best_atom.amplitude = p >= 0.0 ? 1.0 : -1.0;
  out.lower = best;
  return out;
}

// Upper bound on the dual C^{1+alpha} norm: min(flat, jet LP).
inline double z_upper_norm(const ParticleMeasure& mu, double alpha, const JetBoundOptions& opt = {}) {
  if (mu.empty()) return 0.0;
  const double flat = flat_norm(mu).value;
  if (flat == 0.0) return 0.0;
  return std::min(flat, jet_upper_bound(mu, alpha, opt));
}

}  // namespace measure_flow
