#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <queue>
#include <utility>
#include <vector>

#include "measure_flow/error.hpp"

namespace measure_flow {

// Uncapacitated min-cost flow on an undirected network with real supplies.
// Every edge {u,v} with cost c >= 0 may carry flow either way. Solved by successive
// shortest paths with Johnson potentials; the final potentials give an optimal dual,
// i.e. node prices y with |y_u - y_v| <= c_uv on every edge and sum_i s_i y_i = cost.
class UndirectedFlowProblem {
 public:
  struct Edge {
    std::size_t u, v;
    double cost;
  };

  explicit UndirectedFlowProblem(std::size_t nodes) : supply_(nodes, 0.0), adj_(nodes) {}

  std::size_t node_count() const { return supply_.size(); }

  void set_supply(std::size_t node, double s) { supply_[node] = s; }

  void add_edge(std::size_t u, std::size_t v, double cost) {
    if (!(cost >= 0.0) || !std::isfinite(cost)) throw Error(Errc::invalid_argument, "edge cost must be finite and >= 0");
    const std::size_t id = edges_.size();
    edges_.push_back({u, v, cost});
    adj_[u].push_back(id);
    adj_[v].push_back(id);
  }

  struct Result {
    double cost = 0.0;               // primal objective sum_e c_e |f_e|
    double dual_value = 0.0;         // sum_i s_i y_i with the returned prices
    std::vector<double> prices;      // y, normalized so y[root] = 0
    std::vector<double> edge_flow;   // signed, positive means u -> v
    double unrouted = 0.0;           // supply left when the loop stopped (0 at optimum)
  };

  // `root` is the node whose price is pinned to zero.
  Result solve(std::size_t root) const {
    const std::size_t n = node_count();
    double scale = 0.0;
    for (double s : supply_) scale += std::abs(s);
    const double eps = std::max(scale, 1.0) * 1e-14;

    Result res;
    res.edge_flow.assign(edges_.size(), 0.0);
    std::vector<double> excess(supply_);
    std::vector<double> potential(n, 0.0);
    std::vector<double> dist(n);
    std::vector<long> pred_edge(n);
    std::vector<std::size_t> pred_node(n);

    auto arc_cost = [&](std::size_t e, std::size_t from) {
      const Edge& E = edges_[e];
      const double along = (E.u == from) ? res.edge_flow[e] : -res.edge_flow[e];
      return along < -eps ? -E.cost : E.cost;
    };

    const std::size_t max_rounds = 50 * (n + edges_.size()) + 1000;
    for (std::size_t round = 0;; ++round) {
      bool any_source = false;
      for (std::size_t i = 0; i < n; ++i) any_source |= excess[i] > eps;
      if (!any_source) break;
      if (round > max_rounds) break;

      using Item = std::pair<double, std::size_t>;
      std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
      std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
      std::fill(pred_edge.begin(), pred_edge.end(), -1);
      for (std::size_t i = 0; i < n; ++i) {
        if (excess[i] > eps) {
          dist[i] = 0.0;
          heap.emplace(0.0, i);
        }
      }
      std::vector<char> done(n, 0);
      long target = -1;
      while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (done[u]) continue;
        done[u] = 1;
        if (excess[u] < -eps) {
          target = static_cast<long>(u);
          break;
        }
        for (std::size_t e : adj_[u]) {
          const Edge& E = edges_[e];
          const std::size_t v = (E.u == u) ? E.v : E.u;
          if (done[v]) continue;
          const double rc = std::max(0.0, arc_cost(e, u) + potential[u] - potential[v]);
          if (d + rc < dist[v]) {
            dist[v] = d + rc;
            pred_edge[v] = static_cast<long>(e);
            pred_node[v] = u;
            heap.emplace(dist[v], v);
          }
        }
      }
      if (target < 0) break;
      const auto t = static_cast<std::size_t>(target);
      const double dt = dist[t];
      for (std::size_t i = 0; i < n; ++i) potential[i] += std::min(dist[i], dt);

      double delta = -excess[t];
      std::size_t v = t;
      while (pred_edge[v] >= 0) {
        const auto e = static_cast<std::size_t>(pred_edge[v]);
        const std::size_t u = pred_node[v];
        const double along = (edges_[e].u == u) ? res.edge_flow[e] : -res.edge_flow[e];
        if (along < -eps) delta = std::min(delta, -along);
        v = u;
      }
      delta = std::min(delta, excess[v]);
      v = t;
      while (pred_edge[v] >= 0) {
        const auto e = static_cast<std::size_t>(pred_edge[v]);
        const std::size_t u = pred_node[v];
        res.edge_flow[e] += (edges_[e].u == u) ? delta : -delta;
        v = u;
      }
      excess[v] -= delta;
      excess[t] += delta;
    }
    for (double x : excess) res.unrouted += std::max(0.0, x);

    for (std::size_t e = 0; e < edges_.size(); ++e) res.cost += edges_[e].cost * std::abs(res.edge_flow[e]);

    // Shortest residual distances from root give y = -dist.
    {
      using Item = std::pair<double, std::size_t>;
      std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
      std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
      dist[root] = 0.0;
      heap.emplace(0.0, root);
      std::vector<char> done(n, 0);
      while (!heap.empty()) {
        auto [d, u] = heap.top();
        heap.pop();
        if (done[u]) continue;
        done[u] = 1;
        for (std::size_t e : adj_[u]) {
          const Edge& E = edges_[e];
          const std::size_t v = (E.u == u) ? E.v : E.u;
          if (done[v]) continue;
          const double rc = std::max(0.0, arc_cost(e, u) + potential[u] - potential[v]);
          if (d + rc < dist[v]) {
            dist[v] = d + rc;
            heap.emplace(dist[v], v);
          }
        }
      }
      res.prices.assign(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double true_dist = dist[i] - potential[root] + potential[i];
        res.prices[i] = std::isfinite(true_dist) ? -true_dist : 0.0;
      }
    }
    for (std::size_t i = 0; i < n; ++i) res.dual_value += supply_[i] * res.prices[i];
    return res;
  }

 private:
  std::vector<double> supply_;
  std::vector<Edge> edges_;
  std::vector<std::vector<std::size_t>> adj_;
};

}  // namespace measure_flow
