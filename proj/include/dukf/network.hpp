#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dukf/errors.hpp"

namespace dukf {

/// Communication graph over the sensor nodes.  Stored as inclusive neighbor
/// lists (every node is its own neighbor), which is the form the consensus
/// weights want.  Edges are kept symmetric when built from positions; the
/// edge-list constructor allows directed graphs for experiments.
class Graph {
 public:
  Graph() = default;

  explicit Graph(int n) : in_(n), out_(n) {
    for (int i = 0; i < n; ++i) {
      in_[i].push_back(i);
      out_[i].push_back(i);
    }
  }

  /// Connect every pair of nodes within comm_range of each other.
  static Graph from_positions(const std::vector<Eigen::Vector3d>& positions,
                              double comm_range_m) {
    Graph g(static_cast<int>(positions.size()));
    const double r2 = comm_range_m * comm_range_m;
    for (std::size_t i = 0; i < positions.size(); ++i) {
      for (std::size_t j = i + 1; j < positions.size(); ++j) {
        if ((positions[i] - positions[j]).squaredNorm() <= r2) {
          g.add_edge(static_cast<int>(j), static_cast<int>(i));
          g.add_edge(static_cast<int>(i), static_cast<int>(j));
        }
      }
    }
    g.sort_lists();
    return g;
  }

  /// Build from explicit directed edges (src, dst).  Self-loops are implied
  /// and must not be listed.
  static Graph from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
    Graph g(n);
    for (const auto& [src, dst] : edges) {
      if (src < 0 || src >= n || dst < 0 || dst >= n || src == dst) {
        throw Error("Graph::from_edges: bad edge (" + std::to_string(src) +
                    ", " + std::to_string(dst) + ") for n = " +
                    std::to_string(n));
      }
      g.add_edge(src, dst);
    }
    g.sort_lists();
    return g;
  }

  int size() const { return static_cast<int>(in_.size()); }

  /// Nodes whose transmissions node i can receive (includes i), sorted.
  const std::vector<int>& in_neighbors(int i) const { return in_[i]; }

  /// Nodes that can receive node i's transmissions (includes i), sorted.
  const std::vector<int>& out_neighbors(int i) const { return out_[i]; }

  int in_degree(int i) const { return static_cast<int>(in_[i].size()); }

  bool has_edge(int src, int dst) const {
    const auto& v = in_[dst];
    return std::binary_search(v.begin(), v.end(), src);
  }

  /// Number of directed edges excluding self-loops; each undirected link
  /// counts twice.
  int directed_edge_count() const {
    int total = 0;
    for (const auto& v : out_) total += static_cast<int>(v.size()) - 1;
    return total;
  }

  /// Reachability of every node from node 0 following edges in either
  /// direction.  For symmetric graphs this is plain connectedness.
  bool connected() const {
    const int n = size();
    if (n == 0) return true;
    std::vector<char> seen(n, 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v : in_[u]) {
        if (!seen[v]) { seen[v] = 1; stack.push_back(v); }
      }
      for (int v : out_[u]) {
        if (!seen[v]) { seen[v] = 1; stack.push_back(v); }
      }
    }
    return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
  }

 private:
  void add_edge(int src, int dst) {
    if (!has_edge_unsorted(src, dst)) {
      in_[dst].push_back(src);
      out_[src].push_back(dst);
    }
  }

  bool has_edge_unsorted(int src, int dst) const {
    const auto& v = in_[dst];
    return std::find(v.begin(), v.end(), src) != v.end();
  }

  void sort_lists() {
    for (auto& v : in_) std::sort(v.begin(), v.end());
    for (auto& v : out_) std::sort(v.begin(), v.end());
  }

  std::vector<std::vector<int>> in_;
  std::vector<std::vector<int>> out_;
};

/// Metropolis consensus weights restricted to links that actually delivered
/// this step.  gamma_plus(i, j) = 1 when j's second-round packet reached i;
/// the diagonal is forced to 1 and entries outside the graph are ignored.
///   C(i, j) = gamma_plus(i, j) / max(|N_i|, |N_j|)   for j != i in N_i,
///   C(i, i) = 1 - sum_{j != i} C(i, j),
/// with |N| counting the node itself.  Rows sum to one by construction and
/// the diagonal stays >= 1/|N_i| > 0, so the result is row-stochastic with
/// positive diagonal no matter which packets dropped.
inline Eigen::MatrixXd metropolis_weights(const Graph& g,
                                          const Eigen::MatrixXd& gamma_plus) {
  const int n = g.size();
  if (gamma_plus.rows() != n || gamma_plus.cols() != n) {
    throw Error("metropolis_weights: gamma matrix size mismatch");
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double off = 0.0;
    for (int j : g.in_neighbors(i)) {
      if (j == i) continue;
      if (gamma_plus(i, j) == 0.0) continue;
      const double w =
          1.0 / static_cast<double>(std::max(g.in_degree(i), g.in_degree(j)));
      c(i, j) = w;
      off += w;
    }
    c(i, i) = 1.0 - off;
  }
  return c;
}

/// Primitivity probe for a nonnegative matrix with positive diagonal:
/// with every diagonal entry positive, irreducibility already implies
/// primitivity, so it suffices that (I+C)^(n-1) is entrywise positive.
inline bool check_primitivity(const Eigen::MatrixXd& c) {
  const int n = static_cast<int>(c.rows());
  if (n == 0) return false;
  if (c.diagonal().minCoeff() <= 0.0) return false;
  // Boolean reachability closure instead of powers of C (no overflow).
  std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
  for (int i = 0; i < n; ++i) {
    std::vector<int> stack{i};
    reach[i][i] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v) {
        if (c(u, v) > 0.0 && !reach[i][v]) {
          reach[i][v] = 1;
          stack.push_back(v);
        }
      }
    }
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (!reach[i][j]) return false;
    }
  }
  return true;
}

}  // namespace dukf
