#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "nmfg/matrix.hpp"

namespace nmfg {

/// Bipartite weighted digraph view of a matrix: one node per row, one per
/// column, an edge row -> column for every nonzero entry, weighted by that
/// entry. Zero entries carry no edge. Edges are kept sorted by (row, col),
/// at most one per pair.
class KonigDigraph {
 public:
  struct Edge {
    int row;
    int col;
    double weight;
    bool operator==(const Edge&) const = default;
  };

  KonigDigraph(int num_row_nodes, int num_col_nodes)
      : num_rows_(num_row_nodes), num_cols_(num_col_nodes) {
    if (num_row_nodes <= 0 || num_col_nodes <= 0) {
      throw std::invalid_argument("KonigDigraph: node counts must be positive");
    }
  }

  int num_row_nodes() const { return num_rows_; }
  int num_col_nodes() const { return num_cols_; }
  const std::vector<Edge>& edges() const { return edges_; }

  void add_edge(int row, int col, double weight) {
    if (row < 0 || row >= num_rows_ || col < 0 || col >= num_cols_) {
      throw std::invalid_argument("KonigDigraph::add_edge: index out of range");
    }
    if (weight == 0.0) {
      throw std::invalid_argument(
          "KonigDigraph::add_edge: zero-weight edges are omitted by convention");
    }
    if (!std::isfinite(weight)) {
      throw std::invalid_argument("KonigDigraph::add_edge: non-finite weight");
    }
    const auto it = lower_bound(row, col);
    if (it != edges_.end() && it->row == row && it->col == col) {
      throw std::invalid_argument("KonigDigraph::add_edge: duplicate edge (" +
                                  std::to_string(row) + "," + std::to_string(col) + ")");
    }
    edges_.insert(it, Edge{row, col, weight});
  }

  /// Weight of edge (row, col), or 0 when absent.
  double weight_or_zero(int row, int col) const {
    const auto it = lower_bound(row, col);
    if (it != edges_.end() && it->row == row && it->col == col) return it->weight;
    return 0.0;
  }

 private:
  std::vector<Edge>::const_iterator lower_bound(int row, int col) const {
    return std::lower_bound(
        edges_.begin(), edges_.end(), Edge{row, col, 0.0},
        [](const Edge& a, const Edge& b) {
          return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
  }
  std::vector<Edge>::iterator lower_bound(int row, int col) {
    return std::lower_bound(
        edges_.begin(), edges_.end(), Edge{row, col, 0.0},
        [](const Edge& a, const Edge& b) {
          return a.row != b.row ? a.row < b.row : a.col < b.col;
        });
  }

  int num_rows_;
  int num_cols_;
  std::vector<Edge> edges_;
};

inline KonigDigraph matrix_to_konig(const DenseMatrix& m) {
  m.require_finite("matrix_to_konig");
  KonigDigraph g(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j)
      if (m(i, j) != 0.0) g.add_edge(i, j, m(i, j));
  return g;
}

inline DenseMatrix konig_to_matrix(const KonigDigraph& g) {
  DenseMatrix m(g.num_row_nodes(), g.num_col_nodes());
  for (const auto& e : g.edges()) m(e.row, e.col) = e.weight;
  return m;
}

/// Edge reversal; the graph view of matrix transposition.
inline KonigDigraph reverse_edges(const KonigDigraph& g) {
  KonigDigraph r(g.num_col_nodes(), g.num_row_nodes());
  std::vector<KonigDigraph::Edge> reversed;
  reversed.reserve(g.edges().size());
  for (const auto& e : g.edges()) reversed.push_back({e.col, e.row, e.weight});
  std::sort(reversed.begin(), reversed.end(), [](const auto& a, const auto& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (const auto& e : reversed) r.add_edge(e.row, e.col, e.weight);
  return r;
}

/// Sum of path weights from row node i of gw to column node j of gh in the
/// concatenation graph (the r column nodes of gw identified with the r row
/// nodes of gh). Equals entry (i, j) of the corresponding matrix product.
inline double concat_path_weight(const KonigDigraph& gw, const KonigDigraph& gh,
                                 int i, int j) {
  if (gw.num_col_nodes() != gh.num_row_nodes()) {
    throw std::invalid_argument(
        "concat_path_weight: graphs do not share intermediate nodes");
  }
  if (i < 0 || i >= gw.num_row_nodes() || j < 0 || j >= gh.num_col_nodes()) {
    throw std::invalid_argument("concat_path_weight: index out of range");
  }
  double total = 0.0;
  for (const auto& e : gw.edges()) {
    if (e.row != i) continue;
    const double w2 = gh.weight_or_zero(e.col, j);
    if (w2 != 0.0) total += e.weight * w2;
  }
  return total;
}

/// Augmented line digraph of a factorization attempt: a complete bipartite
/// graph whose row-node features are rows of W, column-node features rows of
/// H, and whose edge features are the entries of V. Dense by construction;
/// zeros in V are legal feature values here, unlike Konig edges.
struct FactorGraph {
  DenseMatrix row_features;  // m x r, rows of W
  DenseMatrix col_features;  // n x r, rows of H
  DenseMatrix edge_values;   // m x n, V
  int rank = 0;
};

inline FactorGraph build_factor_graph(const DenseMatrix& v, const DenseMatrix& w,
                                      const DenseMatrix& h) {
  if (w.rows() != v.rows() || h.rows() != v.cols() || w.cols() != h.cols()) {
    throw std::invalid_argument(
        "build_factor_graph: dimension mismatch, V " + std::to_string(v.rows()) +
        "x" + std::to_string(v.cols()) + ", W " + std::to_string(w.rows()) + "x" +
        std::to_string(w.cols()) + ", H " + std::to_string(h.rows()) + "x" +
        std::to_string(h.cols()));
  }
  v.require_finite("build_factor_graph: V");
  w.require_finite("build_factor_graph: W");
  h.require_finite("build_factor_graph: H");
  return FactorGraph{w, h, v, w.cols()};
}

/// R = W H^T - V, the per-edge residual of the factor graph.
inline DenseMatrix residual(const FactorGraph& g) {
  return sub(matmul(g.row_features, transpose(g.col_features)), g.edge_values);
}

}  // namespace nmfg
