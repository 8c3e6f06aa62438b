#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nmfg/matrix.hpp"
#include "nmfg/rng.hpp"
#include "nmfg/tape.hpp"

namespace nmfg {

// Bipartite relation-aware multi-head attention over the augmented line
// digraph. One layer updates the target-side factor embeddings from the
// source-side embeddings and the data matrix E:
//
//   q_j = x_j Q,  k_i = x_i K_N,  v_i = x_i V_N          (node projections)
//   e~_ij = [x_i (.) x_j, E_ij]                          (implicit edge)
//   k_ij = e~_ij K_E,  v_ij = e~_ij V_E                  (edge projections)
//   alpha_ij = softmax_i( q_j (k_i + k_ij)^T / sqrt(d_h) )
//   m_j = sum_i alpha_ij (v_i + v_ij)
//   x'  = LN(x_j + m_j);  out = x' + FFN(x')   [+ LN unless last layer]
//
// The per-pair edge tensors are never materialized: splitting K_E into its
// first d rows T and last row t gives q_j k_ij^T = x_i (x_j (.) (q_j T^T))^T
// + E_ij (q_j t^T) + q_j b^T, so the whole layer stays in rank-2 ops (same
// for V_E), which is what makes reverse-mode differentiation through it
// cheap and auditable.

enum class ModelKind { kInit, kAccel };

struct ModelConfig {
  int rank = 10;
  int hidden = 100;
  int n_heads = 4;
  int n_rounds = 4;     // N: rounds of (H-update, W-update) Factormer pairs
  int outer_iters = 5;  // T
  int inner_iters = 5;  // K, ADMM iterations per solver call
  double gamma = 0.2;
  double rho = 1.0;
  int d_ff = 0;  // 0 = use 2 * hidden
  bool paper_scale = false;    // scale attention by sqrt(d) instead of sqrt(d_h)
  bool detach_solver = false;  // treat solver outputs as constants in backward

  int ffn_dim() const { return d_ff > 0 ? d_ff : 2 * hidden; }
  int head_dim() const { return hidden / n_heads; }
  int r_in(ModelKind kind) const {
    return kind == ModelKind::kAccel ? 2 * rank : rank;
  }

  void validate() const {
    if (rank < 1 || hidden < 1 || n_heads < 1 || n_rounds < 0 ||
        outer_iters < 1 || inner_iters < 1) {
      throw std::invalid_argument("ModelConfig: counts must be positive");
    }
    if (hidden % n_heads != 0) {
      throw std::invalid_argument("ModelConfig: hidden must be divisible by n_heads");
    }
    if (!(gamma > 0.0 && gamma <= 1.0)) {
      throw std::invalid_argument("ModelConfig: gamma must be in (0, 1]");
    }
    if (!(rho > 0.0)) throw std::invalid_argument("ModelConfig: rho must be > 0");
  }
};

struct HeadParams {
  DenseMatrix q_w, q_b;    // d x d_h, 1 x d_h
  DenseMatrix kn_w, kn_b;  // node key
  DenseMatrix vn_w, vn_b;  // node value
  DenseMatrix ke_w, ke_b;  // edge key, (d+1) x d_h
  DenseMatrix ve_w, ve_b;  // edge value, (d+1) x d_h
};

struct FactormerParams {
  std::vector<HeadParams> heads;
  DenseMatrix ffn_w1, ffn_b1;  // d x d_ff
  DenseMatrix ffn_w2, ffn_b2;  // d_ff x d
  DenseMatrix ln1_gain, ln1_bias;
  DenseMatrix ln2_gain, ln2_bias;
};

struct NFactormerParams {
  DenseMatrix embed_w, embed_b;  // r_in x d, shared by both factors
  std::vector<FactormerParams> layers;  // 2N, alternating H-update / W-update
  DenseMatrix extract_w, extract_b;  // d x r

  int r_in() const { return embed_w.rows(); }
  int hidden() const { return embed_w.cols(); }
  int rank_out() const { return extract_w.cols(); }
};

namespace detail {
inline DenseMatrix xavier(Rng& rng, int fan_in, int fan_out, int rows, int cols) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  return rng.uniform_matrix(rows, cols, -a, a);
}
}  // namespace detail

inline FactormerParams make_factormer_params(int d, int n_heads, int d_ff,
                                             Rng& rng) {
  const int dh = d / n_heads;
  FactormerParams p;
  p.heads.resize(n_heads);
  for (auto& h : p.heads) {
    h.q_w = detail::xavier(rng, d, dh, d, dh);
    h.q_b = DenseMatrix(1, dh);
    h.kn_w = detail::xavier(rng, d, dh, d, dh);
    h.kn_b = DenseMatrix(1, dh);
    h.vn_w = detail::xavier(rng, d, dh, d, dh);
    h.vn_b = DenseMatrix(1, dh);
    h.ke_w = detail::xavier(rng, d + 1, dh, d + 1, dh);
    h.ke_b = DenseMatrix(1, dh);
    h.ve_w = detail::xavier(rng, d + 1, dh, d + 1, dh);
    h.ve_b = DenseMatrix(1, dh);
  }
  p.ffn_w1 = detail::xavier(rng, d, d_ff, d, d_ff);
  p.ffn_b1 = DenseMatrix(1, d_ff);
  p.ffn_w2 = detail::xavier(rng, d_ff, d, d_ff, d);
  p.ffn_b2 = DenseMatrix(1, d);
  p.ln1_gain = DenseMatrix::filled(1, d, 1.0);
  p.ln1_bias = DenseMatrix(1, d);
  p.ln2_gain = DenseMatrix::filled(1, d, 1.0);
  p.ln2_bias = DenseMatrix(1, d);
  return p;
}

inline NFactormerParams make_nfactormer_params(const ModelConfig& cfg,
                                               ModelKind kind, Rng& rng) {
  cfg.validate();
  const int d = cfg.hidden;
  NFactormerParams p;
  p.embed_w = detail::xavier(rng, cfg.r_in(kind), d, cfg.r_in(kind), d);
  p.embed_b = DenseMatrix(1, d);
  for (int l = 0; l < 2 * cfg.n_rounds; ++l) {
    p.layers.push_back(make_factormer_params(d, cfg.n_heads, cfg.ffn_dim(), rng));
  }
  // The extraction layer starts small and positively biased at the prior
  // mean of factor entries under the mean-1 data convention (1/sqrt(r)).
  // A plain symmetric init lets early training push entire factor columns
  // below the output projection's cutoff, which zeroes their subgradient and
  // permanently caps the reachable rank.
  p.extract_w = scale(detail::xavier(rng, d, cfg.rank, d, cfg.rank), 0.2);
  p.extract_b = DenseMatrix::filled(1, cfg.rank,
                                    1.0 / std::sqrt(static_cast<double>(cfg.rank)));
  return p;
}

/// Visits one layer's parameter tensors in canonical order.
template <class LayerParams, class Fn>
void for_each_layer_param(LayerParams& layer, const std::string& base, Fn&& fn) {
  for (std::size_t h = 0; h < layer.heads.size(); ++h) {
    auto& head = layer.heads[h];
    const std::string hb = base + "heads." + std::to_string(h) + ".";
    fn(hb + "query.weight", head.q_w);
    fn(hb + "query.bias", head.q_b);
    fn(hb + "node_key.weight", head.kn_w);
    fn(hb + "node_key.bias", head.kn_b);
    fn(hb + "node_value.weight", head.vn_w);
    fn(hb + "node_value.bias", head.vn_b);
    fn(hb + "edge_key.weight", head.ke_w);
    fn(hb + "edge_key.bias", head.ke_b);
    fn(hb + "edge_value.weight", head.ve_w);
    fn(hb + "edge_value.bias", head.ve_b);
  }
  fn(base + "ffn.w1", layer.ffn_w1);
  fn(base + "ffn.b1", layer.ffn_b1);
  fn(base + "ffn.w2", layer.ffn_w2);
  fn(base + "ffn.b2", layer.ffn_b2);
  fn(base + "ln1.gain", layer.ln1_gain);
  fn(base + "ln1.bias", layer.ln1_bias);
  fn(base + "ln2.gain", layer.ln2_gain);
  fn(base + "ln2.bias", layer.ln2_bias);
}

/// Visits every parameter tensor in canonical order (the order used by the
/// optimizer, the checkpoint format, and tape staging — keep in sync with
/// stage_params).
template <class Params, class Fn>
void for_each_param(Params& p, Fn&& fn) {
  fn("embed.weight", p.embed_w);
  fn("embed.bias", p.embed_b);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    for_each_layer_param(p.layers[l], "layers." + std::to_string(l) + ".", fn);
  }
  fn("extract.weight", p.extract_w);
  fn("extract.bias", p.extract_b);
}

struct StagedHead {
  TensorRef q_w, q_b, kn_w, kn_b, vn_w, vn_b, ke_w, ke_b, ve_w, ve_b;
};
struct StagedFactormer {
  std::vector<StagedHead> heads;
  TensorRef ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  TensorRef ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};
struct StagedNF {
  TensorRef embed_w, embed_b, extract_w, extract_b;
  std::vector<StagedFactormer> layers;
  std::vector<TensorRef> flat;  // canonical for_each_param order
};

/// Loads one layer's parameters onto the tape, appending to flat in the
/// for_each_layer_param order.
inline StagedFactormer stage_factormer_params(Tape& t, const FactormerParams& layer,
                                              bool requires_grad,
                                              std::vector<TensorRef>* flat) {
  auto lift = [&](const DenseMatrix& m) {
    const TensorRef r = t.leaf(m, requires_grad);
    if (flat) flat->push_back(r);
    return r;
  };
  StagedFactormer sl;
  for (const auto& head : layer.heads) {
    StagedHead sh;
    sh.q_w = lift(head.q_w);
    sh.q_b = lift(head.q_b);
    sh.kn_w = lift(head.kn_w);
    sh.kn_b = lift(head.kn_b);
    sh.vn_w = lift(head.vn_w);
    sh.vn_b = lift(head.vn_b);
    sh.ke_w = lift(head.ke_w);
    sh.ke_b = lift(head.ke_b);
    sh.ve_w = lift(head.ve_w);
    sh.ve_b = lift(head.ve_b);
    sl.heads.push_back(sh);
  }
  sl.ffn_w1 = lift(layer.ffn_w1);
  sl.ffn_b1 = lift(layer.ffn_b1);
  sl.ffn_w2 = lift(layer.ffn_w2);
  sl.ffn_b2 = lift(layer.ffn_b2);
  sl.ln1_gain = lift(layer.ln1_gain);
  sl.ln1_bias = lift(layer.ln1_bias);
  sl.ln2_gain = lift(layer.ln2_gain);
  sl.ln2_bias = lift(layer.ln2_bias);
  return sl;
}

/// Loads every parameter onto the tape as a leaf. flat follows the
/// for_each_param order exactly (asserted by tests).
inline StagedNF stage_params(Tape& t, const NFactormerParams& p,
                             bool requires_grad) {
  StagedNF s;
  auto lift = [&](const DenseMatrix& m) {
    const TensorRef r = t.leaf(m, requires_grad);
    s.flat.push_back(r);
    return r;
  };
  s.embed_w = lift(p.embed_w);
  s.embed_b = lift(p.embed_b);
  for (const auto& layer : p.layers) {
    s.layers.push_back(stage_factormer_params(t, layer, requires_grad, &s.flat));
  }
  s.extract_w = lift(p.extract_w);
  s.extract_b = lift(p.extract_b);
  return s;
}

/// [x_src (.) x_tgt, e] — the implicit edge feature of one (source, target)
/// pair. With unembedded rank-space features, dotting against (1,...,1,-1)
/// recovers the factorization residual at that edge.
inline DenseMatrix implicit_edge(const DenseMatrix& x_src,
                                 const DenseMatrix& x_tgt, double e) {
  if (x_src.rows() != 1 || x_tgt.rows() != 1 || x_src.cols() != x_tgt.cols()) {
    throw std::invalid_argument("implicit_edge: feature length mismatch");
  }
  DenseMatrix out(1, x_src.cols() + 1);
  for (int j = 0; j < x_src.cols(); ++j) out(0, j) = x_src(0, j) * x_tgt(0, j);
  out(0, x_src.cols()) = e;
  return out;
}

/// Euclidean projection onto the nonnegative orthant.
inline DenseMatrix project_nonneg(const DenseMatrix& m) { return relu_mat(m); }

/// One Factormer layer on the tape. src is m x d, tgt n x d, edges m x n
/// (dense; the line digraph is complete bipartite, so every source is in
/// every target's neighborhood). Returns the updated target features n x d.
inline TensorRef factormer(Tape& t, TensorRef src, TensorRef tgt, TensorRef edges,
                           const StagedFactormer& p, bool last_layer,
                           bool paper_scale = false) {
  const int m = t.rows(src);
  const int n = t.rows(tgt);
  const int d = t.cols(tgt);
  if (t.cols(src) != d) throw std::invalid_argument("factormer: feature dim mismatch");
  if (t.rows(edges) != m || t.cols(edges) != n) {
    throw std::invalid_argument("factormer: edge matrix must be m x n");
  }
  const int n_heads = static_cast<int>(p.heads.size());
  const int dh = d / n_heads;
  const double att_scale =
      1.0 / std::sqrt(static_cast<double>(paper_scale ? d : dh));

  const TensorRef ones_m = t.constant(DenseMatrix::filled(m, 1, 1.0));

  TensorRef msg{};  // n x d after head concat
  for (int hidx = 0; hidx < n_heads; ++hidx) {
    const StagedHead& h = p.heads[hidx];
    const TensorRef q = t.linear(tgt, h.q_w, h.q_b);     // n x dh
    const TensorRef kn = t.linear(src, h.kn_w, h.kn_b);  // m x dh
    const TensorRef vn = t.linear(src, h.vn_w, h.vn_b);  // m x dh

    // edge projections, split into node-product block and scalar-edge row
    const TensorRef ke_t = t.transpose(h.ke_w);                 // dh x (d+1)
    const TensorRef ke_main_t = t.slice_columns(ke_t, 0, d);    // dh x d
    const TensorRef ke_last_t = t.slice_columns(ke_t, d, d + 1);  // dh x 1
    const TensorRef ve_t = t.transpose(h.ve_w);
    const TensorRef ve_main_t = t.slice_columns(ve_t, 0, d);
    const TensorRef ve_last_t = t.slice_columns(ve_t, d, d + 1);

    // logits: q_j (k_i + k_ij)^T as an m x n matrix
    const TensorRef s_node = t.matmul(kn, t.transpose(q));
    const TensorRef qd = t.multiply(tgt, t.matmul(q, ke_main_t));          // n x d
    const TensorRef s_prod = t.matmul(src, t.transpose(qd));               // m x n
    const TensorRef beta = t.matmul(q, ke_last_t);                         // n x 1
    const TensorRef s_edge = t.multiply(edges, t.matmul(ones_m, t.transpose(beta)));
    const TensorRef kbias = t.matmul(q, t.transpose(h.ke_b));              // n x 1
    const TensorRef s_kbias = t.matmul(ones_m, t.transpose(kbias));
    const TensorRef logits =
        t.scale(t.add(t.add(s_node, s_prod), t.add(s_edge, s_kbias)), att_scale);
    const TensorRef alpha = t.softmax_over_sources(logits);  // m x n

    // message: alpha^T (v_i + v_ij) aggregated over sources
    const TensorRef alpha_t = t.transpose(alpha);
    const TensorRef m_node = t.matmul(alpha_t, vn);                        // n x dh
    const TensorRef pooled_src = t.matmul(alpha_t, src);                   // n x d
    const TensorRef m_prod = t.matmul(t.multiply(tgt, pooled_src),
                                      t.transpose(ve_main_t));             // n x dh
    const TensorRef edge_pool =
        t.matmul(t.transpose(t.multiply(alpha, edges)), ones_m);           // n x 1
    const TensorRef m_edge = t.matmul(edge_pool, t.transpose(ve_last_t));  // n x dh
    // attention weights sum to 1 per target, so the edge-value bias
    // contributes exactly once
    const TensorRef m_head =
        t.add(t.add(t.add(m_node, m_prod), m_edge), h.ve_b);

    msg = hidx == 0 ? m_head : t.concat_columns(msg, m_head);
  }

  const TensorRef x1 = t.layer_norm(t.add(tgt, msg), p.ln1_gain, p.ln1_bias);
  const TensorRef ffn =
      t.linear(t.relu(t.linear(x1, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2);
  TensorRef out = t.add(x1, ffn);
  if (!last_layer) out = t.layer_norm(out, p.ln2_gain, p.ln2_bias);
  if (!t.value(out).all_finite()) {
    throw NumericalError("factormer: non-finite output (exploding attention)");
  }
  return out;
}

struct FactorPairRef {
  TensorRef w;
  TensorRef h;
};

/// Embed -> N alternating (H-update, W-update) Factormer pairs -> extract.
/// The H-update always comes first within a round; only the very last layer
/// of the stack runs with the last-layer flag.
inline FactorPairRef n_factormer(Tape& t, TensorRef w_in, TensorRef h_in,
                                 TensorRef v, TensorRef v_t, const StagedNF& p,
                                 const ModelConfig& cfg) {
  if (static_cast<int>(p.layers.size()) != 2 * cfg.n_rounds) {
    throw std::invalid_argument("n_factormer: expected " +
                                std::to_string(2 * cfg.n_rounds) + " layers, have " +
                                std::to_string(p.layers.size()));
  }
  TensorRef h = t.linear(h_in, p.embed_w, p.embed_b);
  TensorRef w = t.linear(w_in, p.embed_w, p.embed_b);
  for (int round = 0; round < cfg.n_rounds; ++round) {
    h = factormer(t, w, h, v, p.layers[2 * round], /*last_layer=*/false,
                  cfg.paper_scale);
    w = factormer(t, h, w, v_t, p.layers[2 * round + 1],
                  /*last_layer=*/round == cfg.n_rounds - 1, cfg.paper_scale);
  }
  const TensorRef w_out = t.linear(w, p.extract_w, p.extract_b);
  const TensorRef h_out = t.linear(h, p.extract_w, p.extract_b);
  return {w_out, h_out};
}

}  // namespace nmfg
