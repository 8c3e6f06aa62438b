#include <catch2/catch_amalgamated.hpp>

#include "nmfg/factormer.hpp"
#include "nmfg/graph.hpp"
#include "nmfg/rng.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

using nmfg::DenseMatrix;
using nmfg::ModelConfig;
using nmfg::Tape;
using nmfg::TensorRef;

namespace {

ModelConfig small_cfg() {
  ModelConfig cfg;
  cfg.rank = 2;
  cfg.hidden = 8;
  cfg.n_heads = 2;
  cfg.n_rounds = 1;
  return cfg;
}

DenseMatrix run_factormer(const DenseMatrix& src, const DenseMatrix& tgt,
                          const DenseMatrix& edges,
                          const nmfg::FactormerParams& params, bool last_layer) {
  Tape t;
  const nmfg::StagedFactormer staged =
      nmfg::stage_factormer_params(t, params, false, nullptr);
  return t.value(nmfg::factormer(t, t.constant(src), t.constant(tgt),
                                 t.constant(edges), staged, last_layer));
}

DenseMatrix permute_rows(const DenseMatrix& m, const std::vector<int>& perm) {
  DenseMatrix out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = m(perm[i], j);
  return out;
}

}  // namespace

TEST_CASE("implicit edge features", "[factormer]") {
  const DenseMatrix zero(1, 3);
  const DenseMatrix e1 = nmfg::implicit_edge(zero, zero, 5.0);
  CHECK(e1 == DenseMatrix::from_rows({{0.0, 0.0, 0.0, 5.0}}));

  const DenseMatrix ones = DenseMatrix::filled(1, 3, 1.0);
  const DenseMatrix x = DenseMatrix::from_rows({{2.0, -1.0, 0.5}});
  CHECK(nmfg::implicit_edge(ones, x, 0.0) ==
        DenseMatrix::from_rows({{2.0, -1.0, 0.5, 0.0}}));

  CHECK_THROWS_AS(nmfg::implicit_edge(zero, DenseMatrix(1, 2), 0.0),
                  std::invalid_argument);
}

TEST_CASE("implicit edge encodes the residual", "[factormer]") {
  const DenseMatrix v = fixtures::example_v();
  const DenseMatrix w = fixtures::example_w();
  const DenseMatrix h = fixtures::example_h();
  const DenseMatrix resid =
      nmfg::residual(nmfg::build_factor_graph(v, w, h));
  for (int i = 0; i < v.rows(); ++i) {
    for (int j = 0; j < v.cols(); ++j) {
      const DenseMatrix e = nmfg::implicit_edge(oracle::row_of(w, i),
                                                oracle::row_of(h, j), v(i, j));
      // dot with (1, ..., 1, -1)
      double dot = 0.0;
      for (int k = 0; k < e.cols() - 1; ++k) dot += e(0, k);
      dot -= e(0, e.cols() - 1);
      CHECK(dot == resid(i, j));
    }
  }
}

TEST_CASE("project_nonneg is the elementwise clamp", "[factormer][oracle]") {
  nmfg::Rng rng(3);
  const DenseMatrix pos = rng.uniform_matrix(3, 4, 0.0, 2.0);
  CHECK(nmfg::project_nonneg(pos) == pos);
  const DenseMatrix neg = rng.uniform_matrix(3, 4, -2.0, -0.1);
  CHECK(nmfg::project_nonneg(neg) == DenseMatrix(3, 4));
  const DenseMatrix mixed = rng.uniform_matrix(5, 5, -1.0, 1.0);
  CHECK(nmfg::project_nonneg(mixed) == oracle::clamp_nonneg(mixed));
}

TEST_CASE("factormer matches the per-pair oracle", "[factormer][oracle]") {
  nmfg::Rng rng(19);
  for (const bool last : {false, true}) {
    for (int trial = 0; trial < 3; ++trial) {
      const int m = rng.uniform_int(1, 6), n = rng.uniform_int(1, 5);
      const int d = 8, heads = trial == 0 ? 1 : 2;
      nmfg::Rng prng(100 + trial);
      const nmfg::FactormerParams params =
          nmfg::make_factormer_params(d, heads, 2 * d, prng);
      const DenseMatrix src = rng.uniform_matrix(m, d, -1.0, 1.0);
      const DenseMatrix tgt = rng.uniform_matrix(n, d, -1.0, 1.0);
      const DenseMatrix edges = rng.uniform_matrix(m, n, -1.0, 1.0);

      const DenseMatrix fast = run_factormer(src, tgt, edges, params, last);
      const DenseMatrix ref =
          oracle::naive_factormer(src, tgt, edges, params, last);
      REQUIRE(fast.same_shape(ref));
      const double scale_ref = std::max(1.0, nmfg::max_abs(ref));
      CHECK(nmfg::max_abs(nmfg::sub(fast, ref)) <= 1e-11 * scale_ref);
    }
  }
}

TEST_CASE("single source: attention weight collapses to one", "[factormer]") {
  nmfg::Rng rng(23);
  nmfg::Rng prng(24);
  const int d = 8;
  const nmfg::FactormerParams params = nmfg::make_factormer_params(d, 2, 16, prng);
  const DenseMatrix src = rng.uniform_matrix(1, d, -1.0, 1.0);
  const DenseMatrix tgt = rng.uniform_matrix(3, d, -1.0, 1.0);
  const DenseMatrix edges = rng.uniform_matrix(1, 3, -1.0, 1.0);
  // the oracle with m=1 sums exactly one message with alpha = 1
  const DenseMatrix got = run_factormer(src, tgt, edges, params, true);
  const DenseMatrix ref = oracle::naive_factormer(src, tgt, edges, params, true);
  CHECK(nmfg::max_abs(nmfg::sub(got, ref)) <= 1e-12 * std::max(1.0, nmfg::max_abs(ref)));
}

TEST_CASE("zero parameters reduce the layer to layer norm", "[factormer]") {
  const int d = 8;
  nmfg::Rng prng(1);
  nmfg::FactormerParams params = nmfg::make_factormer_params(d, 2, 16, prng);
  nmfg::for_each_layer_param(params, "", [](const std::string& name, DenseMatrix& m) {
    if (name.find("gain") == std::string::npos) {
      m = DenseMatrix(m.rows(), m.cols());
    } else {
      m = DenseMatrix::filled(m.rows(), m.cols(), 1.0);
    }
  });
  nmfg::Rng rng(2);
  const DenseMatrix src = rng.uniform_matrix(4, d, -1.0, 1.0);
  const DenseMatrix tgt = rng.uniform_matrix(3, d, -1.0, 1.0);
  const DenseMatrix edges = rng.uniform_matrix(4, 3, -1.0, 1.0);

  const DenseMatrix out = run_factormer(src, tgt, edges, params, true);
  const DenseMatrix expect = oracle::naive_layer_norm(
      tgt, DenseMatrix::filled(1, d, 1.0), DenseMatrix(1, d));
  CHECK(nmfg::max_abs(nmfg::sub(out, expect)) <= 1e-12);

  // with the trailing layer norm the result only re-normalizes (epsilon shift)
  const DenseMatrix out2 = run_factormer(src, tgt, edges, params, false);
  CHECK(nmfg::max_abs(nmfg::sub(out2, expect)) <= 1e-4);
}

TEST_CASE("factormer is invariant to source permutations", "[factormer]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nmfg::Rng rng(seed);
    nmfg::Rng prng(seed + 1000);
    const int m = 6, n = 4, d = 8;
    const nmfg::FactormerParams params = nmfg::make_factormer_params(d, 2, 16, prng);
    const DenseMatrix src = rng.uniform_matrix(m, d, -1.0, 1.0);
    const DenseMatrix tgt = rng.uniform_matrix(n, d, -1.0, 1.0);
    const DenseMatrix edges = rng.uniform_matrix(m, n, -1.0, 1.0);

    std::vector<int> perm(m);
    for (int i = 0; i < m; ++i) perm[i] = i;
    rng.shuffle(perm);

    const DenseMatrix base = run_factormer(src, tgt, edges, params, false);
    const DenseMatrix permuted = run_factormer(
        permute_rows(src, perm), tgt, permute_rows(edges, perm), params, false);
    CHECK(nmfg::max_abs(nmfg::sub(base, permuted)) <= 1e-10);
  }
}

TEST_CASE("n_factormer with zero rounds is embed/extract plumbing",
          "[factormer]") {
  ModelConfig cfg = small_cfg();
  cfg.n_rounds = 0;
  nmfg::Rng prng(7);
  const nmfg::NFactormerParams params =
      nmfg::make_nfactormer_params(cfg, nmfg::ModelKind::kInit, prng);
  nmfg::Rng rng(8);
  const DenseMatrix w = rng.uniform_matrix(5, 2, -1.0, 1.0);
  const DenseMatrix h = rng.uniform_matrix(4, 2, -1.0, 1.0);
  const DenseMatrix v = rng.uniform_matrix(5, 4, -1.0, 1.0);

  Tape t;
  const nmfg::StagedNF staged = nmfg::stage_params(t, params, false);
  const TensorRef vr = t.constant(v);
  const auto out = nmfg::n_factormer(t, t.constant(w), t.constant(h), vr,
                                     t.transpose(vr), staged, cfg);

  const auto lin = [&](const DenseMatrix& x) {
    return nmfg::add_rowvec(
        nmfg::matmul(nmfg::add_rowvec(nmfg::matmul(x, params.embed_w), params.embed_b),
                     params.extract_w),
        params.extract_b);
  };
  CHECK(nmfg::max_abs(nmfg::sub(t.value(out.w), lin(w))) <= 1e-13);
  CHECK(nmfg::max_abs(nmfg::sub(t.value(out.h), lin(h))) <= 1e-13);
}

TEST_CASE("n_factormer equivariance under target permutation", "[factormer]") {
  const ModelConfig cfg = small_cfg();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nmfg::Rng prng(seed + 500);
    const nmfg::NFactormerParams params =
        nmfg::make_nfactormer_params(cfg, nmfg::ModelKind::kInit, prng);
    nmfg::Rng rng(seed);
    const int m = 5, n = 6;
    const DenseMatrix w = rng.uniform_matrix(m, 2, -1.0, 1.0);
    const DenseMatrix h = rng.uniform_matrix(n, 2, -1.0, 1.0);
    const DenseMatrix v = rng.uniform_matrix(m, n, -1.0, 1.0);

    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);

    const auto run = [&](const DenseMatrix& wi, const DenseMatrix& hi,
                         const DenseMatrix& vi) {
      Tape t;
      const nmfg::StagedNF staged = nmfg::stage_params(t, params, false);
      const TensorRef vr = t.constant(vi);
      const auto out = nmfg::n_factormer(t, t.constant(wi), t.constant(hi), vr,
                                         t.transpose(vr), staged, cfg);
      return std::pair{t.value(out.w), t.value(out.h)};
    };

    // permute the columns of V together with the rows of H
    DenseMatrix v_perm(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) v_perm(i, j) = v(i, perm[j]);

    const auto [w_base, h_base] = run(w, h, v);
    const auto [w_perm, h_perm] = run(w, permute_rows(h, perm), v_perm);

    CHECK(nmfg::max_abs(nmfg::sub(w_base, w_perm)) <= 1e-10);
    CHECK(nmfg::max_abs(nmfg::sub(permute_rows(h_base, perm), h_perm)) <= 1e-10);
  }
}

TEST_CASE("n_factormer at default scale produces finite shaped output",
          "[factormer][slow]") {
  ModelConfig cfg;  // defaults: d=100, heads=4, N=4, rank=10
  nmfg::Rng prng(41);
  const nmfg::NFactormerParams params =
      nmfg::make_nfactormer_params(cfg, nmfg::ModelKind::kInit, prng);
  nmfg::Rng rng(42);
  const DenseMatrix w = rng.uniform_matrix(20, 10, 0.0, 1.0);
  const DenseMatrix h = rng.uniform_matrix(15, 10, 0.0, 1.0);
  const DenseMatrix v = rng.uniform_matrix(20, 15, 0.0, 2.0);

  Tape t;
  const nmfg::StagedNF staged = nmfg::stage_params(t, params, false);
  const TensorRef vr = t.constant(v);
  const auto out = nmfg::n_factormer(t, t.constant(w), t.constant(h), vr,
                                     t.transpose(vr), staged, cfg);
  CHECK(t.value(out.w).rows() == 20);
  CHECK(t.value(out.w).cols() == 10);
  CHECK(t.value(out.h).rows() == 15);
  CHECK(t.value(out.h).cols() == 10);
  CHECK(t.value(out.w).all_finite());
  CHECK(t.value(out.h).all_finite());
}

TEST_CASE("staging order matches the canonical parameter walk", "[factormer]") {
  const ModelConfig cfg = small_cfg();
  nmfg::Rng prng(77);
  nmfg::NFactormerParams params =
      nmfg::make_nfactormer_params(cfg, nmfg::ModelKind::kInit, prng);
  // tag every tensor with its walk index
  int index = 0;
  nmfg::for_each_param(params, [&](const std::string&, DenseMatrix& m) {
    m = DenseMatrix::filled(m.rows(), m.cols(), static_cast<double>(index++));
  });
  Tape t;
  const nmfg::StagedNF staged = nmfg::stage_params(t, params, false);
  REQUIRE(static_cast<int>(staged.flat.size()) == index);
  for (int i = 0; i < index; ++i) {
    CHECK(t.value(staged.flat[static_cast<std::size_t>(i)])(0, 0) ==
          static_cast<double>(i));
  }
}

TEST_CASE("model config validation", "[factormer]") {
  ModelConfig cfg;
  cfg.hidden = 10;
  cfg.n_heads = 4;  // not divisible
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ModelConfig{};
  CHECK(cfg.ffn_dim() == 200);
  CHECK(cfg.head_dim() == 25);
  CHECK(cfg.r_in(nmfg::ModelKind::kInit) == 10);
  CHECK(cfg.r_in(nmfg::ModelKind::kAccel) == 20);
}
