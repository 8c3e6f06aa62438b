#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nmfg/factormer.hpp"
#include "nmfg/models.hpp"
#include "nmfg/rng.hpp"
#include "nmfg/tape.hpp"
#include "nmfg/training.hpp"

namespace nmfg {

// Finite-difference validation of the tape. Each component builds a scalar
// loss twice: once with gradient recording for the analytic result, then
// repeatedly without it for central differences. Components run at fixed
// small shapes; the unrolled model check gets a 10x looser threshold because
// ReLU kinks inside the solver iterations limit finite-difference accuracy.

struct GradCheckResult {
  std::string component;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Checks a scalar graph of several independent leaf tensors. graph must be
/// deterministic given the leaves.
inline double gradcheck_multi(
    const std::function<TensorRef(Tape&, const std::vector<TensorRef>&)>& graph,
    const std::vector<DenseMatrix>& inputs, double step = 1e-6) {
  Tape tape;
  std::vector<TensorRef> leaves;
  leaves.reserve(inputs.size());
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x, true));
  const TensorRef loss = graph(tape, leaves);
  tape.backward(loss);
  std::vector<DenseMatrix> grads;
  grads.reserve(leaves.size());
  for (const TensorRef r : leaves) grads.push_back(tape.grad(r));

  double worst = 0.0;
  std::vector<DenseMatrix> work = inputs;
  for (std::size_t slot = 0; slot < work.size(); ++slot) {
    const auto f = [&](const DenseMatrix& x) {
      Tape t2;
      std::vector<TensorRef> l2;
      for (std::size_t k = 0; k < work.size(); ++k) {
        l2.push_back(t2.leaf(k == slot ? x : work[k], false));
      }
      return t2.value(graph(t2, l2))(0, 0);
    };
    worst = std::max(worst, finite_diff_check(f, work[slot], grads[slot], step));
  }
  return worst;
}

/// Checks a scalar graph of a full parameter set, one tensor at a time.
inline double gradcheck_model(
    const std::function<TensorRef(Tape&, const StagedNF&)>& graph,
    const NFactormerParams& params, double step = 1e-6) {
  Tape tape;
  const StagedNF staged = stage_params(tape, params, true);
  const TensorRef loss = graph(tape, staged);
  tape.backward(loss);
  std::vector<DenseMatrix> grads;
  grads.reserve(staged.flat.size());
  for (const TensorRef r : staged.flat) grads.push_back(tape.grad(r));

  NFactormerParams work = params;
  std::vector<DenseMatrix*> slots;
  for_each_param(work, [&](const std::string&, DenseMatrix& m) { slots.push_back(&m); });

  double worst = 0.0;
  for (std::size_t slot = 0; slot < slots.size(); ++slot) {
    const auto f = [&](const DenseMatrix& x) {
      const DenseMatrix keep = *slots[slot];
      *slots[slot] = x;
      Tape t2;
      const StagedNF s2 = stage_params(t2, work, false);
      const double v = t2.value(graph(t2, s2))(0, 0);
      *slots[slot] = keep;
      return v;
    };
    worst = std::max(worst, finite_diff_check(f, *slots[slot], grads[slot], step));
  }
  return worst;
}

namespace detail {

// Probe losses carry a small constant prefactor: central differences of an
// O(1) loss have ~1e-10 round-off, which the 1e-8 denominator floor of the
// error metric turns into ~1e-2 on parameters whose true gradient is ~0.
// Scaling the loss scales that artifact away while leaving the relative
// error of every genuinely wrong gradient unchanged.
constexpr double kProbeScale = 3e-5;

/// Random values bounded away from zero, so ReLU checks never straddle the
/// kink within the finite-difference step.
inline DenseMatrix away_from_zero(Rng& rng, int rows, int cols) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values()) {
    const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
    v = sign * rng.uniform(0.2, 1.0);
  }
  return m;
}

}  // namespace detail

/// The full suite: one entry per primitive, then the attention layer, the
/// stacked network, and the unrolled learned-initialization model.
inline std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed,
                                                        double tol = 1e-5) {
  std::vector<GradCheckResult> results;
  Rng rng(seed);
  const auto record = [&](const std::string& name, double err, double threshold) {
    results.push_back({name, err, threshold, err <= threshold});
  };

  const int m = 5, n = 7, d = 6;
  const DenseMatrix cmn = rng.uniform_matrix(m, n, -1.0, 1.0);
  const DenseMatrix cnd = rng.uniform_matrix(n, d, -1.0, 1.0);
  const DenseMatrix cmd = rng.uniform_matrix(m, d, -1.0, 1.0);

  record("matmul",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.matmul(x[0], x[1]), t.constant(cmd))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1), rng.uniform_matrix(n, d, -1, 1)}),
         tol);
  record("transpose",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.transpose(x[0]), t.constant(cmn))), detail::kProbeScale);
             },
             {rng.uniform_matrix(n, m, -1, 1)}),
         tol);
  record("add_broadcast",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.add(x[0], x[1]), t.constant(cmn))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1), rng.uniform_matrix(1, n, -1, 1)}),
         tol);
  record("subtract",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.subtract(x[0], x[1]), t.constant(cmn))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1), rng.uniform_matrix(m, n, -1, 1)}),
         tol);
  record("scale",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.scale(x[0], -1.7), t.constant(cmn))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1)}),
         tol);
  record("multiply_elementwise",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.multiply(x[0], x[1]), t.constant(cmn))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1), rng.uniform_matrix(m, n, -1, 1)}),
         tol);
  record("concat_slice",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               const TensorRef cat = t.concat_columns(x[0], x[1]);
               return t.scale(t.sum(t.multiply(t.slice_columns(cat, 2, 2 + n),
                                               t.constant(cmn))),
                              detail::kProbeScale);
             },
             {rng.uniform_matrix(m, 4, -1, 1), rng.uniform_matrix(m, n, -1, 1)}),
         tol);
  record("relu",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.relu(x[0]), t.constant(cmn))), detail::kProbeScale);
             },
             {detail::away_from_zero(rng, m, n)}),
         tol);
  record("softmax_over_sources",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.softmax_over_sources(x[0]), t.constant(cmn))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -2, 2)}),
         tol);
  record("layer_norm",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.layer_norm(x[0], x[1], x[2]), t.constant(cnd))), detail::kProbeScale);
             },
             {rng.uniform_matrix(n, d, -2, 2), rng.uniform_matrix(1, d, 0.5, 1.5),
              rng.uniform_matrix(1, d, -0.5, 0.5)}),
         tol);
  record("linear",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(t.linear(x[0], x[1], x[2]), t.constant(cmd))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1), rng.uniform_matrix(n, d, -1, 1),
              rng.uniform_matrix(1, d, -1, 1)}),
         tol);
  record("spd_solve",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               // A = theta^T theta + I keeps the probe inside the SPD cone
               const int r = t.cols(x[0]);
               const TensorRef gram =
                   t.add(t.matmul(t.transpose(x[0]), x[0]),
                         t.constant(DenseMatrix::identity(r)));
               const TensorRef sol = t.spd_solve(gram, x[1]);
               return t.scale(t.sum(t.multiply(sol, t.constant(cnd))), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1), rng.uniform_matrix(n, d, -1, 1)}),
         tol);
  record("sum",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.sum(t.multiply(x[0], x[0])), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1)}),
         tol);
  record("mean",
         gradcheck_multi(
             [&](Tape& t, const std::vector<TensorRef>& x) {
               return t.scale(t.mean(t.multiply(x[0], x[0])), detail::kProbeScale);
             },
             {rng.uniform_matrix(m, n, -1, 1)}),
         tol);

  // full attention layer, d=8, heads=2, m=5, n=4
  {
    ModelConfig cfg;
    cfg.rank = 2;
    cfg.hidden = 8;
    cfg.n_heads = 2;
    cfg.n_rounds = 1;
    Rng prng(seed + 1);
    NFactormerParams params = make_nfactormer_params(cfg, ModelKind::kInit, prng);
    const DenseMatrix src = prng.uniform_matrix(5, 8, -1, 1);
    const DenseMatrix tgt = prng.uniform_matrix(4, 8, -1, 1);
    const DenseMatrix edges = prng.uniform_matrix(5, 4, -1, 1);
    const DenseMatrix probe = prng.uniform_matrix(4, 8, -1, 1);
    record("factormer",
           gradcheck_model(
               [&](Tape& t, const StagedNF& s) {
                 const TensorRef out =
                     factormer(t, t.constant(src), t.constant(tgt),
                               t.constant(edges), s.layers[0],
                               /*last_layer=*/false);
                 return t.scale(t.sum(t.multiply(out, t.constant(probe))),
                                detail::kProbeScale);
               },
               params),
           tol);

    const DenseMatrix w_in = prng.uniform_matrix(5, 2, 0.1, 1.0);
    const DenseMatrix h_in = prng.uniform_matrix(4, 2, 0.1, 1.0);
    const DenseMatrix v_in = prng.uniform_matrix(5, 4, 0.1, 1.0);
    const DenseMatrix probe_w = prng.uniform_matrix(5, 2, -1, 1);
    const DenseMatrix probe_h = prng.uniform_matrix(4, 2, -1, 1);
    record("n_factormer",
           gradcheck_model(
               [&](Tape& t, const StagedNF& s) {
                 const TensorRef v = t.constant(v_in);
                 const FactorPairRef out =
                     n_factormer(t, t.constant(w_in), t.constant(h_in), v,
                                 t.transpose(v), s, cfg);
                 return t.scale(
                     t.add(t.sum(t.multiply(out.w, t.constant(probe_w))),
                           t.sum(t.multiply(out.h, t.constant(probe_h)))),
                     detail::kProbeScale);
               },
               params),
           tol);

    // unrolled model: T=2 outer iterations, K=2 ADMM steps
    ModelConfig ucfg = cfg;
    ucfg.outer_iters = 2;
    ucfg.inner_iters = 2;
    Rng drng(seed + 2);
    DenseMatrix wt = drng.uniform_matrix(5, 2, 0.2, 1.0);
    DenseMatrix ht = drng.uniform_matrix(4, 2, 0.2, 1.0);
    DenseMatrix v_data = matmul(wt, transpose(ht));
    record("learned_init_unrolled",
           gradcheck_model(
               [&](Tape& t, const StagedNF& s) {
                 const TensorRef v = t.constant(v_data);
                 const UnrolledForward fwd = learned_init_forward(
                     t, t.constant(wt), t.constant(ht), v, s, ucfg);
                 return t.scale(
                     discounted_loss_tape(t, fwd.iterates, v, ucfg.gamma),
                     detail::kProbeScale);
               },
               params),
           10.0 * tol);
  }
  return results;
}

}  // namespace nmfg
