#pragma once

#include <chrono>
#include <utility>
#include <vector>

#include "nmfg/admm.hpp"
#include "nmfg/factormer.hpp"
#include "nmfg/tape.hpp"
#include "nmfg/trajectory.hpp"

namespace nmfg {

// End-to-end accelerated solvers. Both interleave the N-Factormer with the
// same inexact ADMM updates as the baseline, expressed as tape primitives so
// training can differentiate through the whole unrolled computation. The
// tape ADMM below mirrors nnls_admm kernel-for-kernel; with the accelerator
// bypassed the iterates match the baseline bit-for-bit.

struct TapeAdmmState {
  TensorRef x_tilde;  // feasible iterate (auxiliary variable)
  TensorRef u;        // scaled dual
};

/// inner_iters ADMM iterations for one factor on the tape: the target factor
/// solve against edge matrix `edges` (V for the H-update, V^T for the
/// W-update) with fixed other factor `f`. The Gram factorization is formed
/// once per call. With detach set, gradients stop at the call boundary.
inline TapeAdmmState nnls_admm_tape(Tape& t, TensorRef f, TensorRef edges,
                                    TapeAdmmState state, int inner_iters,
                                    double rho, bool detach) {
  const int r = t.cols(f);
  const TensorRef ft = t.transpose(f);
  const TensorRef gram = t.add(
      t.matmul(ft, f), t.constant(scale(DenseMatrix::identity(r), rho)));
  const TensorRef ftm = t.matmul(ft, edges);
  TensorRef x_tilde = state.x_tilde;
  TensorRef u = state.u;
  for (int k = 0; k < inner_iters; ++k) {
    const TensorRef rhs =
        t.add(ftm, t.scale(t.transpose(t.add(x_tilde, u)), rho));
    const TensorRef x = t.transpose(t.spd_solve(gram, rhs));
    x_tilde = t.relu(t.subtract(x, u));
    u = t.add(u, t.subtract(x_tilde, x));
  }
  if (detach) {
    x_tilde = t.detach(x_tilde);
    u = t.detach(u);
  }
  return {x_tilde, u};
}

/// Tape-side iterates of one model run: (W_t, H_t) node refs for t = 0..T
/// plus cumulative wall-clock seconds at each iterate.
struct UnrolledForward {
  std::vector<FactorPairRef> iterates;
  std::vector<double> seconds;
};

/// Learned initialization: one N-Factormer pass refines (W0, H0), projected
/// onto the nonnegative orthant, then T rounds of alternating inexact ADMM
/// warm-started from it. Iterate 0 is the projected network output.
inline UnrolledForward learned_init_forward(Tape& t, TensorRef w0, TensorRef h0,
                                            TensorRef v, const StagedNF& params,
                                            const ModelConfig& cfg) {
  cfg.validate();
  if (t.cols(w0) != cfg.rank || t.cols(h0) != cfg.rank) {
    throw std::invalid_argument("learned_init: factor rank does not match config");
  }
  if (t.value(params.embed_w).rows() != cfg.rank) {
    throw std::invalid_argument("learned_init: params expect r_in == rank");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  };
  const TensorRef vt = t.transpose(v);
  UnrolledForward fwd;

  const FactorPairRef net = n_factormer(t, w0, h0, v, vt, params, cfg);
  TensorRef w = t.relu(net.w);
  TensorRef h = t.relu(net.h);
  fwd.iterates.push_back({w, h});
  fwd.seconds.push_back(elapsed());

  TapeAdmmState sh{h, t.constant(DenseMatrix(t.rows(h), cfg.rank))};
  TapeAdmmState sw{w, t.constant(DenseMatrix(t.rows(w), cfg.rank))};
  for (int step = 0; step < cfg.outer_iters; ++step) {
    sh = nnls_admm_tape(t, sw.x_tilde, v, sh, cfg.inner_iters, cfg.rho,
                        cfg.detach_solver);
    sw = nnls_admm_tape(t, sh.x_tilde, vt, sw, cfg.inner_iters, cfg.rho,
                        cfg.detach_solver);
    fwd.iterates.push_back({sw.x_tilde, sh.x_tilde});
    fwd.seconds.push_back(elapsed());
  }
  return fwd;
}

/// Learned acceleration: each outer step runs the ADMM pair, then for the
/// first nbr_acc steps feeds (previous iterate, solver output) through the
/// N-Factormer as a fixed-point accelerator. Dual variables carry across
/// plain solver steps and reset after an accelerator intervention, which
/// moves the primal point arbitrarily. Iterate 0 is the input pair.
inline UnrolledForward learned_accel_forward(Tape& t, TensorRef w0, TensorRef h0,
                                             TensorRef v, const StagedNF& params,
                                             const ModelConfig& cfg, int nbr_acc) {
  cfg.validate();
  if (nbr_acc < 0 || nbr_acc > cfg.outer_iters) {
    throw std::invalid_argument("learned_accel: nbr_acc must be in [0, T]");
  }
  if (nbr_acc > 0 && t.value(params.embed_w).rows() != 2 * cfg.rank) {
    throw std::invalid_argument("learned_accel: params expect r_in == 2 * rank");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
        .count();
  };
  const int m = t.rows(w0), n = t.rows(h0), r = cfg.rank;
  const TensorRef vt = t.transpose(v);
  UnrolledForward fwd;
  fwd.iterates.push_back({w0, h0});
  fwd.seconds.push_back(elapsed());

  TensorRef w_cur = w0, h_cur = h0;
  TensorRef u_h = t.constant(DenseMatrix(n, r));
  TensorRef u_w = t.constant(DenseMatrix(m, r));
  for (int step = 0; step < cfg.outer_iters; ++step) {
    const TapeAdmmState sh = nnls_admm_tape(t, w_cur, v, {h_cur, u_h},
                                            cfg.inner_iters, cfg.rho,
                                            cfg.detach_solver);
    u_h = sh.u;
    const TapeAdmmState sw = nnls_admm_tape(t, sh.x_tilde, vt, {w_cur, u_w},
                                            cfg.inner_iters, cfg.rho,
                                            cfg.detach_solver);
    u_w = sw.u;
    if (step < nbr_acc) {
      const TensorRef h_cat = t.concat_columns(h_cur, sh.x_tilde);
      const TensorRef w_cat = t.concat_columns(w_cur, sw.x_tilde);
      const FactorPairRef net = n_factormer(t, w_cat, h_cat, v, vt, params, cfg);
      w_cur = t.relu(net.w);
      h_cur = t.relu(net.h);
      u_h = t.constant(DenseMatrix(n, r));
      u_w = t.constant(DenseMatrix(m, r));
    } else {
      w_cur = sw.x_tilde;
      h_cur = sh.x_tilde;
    }
    fwd.iterates.push_back({w_cur, h_cur});
    fwd.seconds.push_back(elapsed());
  }
  return fwd;
}

/// Materializes iterate values, RMSE and timing from a tape forward.
inline Trajectory trajectory_from_forward(const Tape& t, const UnrolledForward& fwd,
                                          const DenseMatrix& v) {
  Trajectory traj;
  for (std::size_t i = 0; i < fwd.iterates.size(); ++i) {
    const DenseMatrix& w = t.value(fwd.iterates[i].w);
    const DenseMatrix& h = t.value(fwd.iterates[i].h);
    if (!w.all_finite() || !h.all_finite()) {
      throw NumericalError("model forward produced non-finite iterate " +
                           std::to_string(i));
    }
    traj.points.push_back({w, h, rmse(w, h, v), fwd.seconds[i]});
  }
  return traj;
}

/// Evaluation entry point (no gradients recorded through parameters).
inline Trajectory learned_init(const DenseMatrix& w0, const DenseMatrix& h0,
                               const DenseMatrix& v, const NFactormerParams& params,
                               const ModelConfig& cfg) {
  Tape t;
  const StagedNF staged = stage_params(t, params, /*requires_grad=*/false);
  const UnrolledForward fwd =
      learned_init_forward(t, t.constant(w0), t.constant(h0), t.constant(v),
                           staged, cfg);
  return trajectory_from_forward(t, fwd, v);
}

inline Trajectory learned_accel(const DenseMatrix& w0, const DenseMatrix& h0,
                                const DenseMatrix& v, const NFactormerParams& params,
                                const ModelConfig& cfg, int nbr_acc) {
  Tape t;
  const StagedNF staged = stage_params(t, params, /*requires_grad=*/false);
  const UnrolledForward fwd =
      learned_accel_forward(t, t.constant(w0), t.constant(h0), t.constant(v),
                            staged, cfg, nbr_acc);
  return trajectory_from_forward(t, fwd, v);
}

}  // namespace nmfg
