#pragma once

#include <chrono>
#include <cmath>
#include <string>
#include <utility>

#include "nmfg/matrix.hpp"
#include "nmfg/svd.hpp"
#include "nmfg/trajectory.hpp"

namespace nmfg {

// Alternating-optimization NMF baseline. Each factor's nonnegative
// least-squares subproblem
//
//   min_H 1/2 || W H^T - V ||_F^2   s.t.  H >= 0
//
// is inexactly solved by a few iterations of ADMM on the splitting
// H = H_tilde, with dual variable U (scaled so the H-solve sees H_tilde + U):
//
//   H       <- (W^T W + rho I)^-1 (W^T V + rho (H_tilde + U)^T)   [as H^T]
//   H_tilde <- (H - U)_+
//   U       <- U + H_tilde - H
//
// The Gram factorization (root-free L D L^T) is computed once per solve and
// reused across the inner iterations. The W subproblem is the same code path
// applied to V^T.

struct SolverConfig {
  double rho = 1.0;
  int inner_iters = 5;
  int outer_iters = 0;

  void validate() const {
    if (!(rho > 0.0)) throw std::invalid_argument("SolverConfig: rho must be > 0");
    if (inner_iters < 1)
      throw std::invalid_argument("SolverConfig: inner_iters must be >= 1");
  }
};

/// Warm-startable ADMM state for one factor. `h_tilde` is the feasible
/// iterate; `gram_chol` caches the packed triangular L D L^T factor of
/// W^T W + rho I for the W this solve runs against (refresh whenever W
/// changes).
struct AdmmState {
  DenseMatrix h;        // primal, n x r
  DenseMatrix h_tilde;  // auxiliary, n x r, >= 0
  DenseMatrix u;        // scaled dual, n x r
  DenseMatrix gram_chol;

  /// Fresh state at a feasible starting point, zero dual.
  static AdmmState from_start(const DenseMatrix& start) {
    AdmmState s;
    s.h = start;
    s.h_tilde = start;
    s.u = DenseMatrix(start.rows(), start.cols());
    return s;
  }

  void refresh_gram(const DenseMatrix& w, double rho) {
    const DenseMatrix gram =
        add(matmul(transpose(w), w), scale(DenseMatrix::identity(w.cols()), rho));
    gram_chol = ldlt_factor(gram);
  }
};

/// Runs cfg.inner_iters ADMM iterations for the H subproblem. Requires
/// state.gram_chol to match (w, cfg.rho). Returns the updated state;
/// state.h_tilde is the feasible result.
inline AdmmState nnls_admm(const DenseMatrix& w, const DenseMatrix& v,
                           AdmmState state, const SolverConfig& cfg) {
  cfg.validate();
  const int n = v.cols(), r = w.cols();
  if (w.rows() != v.rows()) {
    throw std::invalid_argument("nnls_admm: W rows " + std::to_string(w.rows()) +
                                " vs V rows " + std::to_string(v.rows()));
  }
  if (state.h_tilde.rows() != n || state.h_tilde.cols() != r ||
      !state.h_tilde.same_shape(state.u)) {
    throw std::invalid_argument("nnls_admm: state shape mismatch");
  }
  if (state.gram_chol.rows() != r || state.gram_chol.cols() != r) {
    throw std::invalid_argument("nnls_admm: stale gram factorization");
  }
  const DenseMatrix wt = transpose(w);
  const DenseMatrix wtv = matmul(wt, v);  // r x n
  for (int it = 0; it < cfg.inner_iters; ++it) {
    const DenseMatrix rhs =
        add(wtv, scale(transpose(add(state.h_tilde, state.u)), cfg.rho));
    state.h = transpose(ldlt_solve(state.gram_chol, rhs));
    state.h_tilde = relu_mat(sub(state.h, state.u));
    state.u = add(state.u, sub(state.h_tilde, state.h));
  }
  state.h.require_finite("nnls_admm: diverged");
  state.u.require_finite("nnls_admm: diverged");
  return state;
}

/// 1/2 || W H^T - V ||_F^2.
inline double loss_frob(const DenseMatrix& w, const DenseMatrix& h,
                        const DenseMatrix& v) {
  return 0.5 * frob_norm_sq(sub(matmul(w, transpose(h)), v));
}

/// || W H^T - V ||_F / sqrt(m n); the elementwise reconstruction error.
inline double rmse(const DenseMatrix& w, const DenseMatrix& h,
                   const DenseMatrix& v) {
  return frob_norm(sub(matmul(w, transpose(h)), v)) /
         std::sqrt(static_cast<double>(v.rows()) * static_cast<double>(v.cols()));
}

namespace detail {
inline void require_nonneg(const DenseMatrix& m, const char* what) {
  for (double x : m.values()) {
    if (x < 0.0) {
      throw std::invalid_argument(std::string(what) + ": negative entries");
    }
  }
}
}  // namespace detail

/// Alternating optimization: per outer iteration, one inexact ADMM solve for
/// H against V, then one for W against V^T. Dual and auxiliary variables warm
/// start across outer iterations; the trajectory records the feasible
/// iterates (h_tilde / w_tilde).
inline Trajectory ao_admm(const DenseMatrix& v, const DenseMatrix& w0,
                          const DenseMatrix& h0, const SolverConfig& cfg) {
  cfg.validate();
  detail::require_nonneg(w0, "ao_admm: W0");
  detail::require_nonneg(h0, "ao_admm: H0");
  if (w0.rows() != v.rows() || h0.rows() != v.cols() || w0.cols() != h0.cols()) {
    throw std::invalid_argument("ao_admm: factor shapes do not match V");
  }
  const auto start = std::chrono::steady_clock::now();
  const DenseMatrix vt = transpose(v);

  Trajectory traj;
  traj.points.push_back({w0, h0, rmse(w0, h0, v), 0.0});

  AdmmState state_h = AdmmState::from_start(h0);
  AdmmState state_w = AdmmState::from_start(w0);
  for (int t = 0; t < cfg.outer_iters; ++t) {
    state_h.refresh_gram(state_w.h_tilde, cfg.rho);
    state_h = nnls_admm(state_w.h_tilde, v, std::move(state_h), cfg);
    state_w.refresh_gram(state_h.h_tilde, cfg.rho);
    state_w = nnls_admm(state_h.h_tilde, vt, std::move(state_w), cfg);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    traj.points.push_back({state_w.h_tilde, state_h.h_tilde,
                           rmse(state_w.h_tilde, state_h.h_tilde, v), secs});
  }
  return traj;
}

/// Nonnegative double-SVD initialization. Component 0 uses the absolute
/// values of the leading singular pair; later components keep whichever of
/// the positive/negative part pairs has the larger product of norms, rescaled
/// so the component carries sigma_c times the chosen parts' weight. Zeros
/// introduced by the part selection stay zero. Small negative entries of V
/// (e.g. generator noise) are clamped internally before the SVD.
inline std::pair<DenseMatrix, DenseMatrix> nndsvd_init(const DenseMatrix& v,
                                                       int rank) {
  const int m = v.rows(), n = v.cols();
  if (rank < 1 || rank > std::min(m, n)) {
    throw std::invalid_argument("nndsvd_init: rank " + std::to_string(rank) +
                                " out of range for " + std::to_string(m) + "x" +
                                std::to_string(n));
  }
  const SvdResult svd = jacobi_svd(relu_mat(v));

  DenseMatrix w(m, rank), h(n, rank);
  const double s0 = std::sqrt(svd.sigma[0]);
  for (int i = 0; i < m; ++i) w(i, 0) = s0 * std::abs(svd.u(i, 0));
  for (int j = 0; j < n; ++j) h(j, 0) = s0 * std::abs(svd.v(j, 0));

  for (int c = 1; c < rank; ++c) {
    double norm_up = 0.0, norm_un = 0.0, norm_vp = 0.0, norm_vn = 0.0;
    for (int i = 0; i < m; ++i) {
      const double x = svd.u(i, c);
      if (x > 0.0) norm_up += x * x;
      else norm_un += x * x;
    }
    for (int j = 0; j < n; ++j) {
      const double x = svd.v(j, c);
      if (x > 0.0) norm_vp += x * x;
      else norm_vn += x * x;
    }
    norm_up = std::sqrt(norm_up);
    norm_un = std::sqrt(norm_un);
    norm_vp = std::sqrt(norm_vp);
    norm_vn = std::sqrt(norm_vn);

    const double mp = norm_up * norm_vp;
    const double mn = norm_un * norm_vn;
    if (mp >= mn && mp > 0.0) {
      const double sc = std::sqrt(svd.sigma[c] * mp);
      for (int i = 0; i < m; ++i)
        w(i, c) = svd.u(i, c) > 0.0 ? sc * svd.u(i, c) / norm_up : 0.0;
      for (int j = 0; j < n; ++j)
        h(j, c) = svd.v(j, c) > 0.0 ? sc * svd.v(j, c) / norm_vp : 0.0;
    } else if (mn > mp) {
      const double sc = std::sqrt(svd.sigma[c] * mn);
      for (int i = 0; i < m; ++i)
        w(i, c) = svd.u(i, c) < 0.0 ? -sc * svd.u(i, c) / norm_un : 0.0;
      for (int j = 0; j < n; ++j)
        h(j, c) = svd.v(j, c) < 0.0 ? -sc * svd.v(j, c) / norm_vn : 0.0;
    }
    // mp == mn == 0: zero singular direction, columns stay zero
  }
  return {std::move(w), std::move(h)};
}

}  // namespace nmfg
