#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "nmfg/matrix.hpp"

namespace nmfg {

/// Thin SVD, A = U diag(sigma) V^T with U m x k, V n x k, k = min(m, n),
/// singular values sorted descending.
struct SvdResult {
  DenseMatrix u;
  std::vector<double> sigma;
  DenseMatrix v;
};

/// One-sided Jacobi SVD. Deterministic: fixed sweep order, stable sort of
/// singular values. Converges when every column pair satisfies
/// |<a_p, a_q>| <= tol * ||a_p|| ||a_q||; throws NumericalError if the sweep
/// cap is hit first.
inline SvdResult jacobi_svd(const DenseMatrix& a, int max_sweeps = 100,
                            double tol = 1e-12) {
  if (a.rows() < a.cols()) {
    SvdResult t = jacobi_svd(transpose(a), max_sweeps, tol);
    return SvdResult{t.v, std::move(t.sigma), t.u};
  }
  const int m = a.rows(), n = a.cols();
  DenseMatrix b = a;
  DenseMatrix v = DenseMatrix::identity(n);

  bool converged = (n == 1);
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (int i = 0; i < m; ++i) {
          app += b(i, p) * b(i, p);
          aqq += b(i, q) * b(i, q);
          apq += b(i, p) * b(i, q);
        }
        const double denom = std::sqrt(app * aqq);
        if (denom == 0.0 || std::abs(apq) <= tol * denom) continue;
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (int i = 0; i < m; ++i) {
          const double bp = b(i, p), bq = b(i, q);
          b(i, p) = c * bp - s * bq;
          b(i, q) = s * bp + c * bq;
        }
        for (int i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) {
    throw NumericalError("jacobi_svd: no convergence after " +
                         std::to_string(max_sweeps) + " sweeps (" +
                         std::to_string(m) + "x" + std::to_string(n) + ")");
  }

  std::vector<double> sigma(n);
  for (int j = 0; j < n; ++j) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) s += b(i, j) * b(i, j);
    sigma[j] = std::sqrt(s);
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return sigma[x] > sigma[y]; });

  SvdResult r{DenseMatrix(m, n), std::vector<double>(n), DenseMatrix(n, n)};
  for (int j = 0; j < n; ++j) {
    const int src = order[j];
    r.sigma[j] = sigma[src];
    if (sigma[src] > 0.0) {
      for (int i = 0; i < m; ++i) r.u(i, j) = b(i, src) / sigma[src];
    }
    for (int i = 0; i < n; ++i) r.v(i, j) = v(i, src);
  }
  return r;
}

}  // namespace nmfg
