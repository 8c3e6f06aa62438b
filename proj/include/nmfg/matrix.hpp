#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "nmfg/errors.hpp"

namespace nmfg {

/// Row-major dense matrix of 64-bit reals. The universal carrier for data
/// matrices and factor matrices. A default-constructed matrix is empty (0x0)
/// and only valid as a placeholder; every sized matrix has positive
/// dimensions.
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(int rows, int cols)
      : rows_(rows), cols_(cols), data_(checked_size(rows, cols), 0.0) {}

  DenseMatrix(int rows, int cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != checked_size(rows, cols)) {
      throw std::invalid_argument("DenseMatrix: data length " +
                                  std::to_string(data_.size()) +
                                  " does not match " + std::to_string(rows) +
                                  "x" + std::to_string(cols));
    }
  }

  static DenseMatrix identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix filled(int rows, int cols, double value) {
    DenseMatrix m(rows, cols);
    std::fill(m.data_.begin(), m.data_.end(), value);
    return m;
  }

  static DenseMatrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows) {
    int r = static_cast<int>(rows.size());
    int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    DenseMatrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c) {
        throw std::invalid_argument("DenseMatrix::from_rows: ragged rows");
      }
      int j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  double& operator()(int i, int j) {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }
  double operator()(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * cols_ + j];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool same_shape(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void require_finite(const char* what) const {
    if (!all_finite()) {
      throw NumericalError(std::string(what) + ": non-finite values");
    }
  }

  bool operator==(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  static std::size_t checked_size(int rows, int cols) {
    if (rows <= 0 || cols <= 0) {
      throw std::invalid_argument("DenseMatrix: dimensions must be positive, got " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (static_cast<long long>(rows) * cols > (1LL << 31)) {
      throw std::invalid_argument("DenseMatrix: dimensions too large");
    }
    return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void require_same_shape(const DenseMatrix& a, const DenseMatrix& b,
                               const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}
}  // namespace detail

// Dense kernels. Every higher-level path (solver, tape primitives) funnels
// through these, so two routes computing the same quantity produce identical
// bits.

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  DenseMatrix c(a.rows(), b.cols());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    double* ci = c.data() + static_cast<std::size_t>(i) * n;
    for (int l = 0; l < k; ++l) {
      const double ail = a(i, l);
      if (ail == 0.0) continue;
      const double* bl = b.data() + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
  return c;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "add");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] += b.values()[i];
  return c;
}

inline DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "sub");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] -= b.values()[i];
  return c;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_shape(a, b, "hadamard");
  DenseMatrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] *= b.values()[i];
  return c;
}

inline DenseMatrix scale(const DenseMatrix& a, double s) {
  DenseMatrix c = a;
  for (double& v : c.values()) v *= s;
  return c;
}

/// a + row broadcast: adds the 1 x cols vector to every row of a.
inline DenseMatrix add_rowvec(const DenseMatrix& a, const DenseMatrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_rowvec: expected 1x" +
                                std::to_string(a.cols()) + " row vector");
  }
  DenseMatrix c = a;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) c(i, j) += row(0, j);
  return c;
}

inline DenseMatrix relu_mat(const DenseMatrix& a) {
  DenseMatrix c = a;
  for (double& v : c.values()) v = v > 0.0 ? v : 0.0;
  return c;
}

/// Column sums as a 1 x cols row vector.
inline DenseMatrix colsum(const DenseMatrix& a) {
  DenseMatrix s(1, a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) s(0, j) += a(i, j);
  return s;
}

inline double sum_all(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

inline double mean_all(const DenseMatrix& a) {
  return sum_all(a) / static_cast<double>(a.size());
}

inline double frob_norm_sq(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return s;
}

inline double frob_norm(const DenseMatrix& a) { return std::sqrt(frob_norm_sq(a)); }

inline double max_abs(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.values()) s = std::max(s, std::abs(v));
  return s;
}

/// Root-free Cholesky (L D L^T) factor of a symmetric positive-definite
/// matrix, packed into one lower triangle: D on the diagonal, unit-L strictly
/// below. Only the lower triangle of the input is read. Avoiding square
/// roots keeps solves of exactly representable systems exact (a 1x1 system
/// a x = b solves as b/a). Throws NumericalError on a nonpositive pivot.
inline DenseMatrix ldlt_factor(const DenseMatrix& a) {
  if (a.rows() != a.cols()) {
    throw std::invalid_argument("ldlt_factor: matrix must be square");
  }
  const int n = a.rows();
  DenseMatrix f(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    for (int k = 0; k < j; ++k) d -= f(j, k) * f(j, k) * f(k, k);
    if (!(d > 0.0)) {
      throw NumericalError("ldlt_factor: matrix not positive-definite (pivot " +
                           std::to_string(d) + " at " + std::to_string(j) + ")");
    }
    f(j, j) = d;
    for (int i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= f(i, k) * f(j, k) * f(k, k);
      f(i, j) = s / d;
    }
  }
  return f;
}

/// Solves (L D L^T) X = B given the packed factor from ldlt_factor.
inline DenseMatrix ldlt_solve(const DenseMatrix& f, const DenseMatrix& b) {
  if (f.rows() != f.cols() || f.rows() != b.rows()) {
    throw std::invalid_argument("ldlt_solve: incompatible shapes");
  }
  const int n = f.rows(), k = b.cols();
  DenseMatrix x = b;
  for (int c = 0; c < k; ++c) {
    // unit lower: L y = b
    for (int i = 0; i < n; ++i) {
      double s = x(i, c);
      for (int j = 0; j < i; ++j) s -= f(i, j) * x(j, c);
      x(i, c) = s;
    }
    // diagonal and unit upper: D L^T x = y
    for (int i = n - 1; i >= 0; --i) {
      double s = x(i, c) / f(i, i);
      for (int j = i + 1; j < n; ++j) s -= f(j, i) * x(j, c);
      x(i, c) = s;
    }
  }
  return x;
}

/// Expands a packed L D L^T factor back to the full matrix (for tests and
/// invariant checks).
inline DenseMatrix ldlt_reconstruct(const DenseMatrix& f) {
  const int n = f.rows();
  DenseMatrix l = DenseMatrix::identity(n);
  DenseMatrix d(n, n);
  for (int i = 0; i < n; ++i) {
    d(i, i) = f(i, i);
    for (int j = 0; j < i; ++j) l(i, j) = f(i, j);
  }
  return matmul(matmul(l, d), transpose(l));
}

}  // namespace nmfg
