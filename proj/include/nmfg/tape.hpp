#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "nmfg/matrix.hpp"

namespace nmfg {

/// Handle to a tensor recorded on a Tape. A tensor is a rank <= 2 array of
/// 64-bit reals; scalars are 1x1, row vectors 1xk.
struct TensorRef {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape over dense matrices. Operations execute eagerly and
/// record what the backward pass needs; backward() walks the record once in
/// reverse and accumulates gradients into every reachable leaf that requires
/// them. A tape is single-use: one forward build, one backward call.
///
/// The primitive set is the closure of what the attention layers and the
/// unrolled ADMM solver need; each backward rule is a direct matrix-calculus
/// transcription kept small enough to audit by eye.
class Tape {
  enum class Op {
    kLeaf,
    kMatmul,
    kTranspose,
    kAdd,
    kAddRow,
    kSub,
    kScale,
    kMul,
    kConcatCols,
    kSliceCols,
    kRelu,
    kSoftmaxSrc,
    kLayerNorm,
    kSpdSolve,
    kSum,
    kMean,
    kDetach,
  };

  struct Node {
    explicit Node(Op o, int in_a = -1, int in_b = -1, int in_c = -1)
        : op(o), a(in_a), b(in_b), c(in_c) {}
    Op op;
    int a, b, c;          // input node ids
    double scalar = 0.0;  // kScale factor
    int i0 = 0, i1 = 0;   // kSliceCols bounds
    DenseMatrix value;
    DenseMatrix grad;            // empty until touched by backward
    DenseMatrix saved0, saved1;  // op-specific forward residue
    bool requires_grad = false;
  };

 public:
  std::size_t num_nodes() const { return nodes_.size(); }

  const DenseMatrix& value(TensorRef t) const { return node(t).value; }
  int rows(TensorRef t) const { return node(t).value.rows(); }
  int cols(TensorRef t) const { return node(t).value.cols(); }
  bool requires_grad(TensorRef t) const { return node(t).requires_grad; }

  /// Gradient of the last backward() target with respect to this node.
  /// Zero-filled if the node never received any contribution.
  DenseMatrix grad(TensorRef t) const {
    const Node& n = node(t);
    if (!backward_done_) throw std::logic_error("Tape::grad: backward() not run");
    if (!n.requires_grad)
      throw std::logic_error("Tape::grad: node does not require gradients");
    if (n.grad.empty()) return DenseMatrix(n.value.rows(), n.value.cols());
    return n.grad;
  }

  TensorRef leaf(DenseMatrix v, bool requires_grad = false) {
    if (v.empty()) throw std::invalid_argument("Tape::leaf: empty tensor");
    v.require_finite("Tape::leaf");
    Node n{Op::kLeaf};
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  TensorRef constant(DenseMatrix v) { return leaf(std::move(v), false); }

  TensorRef scalar_constant(double v) {
    return constant(DenseMatrix(1, 1, {v}));
  }

  TensorRef matmul(TensorRef a, TensorRef b) {
    Node n{Op::kMatmul, a.id, b.id};
    n.value = nmfg::matmul(node(a).value, node(b).value);
    return push_binary(std::move(n), a, b);
  }

  TensorRef transpose(TensorRef a) {
    Node n{Op::kTranspose, a.id};
    n.value = nmfg::transpose(node(a).value);
    return push_unary(std::move(n), a);
  }

  /// Same-shape addition, or row-vector broadcast when b is 1 x cols(a).
  /// No other broadcasting exists; shape mismatches are errors.
  TensorRef add(TensorRef a, TensorRef b) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(b).value;
    if (av.same_shape(bv)) {
      Node n{Op::kAdd, a.id, b.id};
      n.value = nmfg::add(av, bv);
      return push_binary(std::move(n), a, b);
    }
    if (bv.rows() == 1 && bv.cols() == av.cols() && av.rows() > 1) {
      Node n{Op::kAddRow, a.id, b.id};
      n.value = add_rowvec(av, bv);
      return push_binary(std::move(n), a, b);
    }
    throw std::invalid_argument("Tape::add: shape mismatch");
  }

  TensorRef subtract(TensorRef a, TensorRef b) {
    Node n{Op::kSub, a.id, b.id};
    n.value = nmfg::sub(node(a).value, node(b).value);
    return push_binary(std::move(n), a, b);
  }

  TensorRef scale(TensorRef a, double s) {
    Node n{Op::kScale, a.id};
    n.scalar = s;
    n.value = nmfg::scale(node(a).value, s);
    return push_unary(std::move(n), a);
  }

  TensorRef multiply(TensorRef a, TensorRef b) {
    Node n{Op::kMul, a.id, b.id};
    n.value = hadamard(node(a).value, node(b).value);
    return push_binary(std::move(n), a, b);
  }

  TensorRef concat_columns(TensorRef a, TensorRef b) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(b).value;
    if (av.rows() != bv.rows()) {
      throw std::invalid_argument("Tape::concat_columns: row count mismatch");
    }
    Node n{Op::kConcatCols, a.id, b.id};
    n.value = DenseMatrix(av.rows(), av.cols() + bv.cols());
    for (int i = 0; i < av.rows(); ++i) {
      for (int j = 0; j < av.cols(); ++j) n.value(i, j) = av(i, j);
      for (int j = 0; j < bv.cols(); ++j) n.value(i, av.cols() + j) = bv(i, j);
    }
    return push_binary(std::move(n), a, b);
  }

  /// Columns [c0, c1) of a.
  TensorRef slice_columns(TensorRef a, int c0, int c1) {
    const DenseMatrix& av = node(a).value;
    if (c0 < 0 || c1 > av.cols() || c0 >= c1) {
      throw std::invalid_argument("Tape::slice_columns: bad column range [" +
                                  std::to_string(c0) + ", " + std::to_string(c1) +
                                  ") for " + std::to_string(av.cols()) + " columns");
    }
    Node n{Op::kSliceCols, a.id};
    n.i0 = c0;
    n.i1 = c1;
    n.value = DenseMatrix(av.rows(), c1 - c0);
    for (int i = 0; i < av.rows(); ++i)
      for (int j = c0; j < c1; ++j) n.value(i, j - c0) = av(i, j);
    return push_unary(std::move(n), a);
  }

  TensorRef relu(TensorRef a) {
    Node n{Op::kRelu, a.id};
    n.value = relu_mat(node(a).value);
    return push_unary(std::move(n), a);
  }

  /// Column-wise softmax: normalizes over the source-node axis (rows). Each
  /// output column is nonnegative and sums to 1.
  TensorRef softmax_over_sources(TensorRef a) {
    const DenseMatrix& av = node(a).value;
    Node n{Op::kSoftmaxSrc, a.id};
    n.value = DenseMatrix(av.rows(), av.cols());
    for (int j = 0; j < av.cols(); ++j) {
      double mx = av(0, j);
      for (int i = 1; i < av.rows(); ++i) mx = std::max(mx, av(i, j));
      double z = 0.0;
      for (int i = 0; i < av.rows(); ++i) {
        n.value(i, j) = std::exp(av(i, j) - mx);
        z += n.value(i, j);
      }
      for (int i = 0; i < av.rows(); ++i) n.value(i, j) /= z;
    }
    return push_unary(std::move(n), a);
  }

  /// Row-wise layer norm over the feature axis with learned gain/bias
  /// (1 x d each), epsilon 1e-5, biased variance.
  TensorRef layer_norm(TensorRef x, TensorRef gain, TensorRef bias) {
    const DenseMatrix& xv = node(x).value;
    const DenseMatrix& gv = node(gain).value;
    const DenseMatrix& bv = node(bias).value;
    const int d = xv.cols();
    if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
      throw std::invalid_argument("Tape::layer_norm: gain/bias must be 1 x cols(x)");
    }
    Node n{Op::kLayerNorm, x.id, gain.id, bias.id};
    n.value = DenseMatrix(xv.rows(), d);
    n.saved0 = DenseMatrix(xv.rows(), d);  // normalized x
    n.saved1 = DenseMatrix(xv.rows(), 1);  // 1 / sqrt(var + eps)
    for (int i = 0; i < xv.rows(); ++i) {
      double mu = 0.0;
      for (int j = 0; j < d; ++j) mu += xv(i, j);
      mu /= d;
      double var = 0.0;
      for (int j = 0; j < d; ++j) {
        const double c = xv(i, j) - mu;
        var += c * c;
      }
      var /= d;
      const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
      n.saved1(i, 0) = inv_std;
      for (int j = 0; j < d; ++j) {
        const double xh = (xv(i, j) - mu) * inv_std;
        n.saved0(i, j) = xh;
        n.value(i, j) = xh * gv(0, j) + bv(0, j);
      }
    }
    Node moved = std::move(n);
    moved.requires_grad = node(x).requires_grad || node(gain).requires_grad ||
                          node(bias).requires_grad;
    return push(std::move(moved));
  }

  /// x Theta + bias; bias broadcasts over rows.
  TensorRef linear(TensorRef x, TensorRef weight, TensorRef bias) {
    return add(matmul(x, weight), bias);
  }

  /// X = A^-1 B for symmetric positive-definite A. A must be symmetric to
  /// 1e-10; the Cholesky factor is kept for the backward pass, whose rule is
  /// dB = A^-1 G, dA = -(A^-1 G) X^T for upstream G.
  TensorRef spd_solve(TensorRef a, TensorRef b) {
    const DenseMatrix& av = node(a).value;
    const DenseMatrix& bv = node(b).value;
    if (av.rows() != av.cols()) {
      throw std::invalid_argument("Tape::spd_solve: A must be square");
    }
    double asym = 0.0;
    for (int i = 0; i < av.rows(); ++i)
      for (int j = i + 1; j < av.cols(); ++j)
        asym = std::max(asym, std::abs(av(i, j) - av(j, i)));
    if (asym > 1e-10 * std::max(1.0, max_abs(av))) {
      throw std::invalid_argument("Tape::spd_solve: A is not symmetric");
    }
    Node n{Op::kSpdSolve, a.id, b.id};
    n.saved0 = ldlt_factor(av);  // throws NumericalError if not SPD
    n.value = ldlt_solve(n.saved0, bv);
    return push_binary(std::move(n), a, b);
  }

  TensorRef sum(TensorRef a) {
    Node n{Op::kSum, a.id};
    n.value = DenseMatrix(1, 1, {sum_all(node(a).value)});
    return push_unary(std::move(n), a);
  }

  TensorRef mean(TensorRef a) {
    Node n{Op::kMean, a.id};
    n.value = DenseMatrix(1, 1, {mean_all(node(a).value)});
    return push_unary(std::move(n), a);
  }

  /// Value passes through, gradient does not.
  TensorRef detach(TensorRef a) {
    Node n{Op::kDetach, a.id};
    n.value = node(a).value;
    n.requires_grad = false;
    return push(std::move(n));
  }

  /// Reverse pass from a scalar loss node. Single use per tape.
  void backward(TensorRef loss) {
    if (backward_done_) {
      throw std::logic_error("Tape::backward: tape already consumed");
    }
    Node& ln = nodes_.at(static_cast<std::size_t>(loss.id));
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
      throw std::invalid_argument("Tape::backward: loss must be scalar");
    }
    backward_done_ = true;
    if (!ln.requires_grad) return;
    ln.grad = DenseMatrix(1, 1, {1.0});
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty()) continue;
      propagate(n);
    }
  }

 private:
  static constexpr double kLayerNormEps = 1e-5;

  const Node& node(TensorRef t) const {
    return nodes_.at(static_cast<std::size_t>(t.id));
  }
  Node& mutable_node(int id) { return nodes_.at(static_cast<std::size_t>(id)); }

  TensorRef push(Node n) {
    nodes_.push_back(std::move(n));
    return TensorRef{static_cast<int>(nodes_.size()) - 1};
  }
  TensorRef push_unary(Node n, TensorRef a) {
    n.requires_grad = node(a).requires_grad;
    return push(std::move(n));
  }
  TensorRef push_binary(Node n, TensorRef a, TensorRef b) {
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    return push(std::move(n));
  }

  DenseMatrix& accum(int id) {
    Node& n = mutable_node(id);
    if (n.grad.empty()) n.grad = DenseMatrix(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool wants_grad(int id) { return id >= 0 && mutable_node(id).requires_grad; }

  void propagate(Node& n) {
    const DenseMatrix& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
      case Op::kDetach:
        break;
      case Op::kMatmul: {
        if (wants_grad(n.a)) {
          DenseMatrix da = nmfg::matmul(g, nmfg::transpose(mutable_node(n.b).value));
          accumulate(n.a, da);
        }
        if (wants_grad(n.b)) {
          DenseMatrix db = nmfg::matmul(nmfg::transpose(mutable_node(n.a).value), g);
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kTranspose:
        if (wants_grad(n.a)) {
          DenseMatrix da = nmfg::transpose(g);
          accumulate(n.a, da);
        }
        break;
      case Op::kAdd:
        if (wants_grad(n.a)) accumulate(n.a, g);
        if (wants_grad(n.b)) accumulate(n.b, g);
        break;
      case Op::kAddRow: {
        if (wants_grad(n.a)) accumulate(n.a, g);
        if (wants_grad(n.b)) {
          DenseMatrix db = colsum(g);
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kSub: {
        if (wants_grad(n.a)) accumulate(n.a, g);
        if (wants_grad(n.b)) {
          DenseMatrix db = nmfg::scale(g, -1.0);
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kScale:
        if (wants_grad(n.a)) {
          DenseMatrix da = nmfg::scale(g, n.scalar);
          accumulate(n.a, da);
        }
        break;
      case Op::kMul: {
        if (wants_grad(n.a)) {
          DenseMatrix da = hadamard(g, mutable_node(n.b).value);
          accumulate(n.a, da);
        }
        if (wants_grad(n.b)) {
          DenseMatrix db = hadamard(g, mutable_node(n.a).value);
          accumulate(n.b, db);
        }
        break;
      }
      case Op::kConcatCols: {
        const int ca = mutable_node(n.a).value.cols();
        if (wants_grad(n.a)) {
          DenseMatrix& da = accum(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < ca; ++j) da(i, j) += g(i, j);
        }
        if (wants_grad(n.b)) {
          DenseMatrix& db = accum(n.b);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < db.cols(); ++j) db(i, j) += g(i, ca + j);
        }
        break;
      }
      case Op::kSliceCols:
        if (wants_grad(n.a)) {
          DenseMatrix& da = accum(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) da(i, n.i0 + j) += g(i, j);
        }
        break;
      case Op::kRelu:
        if (wants_grad(n.a)) {
          const DenseMatrix& x = mutable_node(n.a).value;
          DenseMatrix& da = accum(n.a);
          for (std::size_t i = 0; i < x.size(); ++i) {
            // subgradient 0 at 0
            if (x.values()[i] > 0.0) da.values()[i] += g.values()[i];
          }
        }
        break;
      case Op::kSoftmaxSrc:
        if (wants_grad(n.a)) {
          DenseMatrix& da = accum(n.a);
          const DenseMatrix& alpha = n.value;
          for (int j = 0; j < alpha.cols(); ++j) {
            double dotag = 0.0;
            for (int i = 0; i < alpha.rows(); ++i) dotag += alpha(i, j) * g(i, j);
            for (int i = 0; i < alpha.rows(); ++i)
              da(i, j) += alpha(i, j) * (g(i, j) - dotag);
          }
        }
        break;
      case Op::kLayerNorm: {
        const DenseMatrix& xhat = n.saved0;
        const DenseMatrix& inv_std = n.saved1;
        const DenseMatrix& gain = mutable_node(n.b).value;
        const int d = xhat.cols();
        if (wants_grad(n.b)) {
          DenseMatrix& dg = accum(n.b);
          for (int i = 0; i < xhat.rows(); ++i)
            for (int j = 0; j < d; ++j) dg(0, j) += g(i, j) * xhat(i, j);
        }
        if (wants_grad(n.c)) {
          DenseMatrix& db = accum(n.c);
          for (int i = 0; i < xhat.rows(); ++i)
            for (int j = 0; j < d; ++j) db(0, j) += g(i, j);
        }
        if (wants_grad(n.a)) {
          DenseMatrix& dx = accum(n.a);
          for (int i = 0; i < xhat.rows(); ++i) {
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int j = 0; j < d; ++j) {
              const double dxh = g(i, j) * gain(0, j);
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhat(i, j);
            }
            mean_dxh /= d;
            mean_dxh_xh /= d;
            for (int j = 0; j < d; ++j) {
              const double dxh = g(i, j) * gain(0, j);
              dx(i, j) += inv_std(i, 0) * (dxh - mean_dxh - xhat(i, j) * mean_dxh_xh);
            }
          }
        }
        break;
      }
      case Op::kSpdSolve: {
        DenseMatrix db = ldlt_solve(n.saved0, g);
        if (wants_grad(n.a)) {
          DenseMatrix da = nmfg::scale(nmfg::matmul(db, nmfg::transpose(n.value)), -1.0);
          accumulate(n.a, da);
        }
        if (wants_grad(n.b)) accumulate(n.b, db);
        break;
      }
      case Op::kSum:
        if (wants_grad(n.a)) {
          DenseMatrix& da = accum(n.a);
          const double s = g(0, 0);
          for (double& v : da.values()) v += s;
        }
        break;
      case Op::kMean:
        if (wants_grad(n.a)) {
          DenseMatrix& da = accum(n.a);
          const double s = g(0, 0) / static_cast<double>(da.size());
          for (double& v : da.values()) v += s;
        }
        break;
    }
  }

  void accumulate(int id, const DenseMatrix& contribution) {
    DenseMatrix& g = accum(id);
    for (std::size_t i = 0; i < g.size(); ++i)
      g.values()[i] += contribution.values()[i];
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Central finite differences of a scalar function against a supplied
/// analytic gradient. Returns max over elements of
/// |g_ad - g_fd| / (|g_fd| + 1e-8).
inline double finite_diff_check(const std::function<double(const DenseMatrix&)>& f,
                                const DenseMatrix& theta,
                                const DenseMatrix& analytic_grad, double step) {
  if (!theta.same_shape(analytic_grad)) {
    throw std::invalid_argument("finite_diff_check: gradient shape mismatch");
  }
  double worst = 0.0;
  DenseMatrix probe = theta;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe.values()[i];
    probe.values()[i] = keep + step;
    const double fp = f(probe);
    probe.values()[i] = keep - step;
    const double fm = f(probe);
    probe.values()[i] = keep;
    const double g_fd = (fp - fm) / (2.0 * step);
    const double g_ad = analytic_grad.values()[i];
    worst = std::max(worst, std::abs(g_ad - g_fd) / (std::abs(g_fd) + 1e-8));
  }
  return worst;
}

}  // namespace nmfg
