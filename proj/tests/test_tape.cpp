#include <catch2/catch_amalgamated.hpp>

#include "nmfg/gradcheck.hpp"
#include "nmfg/rng.hpp"
#include "nmfg/tape.hpp"

using nmfg::DenseMatrix;
using nmfg::Tape;
using nmfg::TensorRef;

TEST_CASE("primitive forward values", "[tape]") {
  Tape t;
  const TensorRef x = t.leaf(DenseMatrix::from_rows({{-1.0, 0.0, 2.0}}));
  CHECK(t.value(t.relu(x)) == DenseMatrix::from_rows({{0.0, 0.0, 2.0}}));

  const TensorRef c = t.leaf(DenseMatrix::filled(5, 1, 3.7));
  const DenseMatrix sm = t.value(t.softmax_over_sources(c));
  for (int i = 0; i < 5; ++i) CHECK(sm(i, 0) == Catch::Approx(0.2).epsilon(1e-15));

  const TensorRef b = t.leaf(DenseMatrix::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
  CHECK(t.value(t.spd_solve(t.leaf(DenseMatrix::identity(2)), b)) == t.value(b));

  // layer norm of a constant row: epsilon keeps it finite, output is the bias
  const TensorRef cx = t.leaf(DenseMatrix::filled(1, 4, 9.0));
  const TensorRef gain = t.leaf(DenseMatrix::filled(1, 4, 2.0));
  const TensorRef bias = t.leaf(DenseMatrix::from_rows({{1.0, 2.0, 3.0, 4.0}}));
  const DenseMatrix ln = t.value(t.layer_norm(cx, gain, bias));
  for (int j = 0; j < 4; ++j) CHECK(ln(0, j) == Catch::Approx(1.0 + j).margin(1e-12));
}

TEST_CASE("softmax columns are stochastic", "[tape]") {
  nmfg::Rng rng(5);
  Tape t;
  const TensorRef s = t.leaf(rng.uniform_matrix(9, 6, -4.0, 4.0));
  const DenseMatrix a = t.value(t.softmax_over_sources(s));
  for (int j = 0; j < 6; ++j) {
    double sum = 0.0;
    for (int i = 0; i < 9; ++i) {
      CHECK(a(i, j) >= 0.0);
      sum += a(i, j);
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("layer norm statistics before affine", "[tape]") {
  nmfg::Rng rng(7);
  Tape t;
  const int n = 6, d = 12;
  const TensorRef x = t.leaf(rng.uniform_matrix(n, d, -2.0, 2.0));
  const TensorRef gain = t.leaf(DenseMatrix::filled(1, d, 1.0));
  const TensorRef bias = t.leaf(DenseMatrix(1, d));
  const DenseMatrix y = t.value(t.layer_norm(x, gain, bias));
  for (int i = 0; i < n; ++i) {
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += y(i, j);
    mu /= d;
    CHECK(std::abs(mu) <= 1e-10);
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (y(i, j) - mu) * (y(i, j) - mu);
    var /= d;
    CHECK(var == Catch::Approx(1.0).margin(1e-4));
  }
}

TEST_CASE("hand-checked gradients", "[tape]") {
  {
    // loss = sum(x (.) x), grad = 2x
    Tape t;
    const TensorRef x = t.leaf(DenseMatrix::from_rows({{1.0, 2.0}}), true);
    const TensorRef loss = t.sum(t.multiply(x, x));
    t.backward(loss);
    CHECK(t.grad(x) == DenseMatrix::from_rows({{2.0, 4.0}}));
  }
  {
    // loss = sum(A B): grad_A = ones * B^T
    nmfg::Rng rng(3);
    Tape t;
    const DenseMatrix a0 = rng.uniform_matrix(3, 4, -1.0, 1.0);
    const DenseMatrix b0 = rng.uniform_matrix(4, 2, -1.0, 1.0);
    const TensorRef a = t.leaf(a0, true);
    const TensorRef b = t.leaf(b0, true);
    t.backward(t.sum(t.matmul(a, b)));
    const DenseMatrix expect_a =
        nmfg::matmul(DenseMatrix::filled(3, 2, 1.0), nmfg::transpose(b0));
    const DenseMatrix ga = t.grad(a);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(ga(i, j) == Catch::Approx(expect_a(i, j)).margin(1e-14));
  }
}

TEST_CASE("quadratic finite-difference check is tight", "[tape]") {
  nmfg::Rng rng(11);
  const DenseMatrix theta = rng.uniform_matrix(3, 5, -1.0, 1.0);
  Tape t;
  const TensorRef x = t.leaf(theta, true);
  const TensorRef loss = t.scale(t.sum(t.multiply(x, x)), 0.5);
  t.backward(loss);
  const double err = nmfg::finite_diff_check(
      [](const DenseMatrix& p) {
        Tape t2;
        const TensorRef y = t2.leaf(p, false);
        return t2.value(t2.scale(t2.sum(t2.multiply(y, y)), 0.5))(0, 0);
      },
      theta, t.grad(x), 1e-6);
  CHECK(err <= 1e-9);
}

TEST_CASE("composite graphs pass finite differences over 20 seeds",
          "[tape][oracle]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    nmfg::Rng rng(seed);
    const int m = rng.uniform_int(2, 6), n = rng.uniform_int(2, 6);
    const DenseMatrix theta = rng.uniform_matrix(m, n, -1.0, 1.0);
    const DenseMatrix c1 = rng.uniform_matrix(n, m, -1.0, 1.0);
    const DenseMatrix gain = rng.uniform_matrix(1, m, 0.5, 1.5);
    const DenseMatrix bias = rng.uniform_matrix(1, m, -0.5, 0.5);

    // mixes matmul, transpose, softmax, layer norm, elementwise ops; the
    // small prefactor keeps difference round-off under the error floor
    const auto graph = [&](Tape& t, TensorRef x) {
      const TensorRef prod = t.matmul(x, t.constant(c1));             // m x m
      const TensorRef att = t.softmax_over_sources(prod);
      const TensorRef normed =
          t.layer_norm(att, t.constant(gain), t.constant(bias));
      const TensorRef mixed = t.multiply(normed, t.transpose(prod));
      return t.scale(t.add(t.sum(mixed), t.mean(prod)), 1e-3);
    };

    Tape t;
    const TensorRef x = t.leaf(theta, true);
    t.backward(graph(t, x));
    const DenseMatrix analytic = t.grad(x);
    const double err = nmfg::finite_diff_check(
        [&](const DenseMatrix& p) {
          Tape t2;
          return t2.value(graph(t2, t2.leaf(p, false)))(0, 0);
        },
        theta, analytic, 1e-6);
    INFO("seed " << seed << " err " << err);
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("every primitive passes the finite-difference suite", "[tape][oracle]") {
  for (std::uint64_t seed : {0ull, 1ull, 2ull}) {
    const auto results = nmfg::run_gradcheck_suite(seed, 1e-5);
    for (const auto& r : results) {
      INFO(r.component << " seed " << seed << " err " << r.max_rel_err);
      CHECK(r.pass);
    }
  }
}

TEST_CASE("tape contract violations", "[tape]") {
  {
    Tape t;
    const TensorRef x = t.leaf(DenseMatrix::filled(2, 2, 1.0), true);
    const TensorRef loss = t.sum(x);
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), std::logic_error);  // single use
  }
  {
    Tape t;
    const TensorRef x = t.leaf(DenseMatrix::filled(2, 2, 1.0), true);
    CHECK_THROWS_AS(t.backward(x), std::invalid_argument);  // non-scalar loss
  }
  {
    Tape t;
    CHECK_THROWS_AS(t.leaf(DenseMatrix::from_rows({{1.0, std::nan("")}})),
                    nmfg::NumericalError);
  }
  {
    Tape t;
    const TensorRef a = t.leaf(DenseMatrix::from_rows({{1.0, 2.0}, {0.0, 1.0}}));
    const TensorRef b = t.leaf(DenseMatrix::filled(2, 1, 1.0));
    CHECK_THROWS_AS(t.spd_solve(a, b), std::invalid_argument);  // asymmetric
    const TensorRef neg = t.leaf(nmfg::scale(DenseMatrix::identity(2), -1.0));
    CHECK_THROWS_AS(t.spd_solve(neg, b), nmfg::NumericalError);  // not SPD
    CHECK_THROWS_AS(t.add(b, t.leaf(DenseMatrix::filled(3, 1, 1.0))),
                    std::invalid_argument);
  }
}

TEST_CASE("detach blocks gradient flow", "[tape]") {
  Tape t;
  const DenseMatrix x0 = DenseMatrix::from_rows({{2.0, 3.0}});
  const TensorRef x = t.leaf(x0, true);
  const TensorRef loss = t.sum(t.multiply(x, t.detach(x)));
  t.backward(loss);
  // only the undetached operand contributes: grad = detach(x) = x0
  CHECK(t.grad(x) == x0);
}

TEST_CASE("gradients flow through spd_solve chains", "[tape]") {
  // d/dB of sum(A^-1 B) with A = I is all ones
  Tape t;
  const TensorRef a = t.leaf(DenseMatrix::identity(3));
  const TensorRef b = t.leaf(DenseMatrix::filled(3, 2, 0.5), true);
  t.backward(t.sum(t.spd_solve(a, b)));
  CHECK(t.grad(b) == DenseMatrix::filled(3, 2, 1.0));
}
