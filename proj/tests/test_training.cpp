#include <catch2/catch_amalgamated.hpp>

#include "nmfg/rng.hpp"
#include "nmfg/training.hpp"

using nmfg::DenseMatrix;
using nmfg::ModelConfig;
using nmfg::ModelKind;
using nmfg::TrainConfig;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig cfg;
  cfg.rank = 2;
  cfg.hidden = 8;
  cfg.n_heads = 2;
  cfg.n_rounds = 1;
  cfg.outer_iters = 2;
  cfg.inner_iters = 2;
  return cfg;
}

nmfg::Trajectory make_traj(const std::vector<std::pair<DenseMatrix, DenseMatrix>>& its,
                           const DenseMatrix& v) {
  nmfg::Trajectory t;
  for (const auto& [w, h] : its) t.points.push_back({w, h, nmfg::rmse(w, h, v), 0.0});
  return t;
}

}  // namespace

TEST_CASE("discounted loss weights late iterates most", "[training]") {
  nmfg::Rng rng(3);
  const DenseMatrix v = rng.uniform_matrix(4, 3, 0.0, 1.0);
  const DenseMatrix w0 = rng.uniform_matrix(4, 2, 0.0, 1.0);
  const DenseMatrix h0 = rng.uniform_matrix(3, 2, 0.0, 1.0);
  const DenseMatrix w1 = rng.uniform_matrix(4, 2, 0.0, 1.0);
  const DenseMatrix h1 = rng.uniform_matrix(3, 2, 0.0, 1.0);

  // single iterate: plain loss
  CHECK(nmfg::discounted_loss(make_traj({{w0, h0}}, v), v, 0.2) ==
        nmfg::loss_frob(w0, h0, v));

  // two iterates at gamma 0.2
  const double expect =
      nmfg::loss_frob(w1, h1, v) + 0.2 * nmfg::loss_frob(w0, h0, v);
  CHECK(nmfg::discounted_loss(make_traj({{w0, h0}, {w1, h1}}, v), v, 0.2) ==
        Catch::Approx(expect).epsilon(1e-15));

  // gamma 1 degenerates to the unweighted sum, exactly
  const double plain = nmfg::loss_frob(w0, h0, v) + nmfg::loss_frob(w1, h1, v);
  CHECK(nmfg::discounted_loss(make_traj({{w0, h0}, {w1, h1}}, v), v, 1.0) == plain);

  // an exact trajectory has zero loss
  const DenseMatrix prod = nmfg::matmul(w0, nmfg::transpose(h0));
  CHECK(nmfg::discounted_loss(make_traj({{w0, h0}, {w0, h0}}, prod), prod, 0.5) ==
        0.0);
}

TEST_CASE("tape and plain discounted losses agree", "[training]") {
  nmfg::Rng rng(5);
  const DenseMatrix v = rng.uniform_matrix(5, 4, 0.0, 1.0);
  std::vector<std::pair<DenseMatrix, DenseMatrix>> its;
  for (int k = 0; k < 3; ++k) {
    its.emplace_back(rng.uniform_matrix(5, 2, 0.0, 1.0),
                     rng.uniform_matrix(4, 2, 0.0, 1.0));
  }
  nmfg::Tape t;
  std::vector<nmfg::FactorPairRef> refs;
  for (const auto& [w, h] : its) refs.push_back({t.constant(w), t.constant(h)});
  const double on_tape =
      t.value(nmfg::discounted_loss_tape(t, refs, t.constant(v), 0.2))(0, 0);
  const double plain = nmfg::discounted_loss(make_traj(its, v), v, 0.2);
  CHECK(on_tape == Catch::Approx(plain).epsilon(1e-14));
}

TEST_CASE("adamw single-step hand values", "[training]") {
  // zero gradient, zero decay: identity
  {
    DenseMatrix theta = DenseMatrix::filled(2, 2, 0.7);
    std::vector<DenseMatrix*> params{&theta};
    nmfg::OptimizerState st = nmfg::OptimizerState::like(params);
    nmfg::adamw_step(params, {DenseMatrix(2, 2)}, st, 0.1, 0.0);
    CHECK(theta == DenseMatrix::filled(2, 2, 0.7));
  }
  // unit gradient: bias-corrected first step is almost exactly -lr
  {
    DenseMatrix theta(1, 1);
    std::vector<DenseMatrix*> params{&theta};
    nmfg::OptimizerState st = nmfg::OptimizerState::like(params);
    nmfg::adamw_step(params, {DenseMatrix::filled(1, 1, 1.0)}, st, 0.1, 0.0);
    CHECK(theta(0, 0) == Catch::Approx(-0.1).margin(1e-6));
  }
  // decoupled decay in isolation: theta = 1 - lr * wd * theta
  {
    DenseMatrix theta = DenseMatrix::filled(1, 1, 1.0);
    std::vector<DenseMatrix*> params{&theta};
    nmfg::OptimizerState st = nmfg::OptimizerState::like(params);
    nmfg::adamw_step(params, {DenseMatrix(1, 1)}, st, 0.1, 0.01);
    CHECK(theta(0, 0) == Catch::Approx(1.0 - 0.001).margin(1e-15));
  }
  // shape mismatch
  {
    DenseMatrix theta(2, 2);
    std::vector<DenseMatrix*> params{&theta};
    nmfg::OptimizerState st = nmfg::OptimizerState::like(params);
    CHECK_THROWS_AS(nmfg::adamw_step(params, {DenseMatrix(3, 2)}, st, 0.1, 0.0),
                    std::invalid_argument);
  }
}

TEST_CASE("cosine schedule with per-epoch decay", "[training]") {
  TrainConfig cfg = TrainConfig::defaults(ModelKind::kInit);
  cfg.lr0 = 1e-3;
  const int steps = 10;
  CHECK(nmfg::lr_schedule(0, 0, steps, cfg) == 1e-3);
  CHECK(nmfg::lr_schedule(0, steps, steps, cfg) == 0.0);
  CHECK(nmfg::lr_schedule(1, 0, steps, cfg) == Catch::Approx(0.9e-3).epsilon(1e-15));

  // non-increasing within an epoch
  double prev = nmfg::lr_schedule(2, 0, steps, cfg);
  for (int s = 1; s <= steps; ++s) {
    const double lr = nmfg::lr_schedule(2, s, steps, cfg);
    CHECK(lr <= prev);
    prev = lr;
  }
  // geometric ceiling decay
  for (int e = 1; e < 5; ++e) {
    CHECK(nmfg::lr_schedule(e, 0, steps, cfg) ==
          Catch::Approx(0.9 * nmfg::lr_schedule(e - 1, 0, steps, cfg)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(nmfg::lr_schedule(0, steps + 1, steps, cfg), std::invalid_argument);
}

TEST_CASE("acceleration curriculum", "[training]") {
  const TrainConfig cfg = TrainConfig::defaults(ModelKind::kAccel);
  const std::vector<int> expect{1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 5, 5, 5, 5, 5};
  for (int e = 0; e < 15; ++e) {
    CHECK(nmfg::curriculum_nbr_acc(e, cfg, 5) == expect[static_cast<std::size_t>(e)]);
  }
  CHECK(nmfg::curriculum_nbr_acc(10, cfg, 3) == 3);  // capped by T
}

TEST_CASE("training smoke run on a toy set", "[training][slow]") {
  const ModelConfig mcfg = tiny_cfg();
  nmfg::Rng rng(9);
  std::vector<DenseMatrix> vs;
  for (int i = 0; i < 5; ++i) {
    const DenseMatrix wt = rng.uniform_matrix(6, mcfg.rank, 0.0, 1.0);
    const DenseMatrix ht = rng.uniform_matrix(5, mcfg.rank, 0.0, 1.0);
    vs.push_back(nmfg::matmul(wt, nmfg::transpose(ht)));
  }
  const auto items = nmfg::prepare_items(vs, mcfg.rank);

  TrainConfig tcfg = TrainConfig::defaults(ModelKind::kInit);
  tcfg.epochs = 1;
  tcfg.seed = 1;
  nmfg::Rng prng(2);
  nmfg::NFactormerParams params =
      nmfg::make_nfactormer_params(mcfg, ModelKind::kInit, prng);

  const nmfg::TrainResult result =
      nmfg::train(items, &items, std::move(params), mcfg, tcfg);
  REQUIRE(result.log.size() == 5);
  for (const auto& row : result.log) {
    CHECK(std::isfinite(row.loss));
    CHECK(row.nbr_acc == 0);
  }
  CHECK(std::isfinite(result.epochs[0].mean_train_loss));
  CHECK(std::isfinite(result.epochs[0].val_rmse));
}

TEST_CASE("training runs are reproducible", "[training][slow]") {
  const ModelConfig mcfg = tiny_cfg();
  nmfg::Rng rng(13);
  std::vector<DenseMatrix> vs;
  for (int i = 0; i < 4; ++i) vs.push_back(rng.uniform_matrix(6, 5, 0.0, 2.0));
  const auto items = nmfg::prepare_items(vs, mcfg.rank);

  TrainConfig tcfg = TrainConfig::defaults(ModelKind::kInit);
  tcfg.epochs = 2;
  tcfg.seed = 7;

  const auto run = [&] {
    nmfg::Rng prng(tcfg.seed);
    return nmfg::train(items, nullptr,
                       nmfg::make_nfactormer_params(mcfg, ModelKind::kInit, prng),
                       mcfg, tcfg);
  };
  const nmfg::TrainResult a = run();
  const nmfg::TrainResult b = run();
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].lr == b.log[i].lr);
  }
  bool params_equal = true;
  nmfg::for_each_param(a.params, [&](const std::string& name, const DenseMatrix& m) {
    nmfg::for_each_param(b.params, [&](const std::string& name_b, const DenseMatrix& mb) {
      if (name == name_b && !(m == mb)) params_equal = false;
    });
  });
  CHECK(params_equal);
}

TEST_CASE("accel training logs the curriculum", "[training][slow]") {
  ModelConfig mcfg = tiny_cfg();
  mcfg.outer_iters = 3;
  nmfg::Rng rng(17);
  std::vector<DenseMatrix> vs;
  for (int i = 0; i < 2; ++i) vs.push_back(rng.uniform_matrix(5, 5, 0.0, 2.0));
  const auto items = nmfg::prepare_items(vs, mcfg.rank);

  TrainConfig tcfg = TrainConfig::defaults(ModelKind::kAccel);
  tcfg.epochs = 4;
  tcfg.seed = 3;
  nmfg::Rng prng(4);
  const nmfg::TrainResult result = nmfg::train(
      items, nullptr, nmfg::make_nfactormer_params(mcfg, ModelKind::kAccel, prng),
      mcfg, tcfg);
  for (const auto& row : result.log) {
    CHECK(row.nbr_acc == (row.epoch < 2 ? 1 : 2));
  }
}

TEST_CASE("non-finite loss aborts with the matrix id", "[training]") {
  const ModelConfig mcfg = tiny_cfg();
  // extreme magnitudes overflow the unrolled product
  std::vector<nmfg::TrainItem> items;
  items.push_back({"poison", DenseMatrix::filled(4, 4, 1e300),
                   DenseMatrix::filled(4, 2, 1e300),
                   DenseMatrix::filled(4, 2, 1e300)});
  TrainConfig tcfg = TrainConfig::defaults(ModelKind::kInit);
  tcfg.epochs = 1;
  nmfg::Rng prng(5);
  nmfg::NFactormerParams params =
      nmfg::make_nfactormer_params(mcfg, ModelKind::kInit, prng);
  try {
    nmfg::train(items, nullptr, std::move(params), mcfg, tcfg);
    FAIL("expected an error");
  } catch (const nmfg::NumericalError& e) {
    CHECK(std::string(e.what()).find("poison") != std::string::npos);
  }
}
