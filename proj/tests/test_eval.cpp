#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "nmfg/eval.hpp"
#include "nmfg/rng.hpp"

using nmfg::DenseMatrix;

TEST_CASE("quantile matches a sorted-array oracle", "[eval]") {
  nmfg::Rng rng(3);
  std::vector<double> sample;
  for (int i = 0; i < 101; ++i) sample.push_back(rng.uniform(-5.0, 5.0));

  std::vector<double> sorted = sample;
  std::sort(sorted.begin(), sorted.end());
  // with 101 points the quartile indices are exact
  CHECK(nmfg::quantile(sample, 0.25) == sorted[25]);
  CHECK(nmfg::quantile(sample, 0.5) == sorted[50]);
  CHECK(nmfg::quantile(sample, 0.75) == sorted[75]);
  CHECK(nmfg::quantile(sample, 0.0) == sorted.front());
  CHECK(nmfg::quantile(sample, 1.0) == sorted.back());

  // interpolation between the two middle points
  CHECK(nmfg::quantile({1.0, 2.0}, 0.5) == 1.5);
  CHECK_THROWS_AS(nmfg::quantile({}, 0.5), std::invalid_argument);
}

TEST_CASE("baseline-only eval leaves the ratio table empty", "[eval]") {
  nmfg::Rng rng(5);
  std::vector<DenseMatrix> matrices;
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    matrices.push_back(rng.uniform_matrix(6, 5, 0.0, 2.0));
    ids.push_back("m" + std::to_string(i));
  }
  nmfg::EvalOptions opts;
  opts.baseline = true;
  opts.rank = 2;
  opts.iters = 3;
  opts.threads = 1;
  const nmfg::EvalReport report = nmfg::run_eval(ids, matrices, opts);
  REQUIRE(report.methods == std::vector<std::string>{"baseline"});
  CHECK(report.rmse.at("baseline").size() == 3);
  CHECK(report.rmse.at("baseline")[0].size() == 4);  // iters + 1

  const std::string curves = nmfg::rmse_curves_csv(report);
  CHECK(curves.rfind("method,iteration,mean_rmse\n", 0) == 0);
  CHECK(std::count(curves.begin(), curves.end(), '\n') == 1 + 4);

  const std::string ratios = nmfg::ratio_quartiles_csv(report);
  CHECK(ratios == "method,iteration,q1,median,q3\n");
}

TEST_CASE("bypassed accelerator yields unit ratios and ordered quartiles",
          "[eval]") {
  nmfg::Rng rng(7);
  std::vector<DenseMatrix> matrices;
  std::vector<std::string> ids;
  for (int i = 0; i < 5; ++i) {
    matrices.push_back(rng.uniform_matrix(7, 6, 0.0, 2.0));
    ids.push_back("m" + std::to_string(i));
  }
  nmfg::ModelConfig cfg;
  cfg.rank = 2;
  cfg.hidden = 8;
  cfg.n_heads = 2;
  cfg.n_rounds = 1;
  nmfg::Rng prng(8);
  nmfg::Checkpoint accel;
  accel.config = cfg;
  accel.kind = nmfg::ModelKind::kAccel;
  accel.params = nmfg::make_nfactormer_params(cfg, nmfg::ModelKind::kAccel, prng);

  nmfg::EvalOptions opts;
  opts.baseline = true;
  opts.accel = &accel;
  opts.nbr_acc = 0;  // pass-through
  opts.rank = 2;
  opts.iters = 3;
  opts.threads = 2;
  const nmfg::EvalReport report = nmfg::run_eval(ids, matrices, opts);

  const auto& base = report.rmse.at("baseline");
  const auto& acc = report.rmse.at("accel");
  for (std::size_t i = 0; i < base.size(); ++i) {
    for (std::size_t t = 0; t < base[i].size(); ++t) {
      CHECK(acc[i][t] == base[i][t]);
    }
  }

  // all ratios exactly 1 -> quartiles exactly 1, and ordered
  const std::string csv = nmfg::ratio_quartiles_csv(report);
  std::size_t lines = 0;
  std::size_t pos = csv.find('\n') + 1;
  while (pos < csv.size()) {
    const std::size_t end = csv.find('\n', pos);
    const std::string line = csv.substr(pos, end - pos);
    // method,iter,q1,median,q3
    const std::size_t c1 = line.rfind(",1,");  // crude but stable: q's are all 1
    (void)c1;
    std::vector<double> qs;
    std::size_t field = 0, start = 0;
    for (std::size_t k = 0; k <= line.size(); ++k) {
      if (k == line.size() || line[k] == ',') {
        if (field >= 2) qs.push_back(std::stod(line.substr(start, k - start)));
        ++field;
        start = k + 1;
      }
    }
    REQUIRE(qs.size() == 3);
    CHECK(qs[0] == 1.0);
    CHECK(qs[1] == 1.0);
    CHECK(qs[2] == 1.0);
    CHECK(qs[0] <= qs[1]);
    CHECK(qs[1] <= qs[2]);
    pos = end + 1;
    ++lines;
  }
  CHECK(lines == 4);
}

TEST_CASE("parallel and serial eval agree", "[eval]") {
  nmfg::Rng rng(11);
  std::vector<DenseMatrix> matrices;
  std::vector<std::string> ids;
  for (int i = 0; i < 6; ++i) {
    matrices.push_back(rng.uniform_matrix(6, 6, 0.0, 2.0));
    ids.push_back("m" + std::to_string(i));
  }
  nmfg::EvalOptions serial;
  serial.baseline = true;
  serial.rank = 2;
  serial.iters = 2;
  serial.threads = 1;
  nmfg::EvalOptions parallel = serial;
  parallel.threads = 4;
  const auto a = nmfg::run_eval(ids, matrices, serial);
  const auto b = nmfg::run_eval(ids, matrices, parallel);
  CHECK(nmfg::rmse_curves_csv(a) == nmfg::rmse_curves_csv(b));
}

TEST_CASE("svg chart is well formed", "[eval]") {
  const std::string svg = nmfg::line_chart_svg(
      "test", "value", {{"a", {1.0, 0.5, 0.25}}, {"b", {0.9, 0.8, 0.7}}});
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("</svg>") != std::string::npos);
  CHECK(svg.find("polyline") != std::string::npos);
  CHECK(svg.find("lexend") == std::string::npos);  // sanity: no garbage tokens
}
