// nmfgraph: data generation, training, solving and evaluation for
// graph-attention accelerated nonnegative matrix factorization.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
// failure.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nmfg/admm.hpp"
#include "nmfg/checkpoint.hpp"
#include "nmfg/data.hpp"
#include "nmfg/eval.hpp"
#include "nmfg/gradcheck.hpp"
#include "nmfg/models.hpp"
#include "nmfg/serialize.hpp"
#include "nmfg/training.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

nmfg::SyntheticBlock parse_block(const std::string& text) {
  nmfg::SyntheticBlock b;
  int fields[5];
  std::size_t start = 0;
  for (int k = 0; k < 5; ++k) {
    const std::size_t comma = text.find(',', start);
    const std::string tok = text.substr(
        start, comma == std::string::npos ? std::string::npos : comma - start);
    try {
      fields[k] = std::stoi(tok);
    } catch (const std::exception&) {
      throw std::invalid_argument("bad --block field '" + tok + "' in '" + text +
                                  "' (want count,rmin,rmax,cmin,cmax)");
    }
    if (comma == std::string::npos && k < 4) {
      throw std::invalid_argument("--block needs 5 fields: count,rmin,rmax,cmin,cmax");
    }
    start = comma + 1;
  }
  b.count = fields[0];
  b.row_lo = fields[1];
  b.row_hi = fields[2];
  b.col_lo = fields[3];
  b.col_hi = fields[4];
  return b;
}

nmfg::DenseMatrix load_input_matrix(const std::string& path) {
  if (fs::path(path).extension() == ".csv") {
    // external data is brought onto the mean-1 scale the solver expects
    return nmfg::normalize_mean_one(nmfg::load_csv_matrix(path));
  }
  return nmfg::load_matrix(path);
}

void apply_train_config_json(const std::string& path, nmfg::TrainConfig& tcfg,
                             nmfg::ModelConfig& mcfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(nmfg::detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw nmfg::FormatError(path + ": " + e.what());
  }
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") tcfg.epochs = value.get<int>();
      else if (key == "lr0") tcfg.lr0 = value.get<double>();
      else if (key == "epoch_decay") tcfg.epoch_decay = value.get<double>();
      else if (key == "gamma") { tcfg.gamma = value.get<double>(); mcfg.gamma = tcfg.gamma; }
      else if (key == "weight_decay") tcfg.weight_decay = value.get<double>();
      else if (key == "seed") tcfg.seed = value.get<std::uint64_t>();
      else if (key == "curriculum_period") tcfg.curriculum_period = value.get<int>();
      else if (key == "max_acc_steps") tcfg.max_acc_steps = value.get<int>();
      else if (key == "grad_clip") tcfg.grad_clip = value.get<double>();
      else if (key == "rank") mcfg.rank = value.get<int>();
      else if (key == "hidden") mcfg.hidden = value.get<int>();
      else if (key == "n_heads") mcfg.n_heads = value.get<int>();
      else if (key == "n_rounds") mcfg.n_rounds = value.get<int>();
      else if (key == "outer_iters") mcfg.outer_iters = value.get<int>();
      else if (key == "inner_iters") mcfg.inner_iters = value.get<int>();
      else if (key == "rho") mcfg.rho = value.get<double>();
      else if (key == "d_ff") mcfg.d_ff = value.get<int>();
      else if (key == "paper_scale") mcfg.paper_scale = value.get<bool>();
      else if (key == "detach_solver") mcfg.detach_solver = value.get<bool>();
      else throw nmfg::FormatError(path + ": unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw nmfg::FormatError(path + ": " + e.what());
  }
}

struct GenArgs {
  std::string out_dir;
  std::vector<std::string> blocks;
  int rank = 0;
  double sigma = 0.01;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  bool stats = false;
};

int cmd_gen(const GenArgs& a) {
  nmfg::SyntheticSpec spec;
  try {
    for (const auto& b : a.blocks) spec.blocks.push_back(parse_block(b));
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  spec.rank = a.rank;
  spec.sigma = a.sigma;
  spec.lambda = a.lambda;
  spec.seed = a.seed;
  const nmfg::GenResult res = nmfg::gen_synthetic(spec, a.out_dir);
  std::cout << "wrote " << res.files.size() << " matrices to " << a.out_dir << "\n";
  if (a.stats) {
    const auto matrices = nmfg::load_dataset(a.out_dir);
    const nmfg::DatasetStats s = nmfg::dataset_stats(matrices);
    nmfg::write_histogram_csv((fs::path(a.out_dir) / "histogram.csv").string(), s);
    std::cout << "entries " << s.entries << " mean " << nmfg::format_double(s.mean)
              << " variance " << nmfg::format_double(s.variance) << "\n";
  }
  return kExitOk;
}

struct TrainArgs {
  std::string kind;
  std::string data_dir;
  std::string val_dir;
  std::string config_path;
  std::string out_path;
  std::string log_path;
  bool paper_scale = false;
  bool detach_solver = false;
};

int cmd_train(const TrainArgs& a) {
  const nmfg::ModelKind kind =
      a.kind == "accel" ? nmfg::ModelKind::kAccel : nmfg::ModelKind::kInit;
  nmfg::TrainConfig tcfg = nmfg::TrainConfig::defaults(kind);
  nmfg::ModelConfig mcfg;

  // dataset rank is the default model rank when the manifest has one
  if (fs::exists(fs::path(a.data_dir) / "manifest.json")) {
    mcfg.rank = nmfg::load_manifest(a.data_dir).rank;
  }
  if (!a.config_path.empty()) apply_train_config_json(a.config_path, tcfg, mcfg);
  if (a.paper_scale) mcfg.paper_scale = true;
  if (a.detach_solver) mcfg.detach_solver = true;
  mcfg.validate();
  tcfg.validate();

  std::vector<std::string> ids;
  const auto matrices = nmfg::load_dataset(a.data_dir, &ids);
  std::cout << "training on " << matrices.size() << " matrices, rank "
            << mcfg.rank << "\n";
  const auto items = nmfg::prepare_items(matrices, mcfg.rank, &ids);

  std::vector<nmfg::TrainItem> val_items;
  if (!a.val_dir.empty()) {
    std::vector<std::string> val_ids;
    const auto val_matrices = nmfg::load_dataset(a.val_dir, &val_ids);
    val_items = nmfg::prepare_items(val_matrices, mcfg.rank, &val_ids);
  }

  nmfg::Rng init_rng(tcfg.seed);
  nmfg::NFactormerParams params =
      nmfg::make_nfactormer_params(mcfg, kind, init_rng);

  const auto epoch_ckpt = [&](int epoch, const nmfg::NFactormerParams& p) {
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), ".epoch%03d", epoch);
    nmfg::save_checkpoint(a.out_path + suffix, p, mcfg, kind);
  };
  const nmfg::TrainResult result = nmfg::train(
      items, val_items.empty() ? nullptr : &val_items, std::move(params), mcfg,
      tcfg, epoch_ckpt);

  nmfg::save_checkpoint(a.out_path, result.params, mcfg, kind);

  std::string log = "epoch,step,lr,loss,nbr_acc\n";
  for (const auto& row : result.log) {
    log += std::to_string(row.epoch) + "," + std::to_string(row.step) + "," +
           nmfg::format_double(row.lr) + "," + nmfg::format_double(row.loss) +
           "," + std::to_string(row.nbr_acc) + "\n";
  }
  const std::string log_path =
      a.log_path.empty() ? a.out_path + ".log.csv" : a.log_path;
  nmfg::detail::write_file(log_path, log);

  std::string epochs = "epoch,mean_train_loss,val_rmse\n";
  for (const auto& e : result.epochs) {
    epochs += std::to_string(e.epoch) + "," +
              nmfg::format_double(e.mean_train_loss) + "," +
              nmfg::format_double(e.val_rmse) + "\n";
  }
  nmfg::detail::write_file(log_path + ".epochs.csv", epochs);

  std::cout << "final mean training loss "
            << nmfg::format_double(result.epochs.back().mean_train_loss)
            << ", checkpoint " << a.out_path << "\n";
  return kExitOk;
}

struct RunArgs {
  std::string matrix_path;
  int rank = 0;
  std::string method;
  std::string model_path;
  int iters = 5;
  int inner = 5;
  double rho = 1.0;
  int nbr_acc = 5;
  std::string csv_path;
  std::string out_w, out_h;
};

int cmd_run(const RunArgs& a) {
  if ((a.method == "init" || a.method == "accel") && a.model_path.empty()) {
    std::cerr << "error: --method " << a.method << " requires --model\n";
    return kExitUsage;
  }
  if (a.method == "baseline" && a.rank <= 0) {
    std::cerr << "error: --method baseline requires --rank\n";
    return kExitUsage;
  }

  const nmfg::DenseMatrix v = load_input_matrix(a.matrix_path);
  std::optional<nmfg::Checkpoint> ckpt;
  int rank = a.rank;
  if (!a.model_path.empty()) {
    ckpt = nmfg::load_checkpoint(a.model_path);
    rank = ckpt->config.rank;
    if (a.rank > 0 && a.rank != rank) {
      throw nmfg::FormatError("checkpoint rank " + std::to_string(rank) +
                              " disagrees with --rank " + std::to_string(a.rank));
    }
  }

  const auto [w0, h0] = nmfg::nndsvd_init(v, rank);
  nmfg::Trajectory traj;
  if (a.method == "baseline") {
    traj = nmfg::ao_admm(v, w0, h0, nmfg::SolverConfig{a.rho, a.inner, a.iters});
  } else {
    nmfg::ModelConfig cfg = ckpt->config;
    cfg.outer_iters = a.iters;
    cfg.inner_iters = a.inner;
    cfg.rho = a.rho;
    if (a.method == "init") {
      if (ckpt->kind != nmfg::ModelKind::kInit) {
        throw nmfg::FormatError(a.model_path + ": not an init-model checkpoint");
      }
      traj = nmfg::learned_init(w0, h0, v, ckpt->params, cfg);
    } else {
      if (ckpt->kind != nmfg::ModelKind::kAccel) {
        throw nmfg::FormatError(a.model_path + ": not an accel-model checkpoint");
      }
      traj = nmfg::learned_accel(w0, h0, v, ckpt->params, cfg,
                                 std::min(a.nbr_acc, a.iters));
    }
  }

  std::string csv = "iteration,rmse,seconds\n";
  for (std::size_t t = 0; t < traj.points.size(); ++t) {
    csv += std::to_string(t) + "," + nmfg::format_double(traj.points[t].rmse) +
           "," + nmfg::format_double(traj.points[t].seconds) + "\n";
  }
  nmfg::detail::write_file(a.csv_path, csv);
  if (!a.out_w.empty()) nmfg::save_matrix(a.out_w, traj.back().w);
  if (!a.out_h.empty()) nmfg::save_matrix(a.out_h, traj.back().h);
  std::cout << "final rmse " << nmfg::format_double(traj.back().rmse) << " after "
            << traj.iterations() << " iterations\n";
  return kExitOk;
}

struct EvalArgs {
  std::string data_dir;
  bool baseline = false;
  std::string init_path;
  std::string accel_path;
  int iters = 5;
  int inner = 5;
  double rho = 1.0;
  int rank = 0;
  int nbr_acc = 5;
  int threads = 0;
  std::string out_dir;
};

int cmd_eval(const EvalArgs& a) {
  if (!a.baseline && a.init_path.empty() && a.accel_path.empty()) {
    std::cerr << "error: select at least one of --baseline/--init/--accel\n";
    return kExitUsage;
  }
  std::optional<nmfg::Checkpoint> init_ckpt, accel_ckpt;
  if (!a.init_path.empty()) init_ckpt = nmfg::load_checkpoint(a.init_path);
  if (!a.accel_path.empty()) accel_ckpt = nmfg::load_checkpoint(a.accel_path);

  int rank = a.rank;
  for (const auto& c : {init_ckpt, accel_ckpt}) {
    if (c) {
      if (rank > 0 && c->config.rank != rank) {
        throw nmfg::FormatError("checkpoint ranks disagree");
      }
      rank = c->config.rank;
    }
  }
  if (rank <= 0) {
    std::cerr << "error: --rank is required without a model checkpoint\n";
    return kExitUsage;
  }

  std::vector<std::string> ids;
  const auto matrices = nmfg::load_dataset(a.data_dir, &ids);

  nmfg::EvalOptions opts;
  opts.iters = a.iters;
  opts.inner = a.inner;
  opts.rho = a.rho;
  opts.rank = rank;
  opts.baseline = a.baseline;
  opts.init = init_ckpt ? &*init_ckpt : nullptr;
  opts.accel = accel_ckpt ? &*accel_ckpt : nullptr;
  opts.nbr_acc = a.nbr_acc;
  opts.threads = a.threads;

  const nmfg::EvalReport report = nmfg::run_eval(ids, matrices, opts);
  nmfg::write_eval_outputs(report, a.out_dir);
  std::cout << "evaluated " << matrices.size() << " matrices, reports in "
            << a.out_dir << "\n";
  return kExitOk;
}

struct GradCheckArgs {
  std::uint64_t seed = 0;
  double tol = 1e-5;
};

int cmd_grad_check(const GradCheckArgs& a) {
  // the unrolled-model component runs at 10x tol (ReLU kinks in the solver)
  const auto results = nmfg::run_gradcheck_suite(a.seed, a.tol);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << (r.pass ? "[PASS] " : "[FAIL] ") << r.component
              << " max_rel_err " << nmfg::format_double(r.max_rel_err)
              << " tol " << nmfg::format_double(r.tol) << "\n";
    all_pass = all_pass && r.pass;
  }
  return all_pass ? kExitOk : kExitNumerical;
}

struct ExportBasisArgs {
  std::string factors_path;
  std::string image_shape;
  std::string out_dir;
};

int cmd_export_basis(const ExportBasisArgs& a) {
  const std::size_t x = a.image_shape.find('x');
  if (x == std::string::npos) {
    std::cerr << "error: --image-shape must look like 64x64\n";
    return kExitUsage;
  }
  int img_h = 0, img_w = 0;
  try {
    img_h = std::stoi(a.image_shape.substr(0, x));
    img_w = std::stoi(a.image_shape.substr(x + 1));
  } catch (const std::exception&) {
    std::cerr << "error: --image-shape must look like 64x64\n";
    return kExitUsage;
  }
  const nmfg::DenseMatrix w = nmfg::load_matrix(a.factors_path);
  if (img_h <= 0 || img_w <= 0 || img_h * img_w != w.rows()) {
    throw nmfg::FormatError("image shape " + a.image_shape + " has " +
                            std::to_string(img_h * img_w) +
                            " pixels but basis columns have " +
                            std::to_string(w.rows()));
  }
  fs::create_directories(a.out_dir);
  for (int c = 0; c < w.cols(); ++c) {
    double lo = w(0, c), hi = w(0, c);
    for (int i = 0; i < w.rows(); ++i) {
      lo = std::min(lo, w(i, c));
      hi = std::max(hi, w(i, c));
    }
    nmfg::DenseMatrix img(img_h, img_w);
    const double span = hi - lo;
    for (int i = 0; i < w.rows(); ++i) {
      // a constant column degenerates to an all-zero image
      img.values()[static_cast<std::size_t>(i)] =
          span > 0.0 ? 255.0 * (w(i, c) - lo) / span : 0.0;
    }
    char name[32];
    std::snprintf(name, sizeof(name), "basis_%02d.pgm", c);
    nmfg::write_pgm((fs::path(a.out_dir) / name).string(), img);
  }
  std::cout << "wrote " << w.cols() << " basis images to " << a.out_dir << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-attention accelerated nonnegative matrix factorization"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_option("--block", gen.blocks,
                      "count,rmin,rmax,cmin,cmax (repeatable)")->required();
  gen_cmd->add_option("--rank", gen.rank, "factor rank")->required();
  gen_cmd->add_option("--sigma", gen.sigma, "noise std dev (default 0.01)");
  gen_cmd->add_option("--lambda", gen.lambda,
                      "exponential mean (default 1/sqrt(rank))");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_flag("--stats", gen.stats, "also write histogram.csv");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train an acceleration model");
  train_cmd->add_option("--kind", train.kind, "init|accel")
      ->required()
      ->check(CLI::IsMember({"init", "accel"}));
  train_cmd->add_option("--data", train.data_dir, "training dataset dir")->required();
  train_cmd->add_option("--val", train.val_dir, "validation dataset dir");
  train_cmd->add_option("--config", train.config_path, "JSON config overrides");
  train_cmd->add_option("--out", train.out_path, "checkpoint output path")->required();
  train_cmd->add_option("--log", train.log_path, "training log CSV path");
  train_cmd->add_flag("--paper-scale", train.paper_scale,
                      "scale attention by sqrt(d) instead of sqrt(d_h)");
  train_cmd->add_flag("--detach-solver", train.detach_solver,
                      "treat solver outputs as constants in backward");

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "Factorize one matrix");
  run_cmd->add_option("--matrix", run.matrix_path, ".fmat or .csv input")->required();
  run_cmd->add_option("--rank", run.rank, "factor rank (baseline)");
  run_cmd->add_option("--method", run.method, "baseline|init|accel")
      ->required()
      ->check(CLI::IsMember({"baseline", "init", "accel"}));
  run_cmd->add_option("--model", run.model_path, "checkpoint for init/accel");
  run_cmd->add_option("--iters", run.iters, "outer iterations T (default 5)");
  run_cmd->add_option("--inner", run.inner, "ADMM iterations per call (default 5)");
  run_cmd->add_option("--rho", run.rho, "ADMM penalty (default 1.0)");
  run_cmd->add_option("--nbr-acc", run.nbr_acc, "acceleration steps (accel)");
  run_cmd->add_option("--csv", run.csv_path, "per-iteration RMSE CSV")->required();
  run_cmd->add_option("--out-w", run.out_w, "save final W as FMAT1");
  run_cmd->add_option("--out-h", run.out_h, "save final H as FMAT1");

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Convergence comparison report");
  eval_cmd->add_option("--data", eval.data_dir, "dataset dir")->required();
  eval_cmd->add_flag("--baseline", eval.baseline, "include the AO-ADMM baseline");
  eval_cmd->add_option("--init", eval.init_path, "learned-init checkpoint");
  eval_cmd->add_option("--accel", eval.accel_path, "learned-accel checkpoint");
  eval_cmd->add_option("--iters", eval.iters, "outer iterations (default 5)");
  eval_cmd->add_option("--inner", eval.inner, "ADMM iterations per call");
  eval_cmd->add_option("--rho", eval.rho, "ADMM penalty");
  eval_cmd->add_option("--rank", eval.rank, "rank (baseline-only eval)");
  eval_cmd->add_option("--nbr-acc", eval.nbr_acc, "acceleration steps (accel)");
  eval_cmd->add_option("--threads", eval.threads, "worker threads (0 = auto)");
  eval_cmd->add_option("--out", eval.out_dir, "report output dir")->required();

  GradCheckArgs grad;
  CLI::App* grad_cmd =
      app.add_subcommand("grad-check", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", grad.seed, "suite seed");
  grad_cmd->add_option("--tol", grad.tol,
                       "max relative error (default 1e-5; unrolled model 10x)");

  ExportBasisArgs basis;
  CLI::App* basis_cmd =
      app.add_subcommand("export-basis", "Write basis columns as PGM images");
  basis_cmd->add_option("--factors", basis.factors_path, "W factor FMAT1")->required();
  basis_cmd->add_option("--image-shape", basis.image_shape, "HxW")->required();
  basis_cmd->add_option("--out", basis.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(gen);
    if (train_cmd->parsed()) return cmd_train(train);
    if (run_cmd->parsed()) return cmd_run(run);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (grad_cmd->parsed()) return cmd_grad_check(grad);
    if (basis_cmd->parsed()) return cmd_export_basis(basis);
  } catch (const nmfg::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const nmfg::FormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
