#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nmfg/admm.hpp"
#include "nmfg/checkpoint.hpp"
#include "nmfg/models.hpp"
#include "nmfg/parallel.hpp"
#include "nmfg/serialize.hpp"

namespace nmfg {

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  const double frac = h - static_cast<double>(lo);
  return v[lo] + frac * (v[lo + 1] - v[lo]);
}

struct EvalOptions {
  int iters = 5;
  int inner = 5;
  double rho = 1.0;
  int rank = 10;
  bool baseline = false;
  const Checkpoint* init = nullptr;
  const Checkpoint* accel = nullptr;
  int nbr_acc = 5;
  int threads = 0;  // 0 = NMF_THREADS or hardware
};

/// Per-method, per-matrix, per-iteration RMSE table. Ratios are always
/// formed pairwise on the same matrix; the quartiles are taken across
/// matrices at each iteration.
struct EvalReport {
  std::vector<std::string> ids;
  std::vector<std::string> methods;
  std::map<std::string, std::vector<std::vector<double>>> rmse;

  bool has(const std::string& method) const { return rmse.count(method) > 0; }
};

inline EvalReport run_eval(const std::vector<std::string>& ids,
                           const std::vector<DenseMatrix>& matrices,
                           const EvalOptions& opts) {
  if (ids.size() != matrices.size() || matrices.empty()) {
    throw std::invalid_argument("run_eval: empty or inconsistent dataset");
  }
  if (!opts.baseline && !opts.init && !opts.accel) {
    throw std::invalid_argument("run_eval: no methods selected");
  }
  for (const Checkpoint* c : {opts.init, opts.accel}) {
    if (c && c->config.rank != opts.rank) {
      throw std::invalid_argument("run_eval: checkpoint rank " +
                                  std::to_string(c->config.rank) +
                                  " does not match evaluation rank " +
                                  std::to_string(opts.rank));
    }
  }

  EvalReport report;
  report.ids = ids;
  if (opts.baseline) report.methods.push_back("baseline");
  if (opts.init) report.methods.push_back("init");
  if (opts.accel) report.methods.push_back("accel");
  const int n = static_cast<int>(matrices.size());
  for (const auto& m : report.methods) {
    report.rmse[m].assign(static_cast<std::size_t>(n), {});
  }

  const auto model_cfg = [&](const Checkpoint& c) {
    ModelConfig cfg = c.config;
    cfg.outer_iters = opts.iters;
    cfg.inner_iters = opts.inner;
    cfg.rho = opts.rho;
    return cfg;
  };

  parallel_for(n, resolve_threads(opts.threads), [&](int i) {
    const DenseMatrix& v = matrices[static_cast<std::size_t>(i)];
    const auto [w0, h0] = nndsvd_init(v, opts.rank);
    if (opts.baseline) {
      SolverConfig cfg{opts.rho, opts.inner, opts.iters};
      report.rmse["baseline"][static_cast<std::size_t>(i)] =
          ao_admm(v, w0, h0, cfg).rmse_series();
    }
    if (opts.init) {
      report.rmse["init"][static_cast<std::size_t>(i)] =
          learned_init(w0, h0, v, opts.init->params, model_cfg(*opts.init))
              .rmse_series();
    }
    if (opts.accel) {
      const ModelConfig cfg = model_cfg(*opts.accel);
      report.rmse["accel"][static_cast<std::size_t>(i)] =
          learned_accel(w0, h0, v, opts.accel->params, cfg,
                        std::min(opts.nbr_acc, cfg.outer_iters))
              .rmse_series();
    }
  });
  return report;
}

inline std::string rmse_curves_csv(const EvalReport& report) {
  std::string out = "method,iteration,mean_rmse\n";
  for (const auto& method : report.methods) {
    const auto& table = report.rmse.at(method);
    const std::size_t iters = table.front().size();
    for (std::size_t t = 0; t < iters; ++t) {
      double acc = 0.0;
      for (const auto& row : table) acc += row[t];
      out += method + "," + std::to_string(t) + "," +
             format_double(acc / static_cast<double>(table.size())) + "\n";
    }
  }
  return out;
}

/// Per-iteration Q1/median/Q3 of the pairwise (same matrix) RMSE ratio of
/// each accelerated method to the baseline. Empty data section when the
/// baseline or every accelerated method is absent.
inline std::string ratio_quartiles_csv(const EvalReport& report) {
  std::string out = "method,iteration,q1,median,q3\n";
  if (!report.has("baseline")) return out;
  const auto& base = report.rmse.at("baseline");
  for (const auto& method : report.methods) {
    if (method == "baseline") continue;
    const auto& table = report.rmse.at(method);
    const std::size_t iters = table.front().size();
    for (std::size_t t = 0; t < iters; ++t) {
      std::vector<double> ratios;
      ratios.reserve(table.size());
      for (std::size_t i = 0; i < table.size(); ++i) {
        ratios.push_back(table[i][t] / base[i][t]);
      }
      out += method + "," + std::to_string(t) + "," +
             format_double(quantile(ratios, 0.25)) + "," +
             format_double(quantile(ratios, 0.5)) + "," +
             format_double(quantile(ratios, 0.75)) + "\n";
    }
  }
  return out;
}

/// Minimal polyline chart; the CSV next to it is the source of truth.
inline std::string line_chart_svg(
    const std::string& title, const std::string& y_label,
    const std::vector<std::pair<std::string, std::vector<double>>>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#9467bd", "#ff7f0e", "#8c564b"};
  const double width = 820, height = 520;
  const double ml = 70, mr = 160, mt = 50, mb = 50;
  const double pw = width - ml - mr, ph = height - mt - mb;

  std::size_t max_len = 0;
  double ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& [name, values] : series) {
    max_len = std::max(max_len, values.size());
    for (double v : values) {
      if (first) {
        ymin = ymax = v;
        first = false;
      } else {
        ymin = std::min(ymin, v);
        ymax = std::max(ymax, v);
      }
    }
  }
  if (max_len < 2) max_len = 2;
  if (ymax - ymin < 1e-12) {
    ymax += 1.0;
    ymin -= 1.0;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const auto x_at = [&](std::size_t i) {
    return ml + pw * static_cast<double>(i) / static_cast<double>(max_len - 1);
  };
  const auto y_at = [&](double v) { return mt + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::string svg =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + format_double(width) +
      "\" height=\"" + format_double(height) + "\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"" + format_double(width / 2) + "\" y=\"28\" text-anchor=\"middle\" "
      "font-family=\"sans-serif\" font-size=\"16\">" + title + "</text>\n";

  // axes
  svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt) +
         "\" x2=\"" + format_double(ml) + "\" y2=\"" + format_double(mt + ph) +
         "\" stroke=\"black\"/>\n";
  svg += "<line x1=\"" + format_double(ml) + "\" y1=\"" + format_double(mt + ph) +
         "\" x2=\"" + format_double(ml + pw) + "\" y2=\"" + format_double(mt + ph) +
         "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double v = ymin + (ymax - ymin) * k / 5.0;
    const double y = y_at(v);
    svg += "<line x1=\"" + format_double(ml - 4) + "\" y1=\"" + format_double(y) +
           "\" x2=\"" + format_double(ml) + "\" y2=\"" + format_double(y) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + format_double(ml - 8) + "\" y=\"" + format_double(y + 4) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
           format_double(std::round(v * 1e4) / 1e4) + "</text>\n";
  }
  const std::size_t x_step = std::max<std::size_t>(1, (max_len - 1) / 10);
  for (std::size_t i = 0; i < max_len; i += x_step) {
    const double x = x_at(i);
    svg += "<line x1=\"" + format_double(x) + "\" y1=\"" + format_double(mt + ph) +
           "\" x2=\"" + format_double(x) + "\" y2=\"" + format_double(mt + ph + 4) +
           "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + format_double(x) + "\" y=\"" + format_double(mt + ph + 18) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
           std::to_string(i) + "</text>\n";
  }
  svg += "<text x=\"" + format_double(ml + pw / 2) + "\" y=\"" +
         format_double(height - 10) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
         "iteration</text>\n";
  svg += "<text x=\"18\" y=\"" + format_double(mt + ph / 2) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
         "transform=\"rotate(-90 18 " + format_double(mt + ph / 2) + ")\">" +
         y_label + "</text>\n";

  int color = 0;
  for (const auto& [name, values] : series) {
    std::string points;
    for (std::size_t i = 0; i < values.size(); ++i) {
      points += format_double(x_at(i)) + "," + format_double(y_at(values[i])) + " ";
    }
    const char* stroke = kColors[color % 6];
    svg += "<polyline fill=\"none\" stroke=\"" + std::string(stroke) +
           "\" stroke-width=\"1.5\" points=\"" + points + "\"/>\n";
    const double ly = mt + 18.0 * color;
    svg += "<line x1=\"" + format_double(ml + pw + 12) + "\" y1=\"" +
           format_double(ly) + "\" x2=\"" + format_double(ml + pw + 34) +
           "\" y2=\"" + format_double(ly) + "\" stroke=\"" + stroke +
           "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + format_double(ml + pw + 40) + "\" y=\"" +
           format_double(ly + 4) +
           "\" font-family=\"sans-serif\" font-size=\"12\">" + name + "</text>\n";
    ++color;
  }
  svg += "</svg>\n";
  return svg;
}

inline void write_eval_outputs(const EvalReport& report, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir));
  detail::write_file((fs::path(out_dir) / "rmse_curves.csv").string(),
                     rmse_curves_csv(report));
  detail::write_file((fs::path(out_dir) / "ratio_quartiles.csv").string(),
                     ratio_quartiles_csv(report));

  std::vector<std::pair<std::string, std::vector<double>>> mean_series;
  for (const auto& method : report.methods) {
    const auto& table = report.rmse.at(method);
    std::vector<double> mean(table.front().size(), 0.0);
    for (const auto& row : table) {
      for (std::size_t t = 0; t < mean.size(); ++t) mean[t] += row[t];
    }
    for (double& v : mean) v /= static_cast<double>(table.size());
    mean_series.emplace_back(method, std::move(mean));
  }
  detail::write_file((fs::path(out_dir) / "rmse_curves.svg").string(),
                     line_chart_svg("Mean reconstruction error", "RMSE", mean_series));

  std::vector<std::pair<std::string, std::vector<double>>> ratio_series;
  if (report.has("baseline")) {
    const auto& base = report.rmse.at("baseline");
    for (const auto& method : report.methods) {
      if (method == "baseline") continue;
      const auto& table = report.rmse.at(method);
      for (const double p : {0.25, 0.5, 0.75}) {
        std::vector<double> q(table.front().size());
        for (std::size_t t = 0; t < q.size(); ++t) {
          std::vector<double> ratios;
          for (std::size_t i = 0; i < table.size(); ++i)
            ratios.push_back(table[i][t] / base[i][t]);
          q[t] = quantile(ratios, p);
        }
        ratio_series.emplace_back(method + (p == 0.25 ? " q1" : p == 0.5 ? " median" : " q3"),
                                  std::move(q));
      }
    }
  }
  detail::write_file(
      (fs::path(out_dir) / "ratio_quartiles.svg").string(),
      line_chart_svg("Pairwise RMSE ratio vs baseline", "ratio", ratio_series));
}

}  // namespace nmfg
