#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "nmfg/matrix.hpp"
#include "nmfg/parallel.hpp"
#include "nmfg/rng.hpp"
#include "nmfg/serialize.hpp"

namespace nmfg {

// Synthetic dataset generation: V = W H^T + noise with W, H entries drawn
// i.i.d. Exponential with mean lambda = 1/sqrt(r), so E[V_ij] = r lambda^2
// = 1 (each of the r product terms contributes lambda^2, the noise is
// zero-mean). Matrix sizes are drawn uniformly per matrix from block ranges.

struct SyntheticBlock {
  int count = 0;
  int row_lo = 0, row_hi = 0;
  int col_lo = 0, col_hi = 0;
};

struct SyntheticSpec {
  std::vector<SyntheticBlock> blocks;
  int rank = 10;
  double lambda = 0.0;  // 0 = default 1/sqrt(rank)
  double sigma = 0.01;
  std::uint64_t seed = 0;

  double lambda_or_default() const {
    return lambda > 0.0 ? lambda : 1.0 / std::sqrt(static_cast<double>(rank));
  }

  void validate() const {
    if (blocks.empty()) throw std::invalid_argument("SyntheticSpec: no blocks");
    for (const auto& b : blocks) {
      if (b.count < 1 || b.row_lo < 1 || b.col_lo < 1 || b.row_lo > b.row_hi ||
          b.col_lo > b.col_hi) {
        throw std::invalid_argument("SyntheticSpec: bad block ranges");
      }
    }
    if (rank < 1) throw std::invalid_argument("SyntheticSpec: rank must be >= 1");
    if (lambda < 0.0 || sigma < 0.0) {
      throw std::invalid_argument("SyntheticSpec: lambda/sigma must be >= 0");
    }
  }
};

/// One synthetic matrix. The generator stream is derived from (seed XOR
/// global index), so matrices are independent of generation order.
inline DenseMatrix synth_matrix(const SyntheticBlock& block, int rank,
                                double lambda, double sigma, std::uint64_t seed,
                                std::uint64_t index) {
  Rng rng(seed ^ index);
  const int m = rng.uniform_int(block.row_lo, block.row_hi);
  const int n = rng.uniform_int(block.col_lo, block.col_hi);
  DenseMatrix w(m, rank), h(n, rank);
  for (double& x : w.values()) x = rng.exponential(lambda);
  for (double& x : h.values()) x = rng.exponential(lambda);
  DenseMatrix v = matmul(w, transpose(h));
  if (sigma > 0.0) {
    for (double& x : v.values()) x += rng.normal(0.0, sigma);
  }
  return v;
}

struct GenResult {
  std::vector<std::string> files;  // relative paths within out_dir
};

/// Writes one FMAT1 file per matrix plus manifest.json. Matrices are
/// generated by a worker pool; per-matrix derived seeds make parallel and
/// serial generation produce identical files regardless of scheduling.
inline GenResult gen_synthetic(const SyntheticSpec& spec,
                               const std::string& out_dir) {
  spec.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  struct Job {
    const SyntheticBlock* block;
    std::uint64_t index;
    std::string name;
  };
  std::vector<Job> jobs;
  std::uint64_t index = 0;
  for (const auto& block : spec.blocks) {
    for (int i = 0; i < block.count; ++i, ++index) {
      char name[32];
      std::snprintf(name, sizeof(name), "matrix_%05llu.fmat",
                    static_cast<unsigned long long>(index));
      jobs.push_back({&block, index, name});
    }
  }
  parallel_for(static_cast<int>(jobs.size()), resolve_threads(0), [&](int j) {
    const Job& job = jobs[static_cast<std::size_t>(j)];
    const DenseMatrix v = synth_matrix(*job.block, spec.rank,
                                       spec.lambda_or_default(), spec.sigma,
                                       spec.seed, job.index);
    save_matrix((fs::path(out_dir) / job.name).string(), v);
  });
  GenResult result;
  for (const auto& job : jobs) result.files.push_back(job.name);

  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["rank"] = spec.rank;
  manifest["seed"] = spec.seed;
  manifest["lambda"] = spec.lambda_or_default();
  manifest["sigma"] = spec.sigma;
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : spec.blocks) {
    blocks.push_back({{"count", b.count},
                      {"row_lo", b.row_lo},
                      {"row_hi", b.row_hi},
                      {"col_lo", b.col_lo},
                      {"col_hi", b.col_hi}});
  }
  manifest["blocks"] = blocks;
  manifest["files"] = result.files;
  detail::write_file((fs::path(out_dir) / "manifest.json").string(),
                     manifest.dump(2) + "\n");
  return result;
}

struct DatasetManifest {
  int version = 0;
  int rank = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> files;
};

/// Parses manifest.json and checks every listed file exists and opens as a
/// matrix header. Throws FormatError on any violation.
inline DatasetManifest load_manifest(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string path = (fs::path(dir) / "manifest.json").string();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.rank = j.at("rank").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.files = j.at("files").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
  for (const auto& f : m.files) {
    const fs::path fp = fs::path(dir) / f;
    if (!fs::exists(fp)) {
      throw FormatError(path + ": listed file missing: " + f);
    }
  }
  return m;
}

/// Loads all matrices of a dataset directory: via manifest.json when present,
/// otherwise every *.fmat in lexicographic order.
inline std::vector<std::string> dataset_file_list(const std::string& dir) {
  namespace fs = std::filesystem;
  if (fs::exists(fs::path(dir) / "manifest.json")) {
    return load_manifest(dir).files;
  }
  std::vector<std::string> files;
  if (!fs::is_directory(dir)) throw FormatError(dir + ": not a directory");
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".fmat") {
      files.push_back(entry.path().filename().string());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError(dir + ": no matrices found");
  return files;
}

inline std::vector<DenseMatrix> load_dataset(const std::string& dir,
                                             std::vector<std::string>* ids = nullptr) {
  namespace fs = std::filesystem;
  std::vector<DenseMatrix> out;
  for (const auto& f : dataset_file_list(dir)) {
    out.push_back(load_matrix((fs::path(dir) / f).string()));
    if (ids) ids->push_back(f);
  }
  return out;
}

/// M / mean(M); requires a strictly positive mean.
inline DenseMatrix normalize_mean_one(const DenseMatrix& m) {
  const double mu = mean_all(m);
  if (!(mu > 0.0)) {
    throw std::invalid_argument("normalize_mean_one: matrix mean " +
                                std::to_string(mu) + " is not positive");
  }
  return scale(m, 1.0 / mu);
}

struct DatasetStats {
  std::size_t matrices = 0;
  std::size_t entries = 0;
  double mean = 0.0;
  double variance = 0.0;
  double max_value = 0.0;
  std::vector<std::size_t> histogram;  // 100 bins over [0, max_value]
  double bin_width = 0.0;
};

/// Global entry statistics plus a fixed 100-bin histogram over [0, max].
/// Negative entries (generator noise) land in bin 0.
inline DatasetStats dataset_stats(const std::vector<DenseMatrix>& matrices) {
  if (matrices.empty()) throw std::invalid_argument("dataset_stats: empty dataset");
  DatasetStats s;
  s.matrices = matrices.size();
  double sum = 0.0, sum_sq = 0.0;
  for (const auto& m : matrices) {
    s.entries += m.size();
    for (double v : m.values()) {
      sum += v;
      sum_sq += v * v;
      s.max_value = std::max(s.max_value, v);
    }
  }
  const double n = static_cast<double>(s.entries);
  s.mean = sum / n;
  s.variance = sum_sq / n - s.mean * s.mean;
  s.histogram.assign(100, 0);
  s.bin_width = s.max_value > 0.0 ? s.max_value / 100.0 : 1.0;
  for (const auto& m : matrices) {
    for (double v : m.values()) {
      int bin = static_cast<int>(v / s.bin_width);
      bin = std::clamp(bin, 0, 99);
      s.histogram[static_cast<std::size_t>(bin)] += 1;
    }
  }
  return s;
}

inline void write_histogram_csv(const std::string& path, const DatasetStats& s) {
  std::string out = "bin,lower,upper,count\n";
  for (std::size_t b = 0; b < s.histogram.size(); ++b) {
    out += std::to_string(b) + "," + format_double(b * s.bin_width) + "," +
           format_double((b + 1) * s.bin_width) + "," +
           std::to_string(s.histogram[b]) + "\n";
  }
  detail::write_file(path, out);
}

}  // namespace nmfg
