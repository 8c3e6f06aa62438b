#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nmfg/matrix.hpp"

namespace nmfg {

/// Deterministic random source. All distribution transforms are spelled out
/// here instead of using std:: distributions, whose output is
/// implementation-defined; this keeps generated datasets and training runs
/// reproducible byte-for-byte for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform01() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(eng_() % span);
  }

  /// Exponential with the given mean (inverse CDF).
  double exponential(double mean) {
    return -mean * std::log1p(-uniform01());
  }

  /// Standard normal via Box-Muller; consumes two uniforms per sample.
  double normal(double mu, double sigma) {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mu + sigma * z;
  }

  /// Fisher-Yates shuffle with this engine.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = eng_() % i;
      std::swap(v[i - 1], v[j]);
    }
  }

  DenseMatrix uniform_matrix(int rows, int cols, double lo, double hi) {
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = uniform(lo, hi);
    return m;
  }

  DenseMatrix normal_matrix(int rows, int cols, double mu, double sigma) {
    DenseMatrix m(rows, cols);
    for (double& v : m.values()) v = normal(mu, sigma);
    return m;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace nmfg
