#pragma once

#include <utility>
#include <vector>

#include "nmfg/matrix.hpp"

namespace nmfg {

/// Iterates of a factorization run: (W_t, H_t) for t = 0..T, with the
/// reconstruction RMSE and cumulative wall-clock seconds at each iterate.
/// Every recorded iterate is feasible (elementwise nonnegative).
struct TrajectoryPoint {
  DenseMatrix w;
  DenseMatrix h;
  double rmse = 0.0;
  double seconds = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;

  int iterations() const { return static_cast<int>(points.size()) - 1; }
  const TrajectoryPoint& back() const { return points.back(); }
  std::vector<double> rmse_series() const {
    std::vector<double> r;
    r.reserve(points.size());
    for (const auto& p : points) r.push_back(p.rmse);
    return r;
  }
};

}  // namespace nmfg
