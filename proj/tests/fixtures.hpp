// Shared worked example: an exact integer rank-2 factorization V = W H^T.
#pragma once

#include "nmfg/matrix.hpp"

namespace fixtures {

inline nmfg::DenseMatrix example_v() {
  return nmfg::DenseMatrix::from_rows(
      {{162, 174, 46}, {24, 20, 2}, {132, 122, 21}, {126, 138, 38}});
}

inline nmfg::DenseMatrix example_w() {
  return nmfg::DenseMatrix::from_rows({{13, 7}, {0, 2}, {4, 9}, {11, 5}});
}

// rows of H (so H^T = [[6,8,3],[12,10,1]])
inline nmfg::DenseMatrix example_h() {
  return nmfg::DenseMatrix::from_rows({{6, 12}, {8, 10}, {3, 1}});
}

}  // namespace fixtures
