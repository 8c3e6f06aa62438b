#pragma once

#include <stdexcept>
#include <string>

namespace nmfg {

// Malformed or corrupt external data (files, CSV, checkpoints).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: divergence, non-finite values, factorization breakdown.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nmfg
