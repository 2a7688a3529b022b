#pragma once
#include <stdexcept>
#include <string>

namespace cmm {

// Invalid configuration or an input that violates a documented precondition.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed external data (CSV rows, map files, scenario documents).
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: solver non-convergence, covariance repair beyond tolerance.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cmm
