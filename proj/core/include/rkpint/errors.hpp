#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rkpint {

// All failures raised by the library share one base class so that drivers can
// distinguish "our" errors (bad configs, singular operators, stagnating
// iterations) from genuine bugs surfacing as standard exceptions.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mismatched operand shapes (matrix/vector dimensions, block counts).
struct DimensionError : Error {
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (NaN/Inf entries,
/// non-positive step sizes, unsupported stage counts, ...).
struct DomainError : Error {
  using Error::Error;
};

/// Problem size beyond a hard cap (e.g. dense eigensolve dimension).
struct CapacityError : Error {
  using Error::Error;
};

/// An iteration failed to reach its stopping criterion within its budget.
struct ConvergenceError : Error {
  using Error::Error;
};

/// A pivot collapsed during factorization; `index` names the offending pivot.
struct SingularMatrixError : Error {
  std::size_t index;
  SingularMatrixError(const std::string& what, std::size_t idx)
      : Error(what), index(idx) {}
};

/// Config-file rejection; `line` is the 1-based offending line number.
struct ConfigError : Error {
  std::size_t line;
  ConfigError(const std::string& what, std::size_t line_no)
      : Error(what), line(line_no) {}
};

}  // namespace rkpint
