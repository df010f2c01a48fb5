#pragma once

#include <stdexcept>
#include <string>

namespace fbr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid generator parameters or grid dimensions.
struct ParamError : Error {
  using Error::Error;
};

// Tensor or layer shapes do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed or truncated file contents.
struct FormatError : Error {
  using Error::Error;
};

// Bad labels or unusable statistics.
struct DataError : Error {
  using Error::Error;
};

// Filter became all-zero during normalization.
struct DegenerateFilterError : Error {
  using Error::Error;
};

// A match assignment no longer reflects the current weights.
struct StaleAssignmentError : Error {
  using Error::Error;
};

// NaN or Inf surfaced where finite values are required.
struct NumericError : Error {
  explicit NumericError(const std::string& what, long iteration = -1)
      : Error(what), iteration(iteration) {}
  long iteration;
};

}  // namespace fbr
