#pragma once

#include <stdexcept>
#include <string>

namespace pidm {

// Error taxonomy mirrors the CLI exit codes: usage -> 2, data -> 3, numeric -> 4.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent tensor extents, channel mismatches, divisibility violations.
struct ShapeError : DataError {
  using DataError::DataError;
};

// NaN/Inf reached a documented operation or the optimizer.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pidm
