#pragma once

#include <stdexcept>
#include <string>

namespace sepsisrl {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform (treated as a data error at the CLI surface).
struct DimensionError : Error {
  using Error::Error;
};

/// Invalid or inconsistent run configuration.
struct ConfigError : Error {
  using Error::Error;
};

/// Malformed input data (CSV rows, schema mismatches, graph violations).
struct DataError : Error {
  using Error::Error;
};

/// Non-finite values where finite ones are required (divergence, bad grads).
struct NumericError : Error {
  using Error::Error;
};

/// Filesystem-level failures.
struct IoError : Error {
  using Error::Error;
};

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitIo = 5;

}  // namespace sepsisrl
