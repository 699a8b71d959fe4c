#pragma once

#include <stdexcept>
#include <string>

namespace cstm {

// Shape and precondition violations are reported as std::invalid_argument.
// The types below map onto the CLI exit codes.

/// Bad configuration value or key (exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File system failure (exit code 2).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a diverging solver (exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed or incompatible file contents (exit code 4).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace cstm
