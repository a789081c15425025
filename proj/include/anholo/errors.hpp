#pragma once

#include <stdexcept>
#include <string>

namespace anholo {

// Bad input or violated precondition (maps to CLI exit code 2).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numerical breakdown: singular blocks, non-convergence, blow-up (exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SingularMetric : NumericalError {
  using NumericalError::NumericalError;
};

struct NonConvergence : NumericalError {
  using NumericalError::NumericalError;
};

// Checksum mismatch or corrupted artifact (exit code 4).
struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace anholo
