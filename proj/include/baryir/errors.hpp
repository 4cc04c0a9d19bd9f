#pragma once

#include <stdexcept>
#include <string>

namespace baryir {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or arity violation; the message reports the offending shapes.
struct DimensionError : Error {
  using Error::Error;
};

// Syntactically valid input that is mathematically unusable in the requested
// mode (zero-norm vector in strict mode, non-PSD covariance, ...).
struct DegenerateInputError : Error {
  using Error::Error;
};

// Malformed input data (non-normalized weights, unknown kinds, bad config).
struct InputError : Error {
  using Error::Error;
};

// API misuse: non-scalar backward target, missing batch context, ...
struct ContractError : Error {
  using Error::Error;
};

// Non-finite values, divergence, or solver non-convergence.
struct NumericalError : Error {
  using Error::Error;
};

}  // namespace baryir
