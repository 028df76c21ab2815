#pragma once

#include <stdexcept>
#include <string>

namespace fbsde {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses below onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or violated preconditions (bad grid, p <= 1, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or incomplete configuration documents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failures: Picard divergence, non-finite states, failed
/// certificates.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class PicardDivergence : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class NonFiniteState : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// A coefficient map returned a non-finite value on a finite input.
class CoefficientEvaluationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fbsde
