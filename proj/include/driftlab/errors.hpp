#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Invalid argument, dimension mismatch or violated precondition.
class ArgumentError : public Error {
  public:
    using Error::Error;
};

/// Eigen-solver failure or a matrix that is not PSD where it must be.
class NumericError : public Error {
  public:
    using Error::Error;
};

class SingularityError : public NumericError {
  public:
    using NumericError::NumericError;
};

class ConvergenceError : public NumericError {
  public:
    using NumericError::NumericError;
};

/// Riccati integration left the PSD cone; retry with a smaller dt_ode.
class IntegratorError : public NumericError {
  public:
    using NumericError::NumericError;
};

class ConfigError : public Error {
  public:
    using Error::Error;
};

class IoError : public Error {
  public:
    using Error::Error;
};

}  // namespace driftlab
