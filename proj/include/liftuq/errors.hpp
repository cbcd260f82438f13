#pragma once

#include <stdexcept>
#include <string>

namespace liftuq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed config, violated preconditions, shape mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File-system or container format problems.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, solver non-convergence, training divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace liftuq
