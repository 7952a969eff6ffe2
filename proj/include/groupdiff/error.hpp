#pragma once

#include <stdexcept>
#include <string>

namespace groupdiff {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or sizes that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed, or a numerical precondition violated.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration, argument or file content.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or format failure while reading/writing an artifact.
class IoError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

}  // namespace groupdiff
