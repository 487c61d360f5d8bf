#pragma once

#include <stdexcept>
#include <string>

namespace despeckle {

// Base for every error the library raises. The CLI maps families onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or spatial extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (L < 1, negative intensity, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Operation invoked on an object in the wrong lifecycle state.
class StateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input data (rasters, manifests, checkpoints).
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class LengthError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace despeckle
