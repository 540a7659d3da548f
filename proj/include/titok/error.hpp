#pragma once

#include <stdexcept>
#include <string>

namespace titok {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible operand shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (sizes, divisibility, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-range input data (ids, labels, files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered; the message names the producing operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an API contract, e.g. updating a frozen tensor.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Persisted file could not be parsed.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace titok
