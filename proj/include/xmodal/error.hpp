#pragma once

#include <stdexcept>
#include <string>

namespace xmodal {

// Error families. The CLI maps each to a distinct exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or feature dimensions that do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong call order, missing prerequisite, bad argument.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-range input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or another numeric breakdown.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace xmodal
