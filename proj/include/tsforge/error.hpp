#pragma once

#include <stdexcept>
#include <string>

namespace tsforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not conform for the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Operand outside the mathematical domain of an op (log of <= 0, division by zero, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid pipeline configuration or model specification.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, splits, windows).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A training run diverged (non-finite loss or gradients).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsforge
