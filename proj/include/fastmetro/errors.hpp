// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fastmetro {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (model, mask, loss weights, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input data (files, meshes, matrices).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or a numeric routine that failed to converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Failure inside the optimizer or training loop.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace fastmetro
