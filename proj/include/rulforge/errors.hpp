#pragma once

#include <stdexcept>
#include <string>

namespace rulforge {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimension / shape mismatches.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values (bad kernel size, unknown option, ...).
// The CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated operation preconditions (empty batch, non-scalar loss, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or degenerate input data (parse failures, constant series, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// API used out of order (transform before fit, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

}  // namespace rulforge
