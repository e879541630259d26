#pragma once

#include <stdexcept>
#include <string>

namespace tbigan {

// Bad or inconsistent configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed, missing or unusable input data (CLI exit code 2).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit the operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf or another numerical breakdown (CLI exit code 3).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A metric that is not defined for the given input (e.g. AUC with one class).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace tbigan
