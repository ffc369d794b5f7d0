#pragma once

#include <stdexcept>
#include <string>

namespace star {

// Base for every error raised by the library. The CLI maps the concrete
// kinds onto process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration, topology, or hyperparameter.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor dimensions that do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Missing, corrupt, or inconsistent on-disk data.
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint that does not match the model or data it is loaded against.
class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

// Operation invoked with an empty input (T = 0, N = 0, empty gallery).
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

// Malformed graph (e.g. a node without incoming edges).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Batch sampling could not be satisfied.
class SamplingError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or value during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
inline int exit_code(const Error& e) {
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 4;
  if (dynamic_cast<const DataError*>(&e) != nullptr ||
      dynamic_cast<const SamplingError*>(&e) != nullptr ||
      dynamic_cast<const EmptyInputError*>(&e) != nullptr) {
    return 3;
  }
  return 2;
}

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

}  // namespace detail

}  // namespace star
