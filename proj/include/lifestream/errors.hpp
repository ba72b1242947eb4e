#pragma once

#include <stdexcept>
#include <string>

namespace lifestream {

// Three families map onto the CLI exit codes: validation (1), I/O (2),
// numeric failure (3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

struct ConfigError : ValidationError {
  using ValidationError::ValidationError;
};
struct SchemaError : ValidationError {
  using ValidationError::ValidationError;
};
// A malformed data row. The message carries the 1-based row number.
struct RowError : ValidationError {
  RowError(std::size_t row, const std::string& what)
      : ValidationError("row " + std::to_string(row) + ": " + what), row(row) {}
  std::size_t row;
};
struct DatasetError : ValidationError {
  using ValidationError::ValidationError;
};
struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};
struct BoundsError : ValidationError {
  using ValidationError::ValidationError;
};
// An API precondition on call shape was violated (e.g. backward on a
// non-scalar).
struct ContractError : ValidationError {
  using ValidationError::ValidationError;
};
struct BatchError : ValidationError {
  using ValidationError::ValidationError;
};
struct LossError : ValidationError {
  using ValidationError::ValidationError;
};
struct ProbeError : ValidationError {
  using ValidationError::ValidationError;
};
struct ProjectionError : ValidationError {
  using ValidationError::ValidationError;
};
struct InputError : ValidationError {
  using ValidationError::ValidationError;
};
struct SelectionError : ValidationError {
  using ValidationError::ValidationError;
};
struct CompatibilityError : ValidationError {
  using ValidationError::ValidationError;
};
struct CheckpointError : ValidationError {
  using ValidationError::ValidationError;
};
// Random generation exhausted its retry budget.
struct GenerationError : NumericError {
  using NumericError::NumericError;
};

}  // namespace lifestream
