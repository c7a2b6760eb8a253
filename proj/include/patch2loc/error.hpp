#pragma once

#include <stdexcept>
#include <string>

namespace patch2loc {

/// Base class for every failure raised by the toolkit. Maps to CLI exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "runtime_error"; }
};

/// Caller supplied something that violates a documented contract. Maps to
/// CLI exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation_error"; }
};

class ShapeMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "shape_mismatch"; }
};

class ModalityMismatchError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "modality_mismatch"; }
};

class DegenerateVolumeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
  const char* kind() const noexcept override { return "degenerate_volume"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

class SamplingBudgetError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "sampling_budget_exceeded"; }
};

class DivergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "divergence"; }
};

}  // namespace patch2loc
