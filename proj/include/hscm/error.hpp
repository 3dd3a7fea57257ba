#pragma once

#include <stdexcept>
#include <string>

namespace hscm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller violated a documented precondition (bad arguments, mismatched sizes).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A graph invariant would be broken (cycle, level violation, duplicate edge).
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// The additive regression could not be fitted (rank-deficient design, ...).
class FitError : public Error {
 public:
  using Error::Error;
};

/// Hierarchical estimation failed for a data-dependent reason.
class EstimationError : public Error {
 public:
  using Error::Error;
};

/// Invalid simulation or benchmark configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message carries the file name and line number.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace hscm
