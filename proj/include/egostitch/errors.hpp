#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace egostitch {

enum class ErrorKind {
  Format,
  Consistency,
  Validation,
  Config,
  DegenerateInstance,
  DegenerateRow,
  InsufficientOverlap,
  DegenerateGeometry,
  EmptySet,
  Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Format: return "FormatError";
    case ErrorKind::Consistency: return "ConsistencyError";
    case ErrorKind::Validation: return "ValidationError";
    case ErrorKind::Config: return "ConfigError";
    case ErrorKind::DegenerateInstance: return "DegenerateInstanceError";
    case ErrorKind::DegenerateRow: return "DegenerateRowError";
    case ErrorKind::InsufficientOverlap: return "InsufficientOverlapError";
    case ErrorKind::DegenerateGeometry: return "DegenerateGeometryError";
    case ErrorKind::EmptySet: return "EmptySetError";
    case ErrorKind::Io: return "IoError";
  }
  return "Error";
}

/// Base of every error raised by the library. The kind is what callers
/// (and the CLI exit-code mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <ErrorKind K>
class TypedError : public Error {
 public:
  explicit TypedError(const std::string& what) : Error(K, what) {}
};

using FormatError = TypedError<ErrorKind::Format>;
using ConsistencyError = TypedError<ErrorKind::Consistency>;
using ValidationError = TypedError<ErrorKind::Validation>;
using ConfigError = TypedError<ErrorKind::Config>;
using DegenerateInstanceError = TypedError<ErrorKind::DegenerateInstance>;
using DegenerateRowError = TypedError<ErrorKind::DegenerateRow>;
using InsufficientOverlapError = TypedError<ErrorKind::InsufficientOverlap>;
using DegenerateGeometryError = TypedError<ErrorKind::DegenerateGeometry>;
using EmptySetError = TypedError<ErrorKind::EmptySet>;
using IoError = TypedError<ErrorKind::Io>;

}  // namespace egostitch
