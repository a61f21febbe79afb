#pragma once

#include <stdexcept>
#include <string>

namespace bgrto {

/// Base for every error raised by the library. `kind()` is the short
/// machine-readable tag the CLI puts in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define BGRTO_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  }

/// Shape mismatch inside a tensor primitive.
BGRTO_DEFINE_ERROR(StructuralError, "structural");
/// log of a non-positive value, overflowing exp, division by zero.
BGRTO_DEFINE_ERROR(DomainError, "domain");
/// Operation invoked on an object in the wrong lifecycle state.
BGRTO_DEFINE_ERROR(StateError, "state");
/// Caller violated a documented precondition.
BGRTO_DEFINE_ERROR(UsageError, "usage");
BGRTO_DEFINE_ERROR(ConfigError, "config");
/// Malformed, truncated, or mismatched persisted artifact.
BGRTO_DEFINE_ERROR(FormatError, "format");
BGRTO_DEFINE_ERROR(IoError, "io");
/// A command needs an artifact produced by another command.
BGRTO_DEFINE_ERROR(PrerequisiteError, "prerequisite");
BGRTO_DEFINE_ERROR(TrainingError, "training");

#undef BGRTO_DEFINE_ERROR

}  // namespace bgrto
