#pragma once

#include <stdexcept>
#include <string>

namespace repairlab {

// Base for every error the library raises. Callers that only care about
// "something in repairlab failed" catch this; the subclasses carry the kind.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define REPAIRLAB_DEFINE_ERROR(Name) \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  }

REPAIRLAB_DEFINE_ERROR(ParseError);
REPAIRLAB_DEFINE_ERROR(ValidationError);
REPAIRLAB_DEFINE_ERROR(InputError);
REPAIRLAB_DEFINE_ERROR(NumericError);
REPAIRLAB_DEFINE_ERROR(ConfigError);
REPAIRLAB_DEFINE_ERROR(StateError);
REPAIRLAB_DEFINE_ERROR(TrainingError);
REPAIRLAB_DEFINE_ERROR(OrderingError);

// teacher
REPAIRLAB_DEFINE_ERROR(TransportError);
REPAIRLAB_DEFINE_ERROR(ExtractionError);
REPAIRLAB_DEFINE_ERROR(JudgmentParseError);

// verifier
REPAIRLAB_DEFINE_ERROR(SandboxError);
REPAIRLAB_DEFINE_ERROR(PatchApplyError);

#undef REPAIRLAB_DEFINE_ERROR

class CacheMissError : public Error {
 public:
  explicit CacheMissError(std::string digest)
      : Error("replay cache miss for request digest " + digest), digest_(std::move(digest)) {}
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::string digest_;
};

class LineParseError : public ParseError {
 public:
  LineParseError(std::size_t line, const std::string& what)
      : ParseError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace repairlab
