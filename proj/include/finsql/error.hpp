#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace finsql {

// Base of every error raised by the library. Callers that only need a
// message can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// sql-core
// ---------------------------------------------------------------------------

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t offset, std::string expected, std::string found)
      : Error("syntax error at offset " + std::to_string(offset) + ": expected " + expected +
              ", found " + (found.empty() ? std::string("end of input") : "'" + found + "'")),
        offset_(offset),
        expected_(std::move(expected)),
        found_(std::move(found)) {}

  std::size_t offset() const noexcept { return offset_; }
  const std::string& expected() const noexcept { return expected_; }
  const std::string& found() const noexcept { return found_; }

 private:
  std::size_t offset_;
  std::string expected_;
  std::string found_;
};

class UnsupportedConstruct : public Error {
 public:
  using Error::Error;
};

class UnresolvedAlias : public Error {
 public:
  explicit UnresolvedAlias(const std::string& alias)
      : Error("unresolved alias '" + alias + "'"), alias_(alias) {}
  const std::string& alias() const noexcept { return alias_; }

 private:
  std::string alias_;
};

// ---------------------------------------------------------------------------
// schema / linking
// ---------------------------------------------------------------------------

class SchemaError : public Error {
 public:
  using Error::Error;
};

class EmptySchema : public Error {
 public:
  EmptySchema() : Error("schema has no columns") {}
};

class ScorerFailure : public Error {
 public:
  using Error::Error;
};

class EmptyEvaluationSet : public Error {
 public:
  EmptyEvaluationSet() : Error("evaluation set is empty") {}
};

// ---------------------------------------------------------------------------
// calibration
// ---------------------------------------------------------------------------

class AllCandidatesRejected : public Error {
 public:
  AllCandidatesRejected() : Error("every candidate was rejected") {}
};

// ---------------------------------------------------------------------------
// lora-hub
// ---------------------------------------------------------------------------

class LoraError : public Error {
 public:
  using Error::Error;
};
class ChecksumMismatch : public LoraError {
 public:
  using LoraError::LoraError;
};
class ShapeViolation : public LoraError {
 public:
  using LoraError::LoraError;
};
class UnknownPlugin : public LoraError {
 public:
  explicit UnknownPlugin(const std::string& id) : LoraError("unknown plugin '" + id + "'") {}
};
class ShapeMismatch : public LoraError {
 public:
  using LoraError::LoraError;
};
class BaseModelMismatch : public LoraError {
 public:
  using LoraError::LoraError;
};
class RankMismatch : public LoraError {
 public:
  using LoraError::LoraError;
};
class DimensionMismatch : public LoraError {
 public:
  using LoraError::LoraError;
};

// ---------------------------------------------------------------------------
// llm-client
// ---------------------------------------------------------------------------

class LlmError : public Error {
 public:
  using Error::Error;
};
class AuthError : public LlmError {
 public:
  using LlmError::LlmError;
};
class RateLimited : public LlmError {
 public:
  using LlmError::LlmError;
};
class Timeout : public LlmError {
 public:
  using LlmError::LlmError;
};
class TransportError : public LlmError {
 public:
  using LlmError::LlmError;
};
class MalformedResponse : public LlmError {
 public:
  using LlmError::LlmError;
};

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

class MissingField : public Error {
 public:
  explicit MissingField(const std::string& field) : Error("missing field: " + field) {}
};
class ExtractionError : public Error {
 public:
  using Error::Error;
};
class EmptyGeneration : public Error {
 public:
  EmptyGeneration() : Error("generation produced no usable lines") {}
};
class GenerationError : public Error {
 public:
  using Error::Error;
};
class ExecutionError : public Error {
 public:
  using Error::Error;
};

}  // namespace finsql
