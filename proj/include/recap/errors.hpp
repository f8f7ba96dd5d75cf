// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace recap {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument or violated precondition on an in-process API.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed line in a JSONL file. `line()` is 1-based and counts the
/// manifest header as line 1.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class StageMismatch : public Error {
 public:
  using Error::Error;
};

class TokenOutOfRange : public Error {
 public:
  using Error::Error;
};

class EmptyBatch : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  using Error::Error;
};

class NonFiniteScore : public Error {
 public:
  using Error::Error;
};

class NotEnoughEvaluations : public Error {
 public:
  NotEnoughEvaluations() : Error("not enough evaluations") {}
};

class DegeneratePreferenceSet : public Error {
 public:
  DegeneratePreferenceSet() : Error("degenerate preference set") {}
};

class JudgeError : public Error {
 public:
  JudgeError(std::string record_id, const std::string& what)
      : Error("judge failed on record '" + record_id + "': " + what),
        record_id_(std::move(record_id)) {}
  const std::string& record_id() const noexcept { return record_id_; }

 private:
  std::string record_id_;
};

/// Invalid run configuration or command line. Maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Review verdict for an unknown or already decided item.
class ConflictError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage failed; carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& cause)
      : Error("stage '" + stage + "' failed: " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace recap
