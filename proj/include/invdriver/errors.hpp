#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace invd {

// Base for every error raised by the library. Carries the CLI exit code class.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller-supplied data or configuration is invalid (exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RankError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateMaskError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class VersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Failures discovered while running (exit code 2).
class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

class DeterminismError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

class NonFiniteError : public RuntimeFailure {
 public:
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace invd
