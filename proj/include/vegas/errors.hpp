#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace vegas {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf produced by a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// An operation ran without the state it needs (missing gradient, missing saved noise).
class StateError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class GenerationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Binary checkpoint could not be decoded.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Stored config hash disagrees with the active run.
class ResumeMismatchError : public Error {
 public:
  using Error::Error;
};

/// Text record could not be decoded; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace vegas
