#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hiermeta {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. `line()` is 1-based and counts the header row.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Input that parses but violates a data or option invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure: singular design, non-positive-definite covariance, ...
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace hiermeta
