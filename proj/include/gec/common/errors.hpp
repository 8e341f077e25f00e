#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gec {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. `where` is the 1-based row/line that failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t where, const std::string& what)
      : Error(path + ":" + std::to_string(where) + ": " + what), line_(where) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An id, index or tag outside the permitted domain.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered in a loss, log-probability or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gec
