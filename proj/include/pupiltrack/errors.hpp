#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pupiltrack {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Out-of-range argument or malformed domain value.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Event stream not sorted by timestamp.
class OrderingError : public Error {
 public:
  using Error::Error;
};

// Shapes or pipeline settings that do not fit together.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Parse failure. `position` is a 1-based line number for text inputs and a
// 0-based byte offset for binary inputs.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t position)
      : Error(what + " (at " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace pupiltrack
