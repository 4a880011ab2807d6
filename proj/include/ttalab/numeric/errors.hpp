#pragma once

#include <stdexcept>
#include <string>

namespace ttalab {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class BatchTooSmallError : public Error {
 public:
  using Error::Error;
};

}  // namespace ttalab
