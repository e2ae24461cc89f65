#pragma once

#include <stdexcept>
#include <string>

namespace vseg {

// Base for every error the library raises. Callers that only care about
// "something went wrong" catch this; tools map subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes. The message names the offending axis.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value. The message names the offending field.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong state (e.g. backward before forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// Numerical failure such as a non-finite training loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated file contents.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace vseg
