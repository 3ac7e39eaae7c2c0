#pragma once

#include <stdexcept>
#include <string>

namespace sbr {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on caller-supplied data does not hold.
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

// Tensor operands have incompatible shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf was produced, or a loss diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Configuration values violate their invariants.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A file could not be parsed. The message names the file and line/offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A parsed record violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A file carries a schema version this build does not understand.
class FormatVersionError : public ParseError {
 public:
  using ParseError::ParseError;
};

}  // namespace sbr
