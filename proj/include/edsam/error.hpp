#pragma once

#include <stdexcept>
#include <string>

namespace edsam {

// Base of every error the library raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller handed in a value that breaks an operation's precondition.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// A file or byte stream could not be decoded.
class ParseError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersion : public ParseError {
 public:
  using ParseError::ParseError;
};

// A computation produced (or was fed) NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// A referenced file does not exist.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

}  // namespace edsam
