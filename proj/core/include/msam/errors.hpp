#pragma once

#include <stdexcept>

namespace msam {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes are incompatible.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Input data violates a value invariant (NaN, Inf, bad counts).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Byte stream is not an msam container (bad magic or version).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Byte stream is truncated or fails its checksum.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

// An identifier references a record that does not exist.
class ReferenceError : public Error {
 public:
  using Error::Error;
};

// Optimization produced a non-finite loss.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace msam
