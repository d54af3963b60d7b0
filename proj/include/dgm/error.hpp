#pragma once

#include <stdexcept>
#include <string>

namespace dgm {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument lies outside the domain of an operation (log of a
/// non-positive entry, division by zero, invalid hyperparameter, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A computation produced NaN or infinity.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent input file (IDX, checkpoint, config).
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace dgm
