#pragma once

#include <stdexcept>
#include <string>

namespace psic {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the mathematical domain of the operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Array shapes, band structures or lengths disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A least-squares system has no unique solution.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Optimization produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace psic
