#pragma once

#include <stdexcept>
#include <string>

namespace optospring {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed configuration text.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A parameter violates one of its documented invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Division by a (near-)vanishing denominator in a transfer function.
class SingularityError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver did not converge.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Not enough samples or points for the requested estimate.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Requested quantity is undefined for an unstable mode.
class InstabilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace optospring
