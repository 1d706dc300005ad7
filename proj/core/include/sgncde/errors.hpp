#pragma once

#include <stdexcept>
#include <string>

namespace sgncde {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (non-skew matrix, singular matrix, ...).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Log requested for a rotation whose angle is within 1e-6 of pi.
class NearAntipodalError : public Error {
 public:
  using Error::Error;
};

/// 6D rotation with a zero first column or parallel columns.
class Degenerate6DError : public Error {
 public:
  using Error::Error;
};

/// An SG window could not be built; carries the failing anchor index.
class WindowError : public Error {
 public:
  WindowError(const std::string& what, int anchor) : Error(what), anchor_(anchor) {}
  int anchor() const noexcept { return anchor_; }

 private:
  int anchor_;
};

/// Normal matrix of an SG window is singular or badly conditioned.
class SingularWindowError : public Error {
 public:
  SingularWindowError(const std::string& what, int anchor) : Error(what), anchor_(anchor) {}
  int anchor() const noexcept { return anchor_; }

 private:
  int anchor_;
};

class OutOfSupportError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Adaptive step size fell below the solver's floor.
class StiffnessError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long batch) : Error(what), batch_(batch) {}
  long batch() const noexcept { return batch_; }

 private:
  long batch_;
};

}  // namespace sgncde
