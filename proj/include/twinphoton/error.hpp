#pragma once

#include <stdexcept>
#include <string>

namespace twinphoton {

/// Base of every error raised by the library. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A rate, probability, duration or other input lies outside its domain.
class InvalidParameter : public Error {
 public:
  using Error::Error;
};

/// The printed closed forms need sqrt(D) with D < 0.
class ComplexBranchError : public Error {
 public:
  using Error::Error;
};

/// A sampled curve is too coarse for the requested operation.
class ResolutionError : public Error {
 public:
  using Error::Error;
};

/// Input data violates an ordering or layout precondition (e.g. unsorted tags).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

class DivideByZeroError : public Error {
 public:
  using Error::Error;
};

/// Reconstruction has no solution with all probabilities in [0, 1].
class InfeasibleData : public Error {
 public:
  using Error::Error;
};

class InsufficientData : public Error {
 public:
  using Error::Error;
};

/// Adaptive quadrature could not reach the requested tolerance.
class AccuracyError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents (CSV/JSON/config).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Least-squares iteration did not converge. Carries the last residual norm.
class FitFailure : public Error {
 public:
  FitFailure(const std::string& what, double residual_norm, int iterations)
      : Error(what), residual_norm_(residual_norm), iterations_(iterations) {}

  double residual_norm() const noexcept { return residual_norm_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_norm_;
  int iterations_;
};

}  // namespace twinphoton
