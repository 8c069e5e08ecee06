#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvf {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

class ZeroMassError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// A simulated coordinate exceeded the overflow guard.
class BlowUpError : public Error {
 public:
  BlowUpError(std::size_t step, const std::string& what)
      : Error("numerical blow-up at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// All filter weights underflowed; the unnormalized filter lost its mass.
class MassUnderflowError : public Error {
 public:
  explicit MassUnderflowError(std::size_t step)
      : Error("filter mass underflow at step " + std::to_string(step) +
              "; enable resampling or increase the particle count"),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Particles escaped the mollifier grid (including its safety margin).
class CoverageError : public Error {
 public:
  using Error::Error;
};

class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(std::size_t step, const std::string& what)
      : Error("covariance lost positive semidefiniteness at step " + std::to_string(step) + ": " +
              what),
        step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mvf
