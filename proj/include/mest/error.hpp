#pragma once

#include <stdexcept>
#include <string>

namespace mest {

/// Raised when an argument lies outside the mathematical domain of an operation
/// (nonpositive Ψ argument, negative density, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised on malformed inputs: empty grids, λ outside (0,1), deficient measures
/// handed to samplers, and the like.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure. Carries the tolerance the routine actually achieved.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, double achieved)
      : std::runtime_error(what), achieved_(achieved) {}
  double achieved() const noexcept { return achieved_; }

 private:
  double achieved_;
};

/// A Φ family that fails the concavity requirements of an optimizer.
class AdmissibilityError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A separation check met a configuration it cannot verify (for instance a
/// contracted parameter with a vanishing density).
class VerificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mest
