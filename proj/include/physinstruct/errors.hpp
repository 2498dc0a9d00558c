#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace physinstruct {

/// Precondition or shape rule broken by the caller.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Iterative solver ran out of iterations before reaching its tolerance.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, double residual_norm)
      : std::runtime_error(what), residual_norm_(residual_norm) {}
  double residual_norm() const { return residual_norm_; }

 private:
  double residual_norm_;
};

/// Non-finite loss or update during an optimization loop.
class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// Malformed or truncated dataset / checkpoint / config file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A command needs an artifact that does not exist (or must not be overwritten).
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A function that must be deterministic returned different values for identical input.
class DeterminismError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace physinstruct
