#pragma once

#include <stdexcept>
#include <string>

namespace kitaev_bures {

/// Raised when an input violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A quadrature or refinement did not reach the requested tolerance.
class NonConvergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A regression could not be carried out (non-positive data, singular design).
class FitFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kitaev_bures
