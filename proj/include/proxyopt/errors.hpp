#pragma once

#include <stdexcept>
#include <string>

namespace proxyopt {

/// Malformed input: bad files, broken invariants, out-of-domain arguments.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation that could not produce a trustworthy number
/// (singular covariance, non-convergence, infeasible program).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace proxyopt
