#pragma once

#include <stdexcept>
#include <string>

namespace nsp {

// Parameters outside the region where the free energy is defined
// (non-positive log argument, broken chain order, B <= 0, ...).
struct OutOfDomain : std::domain_error {
  using std::domain_error::domain_error;
};

// Iterative solver gave up; `best_residual` is the smallest residual norm seen.
struct ConvergenceFailure : std::runtime_error {
  double best_residual;
  ConvergenceFailure(const std::string& what, double best)
      : std::runtime_error(what), best_residual(best) {}
};

// Capacity root could not be bracketed, or g(alpha) was not monotone on it.
struct BracketFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

} // namespace nsp
