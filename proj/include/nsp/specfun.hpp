#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace nsp {

/// Gauss-Hermite rule for the standard normal measure N(0,1).
struct QuadratureGrid {
  std::size_t order = 0;
  std::vector<double> nodes;       ///< strictly increasing
  std::vector<double> weights;     ///< sum to 1; may flush to 0 for order > ~350
  std::vector<double> log_weights; ///< always finite
};

double erfc(double x);

/// exp(x^2) * erfc(x), finite for every finite x >= 0 and for x > -26.
double erfcx(double x);

/// log(erfc(x)) without underflow for large positive x.
double log_erfc(double x);

/// log Phi(x) for the standard normal cdf.
double log_ndtr(double x);

/// phi(x) / Phi(x), stable for large negative x.
double inv_mills(double x);

QuadratureGrid gauss_hermite(std::size_t order);

/// log sum_i w_i exp(theta * v_i), max-shifted.
double log_weighted_power_mean(std::span<const double> log_values,
                               std::span<const double> weights, double exponent);

} // namespace nsp
