#include "nsp/specfun.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace nsp {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;

// Backward evaluation of the Laplace continued fraction
//   erfcx(x) = 1/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
// 80 terms are enough for x >= 4 at double precision.
double erfcx_cf(double x) {
  double t = x;
  for (int k = 80; k >= 1; --k)
    t = x + 0.5 * k / t;
  return 1.0 / (kSqrtPi * t);
}

} // namespace

double erfc(double x) { return std::erfc(x); }

double erfcx(double x) {
  if (std::isnan(x))
    return x;
  if (x < 0.0)
    return 2.0 * std::exp(x * x) - erfcx(-x);
  if (x < 4.0)
    return std::exp(x * x) * std::erfc(x);
  return erfcx_cf(x);
}

double log_erfc(double x) {
  if (x < 0.5)
    return std::log(std::erfc(x));
  return std::log(erfcx(x)) - x * x;
}

double log_ndtr(double x) {
  return log_erfc(-x * std::numbers::sqrt2 / 2.0) - std::numbers::ln2;
}

double inv_mills(double x) {
  const double z = -x * std::numbers::sqrt2 / 2.0;
  if (x < 0.0)
    return std::sqrt(2.0 / std::numbers::pi) / erfcx(z);
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return phi / (0.5 * std::erfc(z));
}

QuadratureGrid gauss_hermite(std::size_t order) {
  if (order < 2 || order > 512)
    throw std::invalid_argument("gauss_hermite: order must lie in [2, 512]");
  const int n = static_cast<int>(order);

  // Initial guesses from the Jacobi matrix of the orthonormal He_k family.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n - 1);
  for (int k = 1; k < n; ++k)
    sub(k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd guess = es.eigenvalues();

  // Orthonormal recurrence psi_{k+1} = (x psi_k - sqrt(k) psi_{k-1}) / sqrt(k+1),
  // rescaled on the fly; returns psi_n / psi_{n-1} and log|psi_{n-1}|.
  auto eval = [n](double x, double& ratio, double& log_prev) {
    double p0 = 1.0, p1 = x, log_scale = 0.0;
    for (int k = 1; k < n; ++k) {
      const double p2 = (x * p1 - std::sqrt(static_cast<double>(k)) * p0) /
                        std::sqrt(static_cast<double>(k + 1));
      p0 = p1;
      p1 = p2;
      if (std::abs(p1) > 1e150) {
        p0 *= 1e-150;
        p1 *= 1e-150;
        log_scale += 150.0 * std::numbers::ln10;
      }
    }
    ratio = p1 / p0;
    log_prev = std::log(std::abs(p0)) + log_scale;
  };

  const int half = n / 2;
  std::vector<double> pos(half), logw(half);
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  for (int i = 0; i < half; ++i) {
    double x = guess(n - half + i);
    double ratio = 0.0, log_prev = 0.0;
    for (int it = 0; it < 100; ++it) {
      eval(x, ratio, log_prev);
      const double dx = ratio / sqrt_n;
      x -= dx;
      if (std::abs(dx) <= 1e-15 * std::max(1.0, std::abs(x)))
        break;
    }
    eval(x, ratio, log_prev);
    pos[i] = x;
    logw[i] = -std::log(static_cast<double>(n)) - 2.0 * log_prev;
  }

  QuadratureGrid g;
  g.order = order;
  g.nodes.resize(order);
  g.log_weights.resize(order);
  for (int i = 0; i < half; ++i) {
    g.nodes[n - half + i] = pos[i];
    g.nodes[half - 1 - i] = -pos[i];
    g.log_weights[n - half + i] = logw[i];
    g.log_weights[half - 1 - i] = logw[i];
  }
  if (n % 2 == 1) {
    double ratio = 0.0, log_prev = 0.0;
    eval(0.0, ratio, log_prev);
    g.nodes[half] = 0.0;
    g.log_weights[half] = -std::log(static_cast<double>(n)) - 2.0 * log_prev;
  }

  // Normalize to unit mass; symmetric pairs keep sum w x = 0 exactly.
  const double lmax = *std::max_element(g.log_weights.begin(), g.log_weights.end());
  double s = 0.0;
  for (double lw : g.log_weights)
    s += std::exp(lw - lmax);
  const double log_total = lmax + std::log(s);
  g.weights.resize(order);
  for (std::size_t i = 0; i < order; ++i) {
    g.log_weights[i] -= log_total;
    g.weights[i] = std::exp(g.log_weights[i]);
  }
  return g;
}

double log_weighted_power_mean(std::span<const double> log_values,
                               std::span<const double> weights, double exponent) {
  if (log_values.empty())
    throw std::invalid_argument("log_weighted_power_mean: empty input");
  if (log_values.size() != weights.size())
    throw std::invalid_argument("log_weighted_power_mean: length mismatch");
  if (!(exponent > 0.0) || !std::isfinite(exponent))
    throw std::invalid_argument("log_weighted_power_mean: exponent must be positive");

  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_values.size(); ++i) {
    if (!std::isfinite(log_values[i]))
      throw std::invalid_argument("log_weighted_power_mean: non-finite log value");
    if (weights[i] > 0.0)
      m = std::max(m, exponent * log_values[i]);
  }
  if (!std::isfinite(m))
    throw std::invalid_argument("log_weighted_power_mean: no positive weight");
  double s = 0.0;
  for (std::size_t i = 0; i < log_values.size(); ++i)
    s += weights[i] * std::exp(exponent * log_values[i] - m);
  return m + std::log(s);
}

} // namespace nsp
