#pragma once

#include "nsp/free_energy.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace nsp {

/// mt19937_64 for stream `stream` of `seed`; the pair is hashed through seed_seq
/// so every (seed, stream) gives an independent, reproducible sequence.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  std::size_t inner_samples = 0; ///< nested_level3 only
};

enum class McKind { e_max_sq, f_zt_level2, inner_log_level2, nested_level3 };
std::string to_string(McKind k);
McKind parse_mc_kind(const std::string& s);

struct McParams {
  double kappa = 0.0;
  SphereIntegrand si;          ///< f_zt_level2: B, C, one_minus_p
  LiftingParams lp;            ///< inner_log_level2 (level 2) and nested_level3 (level 3)
  std::size_t inner_samples = 10000;
};

/// Samples are drawn in fixed blocks, one RNG stream per block, and block
/// statistics are merged pairwise in a fixed order, so results do not depend
/// on the thread count.
McEstimate mc_expectation(McKind kind, const McParams& params, std::size_t samples,
                          std::uint64_t seed);

/// The quadrature value that mc_expectation estimates.
double quadrature_expectation(McKind kind, const McParams& params, std::size_t inner_order = 60,
                              std::size_t outer_order = 60);

struct FiniteNInstance {
  int n = 2;
  int m = 1;
  double kappa = 0.0;
  std::uint64_t seed = 0;

  static FiniteNInstance make(int n, double alpha, double kappa, std::uint64_t seed);
  Eigen::MatrixXd G() const;
};

struct DescentResult {
  double value = 0.0; ///< ||max(kappa - G x, 0)|| / sqrt(n)
  Eigen::VectorXd x;
  int iterations = 0;
};

/// Multi-start Riemannian gradient descent on the unit sphere; an upper bound
/// on min_{|x|=1} ||max(kappa 1 - G x, 0)|| / sqrt(n). A start stops early once
/// its value drops to `target`, and later starts are skipped.
DescentResult sphere_descent(const Eigen::MatrixXd& G, double kappa, int restarts,
                             std::uint64_t seed, double target = 0.0);
double finite_n_ground_state(const FiniteNInstance& inst, int restarts, std::uint64_t seed);

/// min over the unit ball, solved by accelerated projected gradient. Convex for
/// every kappa; equals the sphere problem whenever the minimizer has |x| = 1.
DescentResult ball_ground_state(const Eigen::MatrixXd& G, double kappa);

struct TransitionPoint {
  double alpha = 0.0;
  double fraction_positive = 0.0;
  double mean_value = 0.0;
  int trials = 0;
};

/// Instance t of every alpha shares its seed stream, so the matrices are nested
/// in alpha (the first m rows coincide).
std::vector<TransitionPoint> transition_scan(double kappa, const std::vector<double>& alphas,
                                             int n, int trials, std::uint64_t seed,
                                             int restarts = 4, double threshold = 1e-3);

} // namespace nsp
