#pragma once

#include "nsp/stationarity.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nsp {

struct CapacityResult {
  double kappa = 0.0;
  Level level = Level::r1;
  double alpha_c = 0.0;
  LiftingParams params;
  double residual_norm = 0.0; ///< max |d psi / d param| at the root
  double psi_residual = 0.0;  ///< psi at the returned alpha_c
  Branch branch = Branch::interior;

  struct Diagnostics {
    int root_iterations = 0;
    int stationary_solves = 0;
    int distinct_solutions = 1;
    std::size_t quad_order_inner = 0;
    std::size_t quad_order_outer = 0;
    double bracket_lo = 0.0;
    double bracket_hi = 0.0;
    double seconds = 0.0;
  } diagnostics;

  bool ok = true;    ///< false for an isolated failure inside a sweep
  std::string error; ///< failure message when !ok
};

/// Per-level warm starts carried along a kappa sweep; updated in place.
struct WarmStarts {
  std::optional<LiftingParams> r2f;
  std::optional<LiftingParams> r3f;
};

CapacityResult alpha_c(double kappa, Level level, const SolverConfig& cfg,
                       WarmStarts* warm = nullptr);

/// kappas must be sorted. Sequential sweeps continue warm starts along kappa;
/// parallel sweeps solve every point cold.
std::vector<CapacityResult> sweep(const std::vector<double>& kappas,
                                  const std::vector<Level>& levels, const SolverConfig& cfg,
                                  bool parallel = false);

std::string csv_header();
std::string csv_row(const CapacityResult& r);
void write_csv(std::ostream& os, const std::vector<CapacityResult>& rows);

struct ModuloMPoint {
  std::vector<double> c;
  double psi = 0.0;
  bool evaluated = false;
};

struct ModuloMReport {
  double kappa = 0.0;
  Level level = Level::r2f;
  double psi_hat = 0.0;
  double max_excess = 0.0; ///< max over evaluated points of psi(c) - psi(c_hat)
  int evaluated = 0;
  int skipped = 0;
  bool pass = false;
  std::vector<ModuloMPoint> points;
};

ModuloMReport modulo_m_check(const CapacityResult& root, const SolverConfig& cfg,
                             double grid_radius, int grid_points);
ModuloMReport modulo_m_check(double kappa, Level level, const SolverConfig& cfg,
                             double grid_radius, int grid_points);

struct OrderingReport {
  double kappa = 0.0;
  std::vector<CapacityResult> results; ///< levels 1, 2p, 2f, 3f
  std::vector<double> improvement;     ///< relative drop from the previous level
  bool ordered = false;
};

OrderingReport ordering_audit(double kappa, const SolverConfig& cfg);

/// Largest kappa at which the interior level-2p branch beats level 1 at the
/// level-1 capacity, located by bisection on [lo, hi].
double estimate_kappa_c(const SolverConfig& cfg, double lo = -1.0, double hi = -0.3,
                        double tol = 1e-4);

} // namespace nsp
