#pragma once

#include "nsp/free_energy.hpp"

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace nsp {

/// Named derivatives d psi / d param.
struct ResidualVector {
  std::vector<std::string> names;
  std::vector<double> values;

  double max_abs() const;
  double at(const std::string& name) const;
};

struct SolverConfig {
  double residual_tol = 1e-9;
  int max_iter = 200;
  double damping = 1.0;        ///< initial Newton step fraction, in (0, 1]
  double fd_step = 1e-6;       ///< for gradient verification
  double jacobian_step = 1e-6; ///< for the Newton Jacobian (reparameterized space)
  std::size_t quad_order_inner = 60;
  std::size_t quad_order_outer = 60;
  double capacity_tol = 1e-6; ///< relative bracket width for alpha_c
  bool full_system = false;   ///< Newton on every unknown instead of the reduced set
  std::optional<LiftingParams> warm_start;
};

/// Gauss-Hermite grids sized by a SolverConfig; level 2 uses `outer`.
struct Quadrature {
  QuadratureGrid inner;
  QuadratureGrid outer;
  explicit Quadrature(const SolverConfig& cfg);
  Quadrature(std::size_t inner_order, std::size_t outer_order);
};

/// (c2, gamma_sq_p, gamma_sq) at p2 = q2 = 0.
ResidualVector grad_r2_partial(const ModelPoint& mp, const LiftingParams& lp);
/// (q2, p2, c2, gamma_sq_p, gamma_sq).
ResidualVector grad_r2_full(const ModelPoint& mp, const LiftingParams& lp,
                            const QuadratureGrid& grid);
/// (q3, q2, p3, p2, c3, c2, gamma_sq_p, gamma_sq).
ResidualVector grad_r3_full(const ModelPoint& mp, const LiftingParams& lp,
                            const QuadratureGrid& inner, const QuadratureGrid& outer);
ResidualVector gradient(const ModelPoint& mp, const LiftingParams& lp, const Quadrature& quad);

struct ClosedForm {
  double gamma_sq_p = 0.5;
  std::vector<double> c; ///< c_2..c_r
};

/// gamma_sq_p and c as functions of the p and q chains (p_2..p_r, q_2..q_r).
ClosedForm closed_form_params(const std::vector<double>& p, const std::vector<double>& q, int r);

enum class Branch { interior, degenerate_c2_zero };
std::string to_string(Branch b);

struct StationaryPoint {
  Level level = Level::r1;
  LiftingParams params;
  ResidualVector residual; ///< full system at params
  double psi = 0.0;
  Branch branch = Branch::interior;
  int iterations = 0;
  int distinct_solutions = 1; ///< stationary points found by the initial scan
};

StationaryPoint solve_stationary(const ModelPoint& mp, Level level, const SolverConfig& cfg);
StationaryPoint solve_stationary(const ModelPoint& mp, Level level, const SolverConfig& cfg,
                                 const Quadrature& quad);

/// Stationary point with c held fixed; (p, q, gamma_sq, gamma_sq_p) solved.
StationaryPoint solve_fixed_c(const ModelPoint& mp, const LiftingParams& start,
                              const SolverConfig& cfg, const Quadrature& quad);

struct GradientCheck {
  std::vector<std::string> names;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> rel_error;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Components are compared relative to max(|analytic|, |numeric|, kGradientFloor).
constexpr double kGradientFloor = 1e-3;

GradientCheck check_gradient(const ModelPoint& mp, const LiftingParams& lp,
                             const Quadrature& quad, double fd_step = 1e-6);

/// Uniform draw from a box strictly inside the domain of `level`.
LiftingParams random_params(Level level, std::mt19937_64& rng);

double get_param(const LiftingParams& lp, const std::string& name);
void set_param(LiftingParams& lp, const std::string& name, double value);

} // namespace nsp
