#pragma once

#include "nsp/specfun.hpp"

#include <string>
#include <vector>

namespace nsp {

struct ModelPoint {
  double kappa = 0.0;
  double alpha = 1.0;
};

enum class Level { r1, r2p, r2f, r3f };

std::string to_string(Level level);
Level parse_level(const std::string& s);

// Lifting parameters of level r. The boundary values p_1 = q_1 = c_1 = 1 are
// implicit, so p and q hold (p_2..p_r), (q_2..q_r) and c holds (c_2..c_r).
struct LiftingParams {
  int level = 1;
  bool full = true;
  std::vector<double> p, q, c;
  double gamma_sq = 0.5;
  double gamma_sq_p = 0.5;

  double p2() const { return p.size() > 0 ? p[0] : 0.0; }
  double p3() const { return p.size() > 1 ? p[1] : 0.0; }
  double q2() const { return q.size() > 0 ? q[0] : 0.0; }
  double q3() const { return q.size() > 1 ? q[1] : 0.0; }
  double c2() const { return c.size() > 0 ? c[0] : 0.0; }
  double c3() const { return c.size() > 1 ? c[1] : 0.0; }

  static LiftingParams level1();
  static LiftingParams r2_partial(double c2, double gamma_sq, double gamma_sq_p);
  static LiftingParams r2_full(double p2, double q2, double c2, double gamma_sq,
                               double gamma_sq_p);
  static LiftingParams r3_full(double p2, double p3, double q2, double q3, double c2,
                               double c3, double gamma_sq, double gamma_sq_p);
};

/// Arguments of the sphere-side inner expectation. h = -C/sqrt(one_minus_p)
/// at every evaluation site of the free energy.
struct SphereIntegrand {
  double h = 0.0;
  double B = 0.0;
  double C = 0.0;
  double one_minus_p = 1.0;
};

/// E max(kappa + g, 0)^2, g ~ N(0,1).
double e_max_sq(double kappa);

double f_zt(const SphereIntegrand& si);
double log_f_zt(const SphereIntegrand& si);

/// log f_zt with h tied to C, plus its partials in (C, B, one_minus_p).
struct LogFztJet {
  double value = 0.0;
  double dC = 0.0;
  double dB = 0.0;
  double ds = 0.0;
};
LogFztJet log_f_zt_jet(double C, double B, double one_minus_p);

/// x-side closed form and its partials.
struct XSide {
  double value = 0.0;
  double d_q2 = 0.0, d_q3 = 0.0;
  double d_c2 = 0.0, d_c3 = 0.0;
  double d_gamma_p = 0.0;
};
XSide x_side_r2(double q2, double c2, double gamma_sq_p);
XSide x_side_r3(double q2, double q3, double c2, double c3, double gamma_sq_p);

/// Sphere term E_u log f_zt at level 2 with partials (p2, B).
struct SphereTermR2 {
  double value = 0.0;
  double d_p2 = 0.0;
  double d_B = 0.0;
};
SphereTermR2 sphere_term_r2(double kappa, double p2, double B, const QuadratureGrid& grid,
                            bool with_derivatives);

/// Sphere term E_{u4} log E_{u3} f_zt^theta at level 3 with partials
/// (p2, p3, B, theta).
struct SphereTermR3 {
  double value = 0.0;
  double d_p2 = 0.0;
  double d_p3 = 0.0;
  double d_B = 0.0;
  double d_theta = 0.0;
};
SphereTermR3 sphere_term_r3(double kappa, double p2, double p3, double B, double theta,
                            const QuadratureGrid& inner, const QuadratureGrid& outer,
                            bool with_derivatives);

/// Throws OutOfDomain when lp is outside the region where psi is defined.
void check_domain(const LiftingParams& lp);

double psi_r1(const ModelPoint& mp);
double psi_r2_partial(const ModelPoint& mp, double c2, double gamma_sq, double gamma_sq_p);
double psi_r2_full(const ModelPoint& mp, const LiftingParams& lp, const QuadratureGrid& grid);
double psi_r3_full(const ModelPoint& mp, const LiftingParams& lp,
                   const QuadratureGrid& grid_inner, const QuadratureGrid& grid_outer);

/// Dispatch on lp.level / lp.full.
double psi(const ModelPoint& mp, const LiftingParams& lp, const QuadratureGrid& inner,
           const QuadratureGrid& outer);

constexpr std::size_t kMinQuadOrder = 16;

} // namespace nsp
