#include "nsp/free_energy.hpp"

#include "nsp/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nsp {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

void require_grid(const QuadratureGrid& g) {
  if (g.order < kMinQuadOrder)
    throw std::invalid_argument("quadrature order below " + std::to_string(kMinQuadOrder));
}

// d^2 log f_zt / dC^2 by central differences of the analytic dC; only needed on
// the p-chain boundaries where the analytic p-derivatives become 0/0 limits.
double log_f_zt_cc(double C, double B, double s) {
  const double d = 1e-5 * std::max(1.0, std::abs(C));
  return (log_f_zt_jet(C + d, B, s).dC - log_f_zt_jet(C - d, B, s).dC) / (2.0 * d);
}

} // namespace

std::string to_string(Level level) {
  switch (level) {
  case Level::r1: return "1";
  case Level::r2p: return "2p";
  case Level::r2f: return "2f";
  case Level::r3f: return "3f";
  }
  return "?";
}

Level parse_level(const std::string& s) {
  if (s == "1") return Level::r1;
  if (s == "2p") return Level::r2p;
  if (s == "2f") return Level::r2f;
  if (s == "3f") return Level::r3f;
  throw std::invalid_argument("unknown level '" + s + "' (expected 1, 2p, 2f or 3f)");
}

LiftingParams LiftingParams::level1() {
  LiftingParams lp;
  lp.level = 1;
  lp.gamma_sq = 0.5;
  lp.gamma_sq_p = 0.5;
  return lp;
}

LiftingParams LiftingParams::r2_partial(double c2, double gamma_sq, double gamma_sq_p) {
  LiftingParams lp;
  lp.level = 2;
  lp.full = false;
  lp.p = {0.0};
  lp.q = {0.0};
  lp.c = {c2};
  lp.gamma_sq = gamma_sq;
  lp.gamma_sq_p = gamma_sq_p;
  return lp;
}

LiftingParams LiftingParams::r2_full(double p2, double q2, double c2, double gamma_sq,
                                     double gamma_sq_p) {
  LiftingParams lp;
  lp.level = 2;
  lp.p = {p2};
  lp.q = {q2};
  lp.c = {c2};
  lp.gamma_sq = gamma_sq;
  lp.gamma_sq_p = gamma_sq_p;
  return lp;
}

LiftingParams LiftingParams::r3_full(double p2, double p3, double q2, double q3, double c2,
                                     double c3, double gamma_sq, double gamma_sq_p) {
  LiftingParams lp;
  lp.level = 3;
  lp.p = {p2, p3};
  lp.q = {q2, q3};
  lp.c = {c2, c3};
  lp.gamma_sq = gamma_sq;
  lp.gamma_sq_p = gamma_sq_p;
  return lp;
}

double e_max_sq(double kappa) {
  // kappa*phi(kappa) + (kappa^2+1)*Phi(kappa); below zero Phi is written through
  // erfcx so that both terms share the factor phi(kappa).
  const double phi = kInvSqrt2Pi * std::exp(-0.5 * kappa * kappa);
  if (kappa >= 0.0)
    return kappa * phi + (kappa * kappa + 1.0) * 0.5 * std::erfc(-kappa / std::numbers::sqrt2);
  const double mills = std::sqrt(std::numbers::pi / 2.0) * erfcx(-kappa / std::numbers::sqrt2);
  return phi * (kappa + (kappa * kappa + 1.0) * mills);
}

namespace {

// log erfc(z) and d/dz log erfc(z) from a single erfc/erfcx evaluation.
void log_erfc_and_slope(double z, double& value, double& slope) {
  if (z < 0.5) {
    const double e = std::erfc(z);
    value = std::log(e);
    slope = -2.0 * std::exp(-z * z) / (kSqrtPi * e);
  } else {
    const double ex = erfcx(z);
    value = std::log(ex) - z * z;
    slope = -2.0 / (kSqrtPi * ex);
  }
}

struct ZtParts {
  double ld, lu;             // log f_zd, log f_zu
  double dlerfc_z, dlphi_h;  // d log erfc(z)/dz, d log Phi(h)/dh
  double k, z;
};

ZtParts zt_parts(double h, double B, double C, double s) {
  ZtParts p;
  p.k = 1.0 + 2.0 * B * s;
  p.z = h / std::sqrt(2.0 * p.k);
  double le = 0.0;
  log_erfc_and_slope(p.z, le, p.dlerfc_z);
  p.ld = -B * C * C / p.k - 0.5 * std::log(p.k) - std::numbers::ln2 + le;
  // log Phi(h) = log erfc(-h/sqrt2) - log 2; d/dh = -(1/sqrt2) d log erfc.
  double lp = 0.0, sp = 0.0;
  log_erfc_and_slope(-h / std::numbers::sqrt2, lp, sp);
  p.lu = lp - std::numbers::ln2;
  p.dlphi_h = -sp / std::numbers::sqrt2;
  return p;
}

} // namespace

double log_f_zt(const SphereIntegrand& si) {
  if (!(si.B > 0.0))
    throw OutOfDomain("f_zt: B must be positive");
  if (!(si.one_minus_p > 0.0 && si.one_minus_p <= 1.0))
    throw OutOfDomain("f_zt: one_minus_p must lie in (0, 1]");
  const ZtParts p = zt_parts(si.h, si.B, si.C, si.one_minus_p);
  return std::min(0.0, log_add_exp(p.ld, p.lu));
}

double f_zt(const SphereIntegrand& si) { return std::exp(log_f_zt(si)); }

LogFztJet log_f_zt_jet(double C, double B, double s) {
  const double rs = std::sqrt(s);
  const double h = -C / rs;
  const ZtParts p = zt_parts(h, B, C, s);
  const double k = p.k, z = p.z, sk = std::sqrt(2.0 * k);

  // Mixture weights of the two pieces in f_zt.
  const double wd = 1.0 / (1.0 + std::exp(p.lu - p.ld));
  const double wu = 1.0 / (1.0 + std::exp(p.ld - p.lu));

  const double D = p.dlerfc_z;
  const double ld_k = B * C * C / (k * k) - 0.5 / k - D * z / (2.0 * k);
  const double ld_C = -2.0 * B * C / k - D / (sk * rs);
  const double ld_B = -C * C / k + 2.0 * s * ld_k;
  const double ld_s = 2.0 * B * ld_k - D / sk * h / (2.0 * s);
  const double lu_C = -p.dlphi_h / rs;
  const double lu_s = -p.dlphi_h * h / (2.0 * s);

  LogFztJet j;
  j.value = std::min(0.0, log_add_exp(p.ld, p.lu));
  j.dC = wd * ld_C + wu * lu_C;
  j.dB = wd * ld_B;
  j.ds = wd * ld_s + wu * lu_s;
  return j;
}

XSide x_side_r2(double q2, double c2, double gp) {
  const double a1 = 2.0 * gp - c2 * (1.0 - q2);
  if (!(a1 > 0.0) || !(gp > 0.0) || !(c2 > 0.0))
    throw OutOfDomain("x-side: 2*gamma_sq_p - c2*(1-q2) must be positive");
  XSide x;
  const double lg = std::log(a1 / (2.0 * gp));
  x.value = lg / (2.0 * c2) - q2 / (2.0 * a1);
  x.d_q2 = q2 * c2 / (2.0 * a1 * a1);
  x.d_c2 = -lg / (2.0 * c2 * c2) - (1.0 - q2) / (2.0 * c2 * a1) -
           q2 * (1.0 - q2) / (2.0 * a1 * a1);
  x.d_gamma_p = 1.0 / (c2 * a1) - 1.0 / (2.0 * c2 * gp) + q2 / (a1 * a1);
  return x;
}

XSide x_side_r3(double q2, double q3, double c2, double c3, double gp) {
  const double a1 = 2.0 * gp - c2 * (1.0 - q2);
  const double a2 = a1 - c3 * (q2 - q3);
  if (!(a1 > 0.0) || !(a2 > 0.0) || !(gp > 0.0) || !(c2 > 0.0) || !(c3 > 0.0))
    throw OutOfDomain("x-side: level-3 log arguments must be positive");
  XSide x;
  const double l1 = std::log(a1 / (2.0 * gp));
  const double l2 = std::log(a2 / a1);
  x.value = l1 / (2.0 * c2) + l2 / (2.0 * c3) - q3 / (2.0 * a2);
  x.d_q2 = 1.0 / (2.0 * a1) + ((c2 - c3) / a2 - c2 / a1) / (2.0 * c3) +
           q3 * (c2 - c3) / (2.0 * a2 * a2);
  x.d_q3 = q3 * c3 / (2.0 * a2 * a2);
  x.d_c2 = -l1 / (2.0 * c2 * c2) - (1.0 - q2) / (2.0 * c2 * a1) +
           (1.0 - q2) * (1.0 / a1 - 1.0 / a2) / (2.0 * c3) - q3 * (1.0 - q2) / (2.0 * a2 * a2);
  x.d_c3 = -l2 / (2.0 * c3 * c3) - (q2 - q3) / (2.0 * c3 * a2) - q3 * (q2 - q3) / (2.0 * a2 * a2);
  x.d_gamma_p = 1.0 / (c2 * a1) - 1.0 / (2.0 * c2 * gp) + 1.0 / (c3 * a2) - 1.0 / (c3 * a1) +
                q3 / (a2 * a2);
  return x;
}

SphereTermR2 sphere_term_r2(double kappa, double p2, double B, const QuadratureGrid& grid,
                            bool with_derivatives) {
  require_grid(grid);
  if (!(p2 >= 0.0 && p2 < 1.0))
    throw OutOfDomain("sphere term: p2 must lie in [0, 1)");
  if (!(B > 0.0))
    throw OutOfDomain("sphere term: B must be positive");
  const double s = 1.0 - p2;
  const double sp = std::sqrt(p2);
  SphereTermR2 t;
  for (std::size_t i = 0; i < grid.order; ++i) {
    const double u = grid.nodes[i];
    const double w = grid.weights[i];
    const double C = sp * u + kappa;
    if (!with_derivatives) {
      t.value += w * log_f_zt({-C / std::sqrt(s), B, C, s});
      continue;
    }
    const LogFztJet j = log_f_zt_jet(C, B, s);
    t.value += w * j.value;
    t.d_B += w * j.dB;
    const double dc = sp > 0.0 ? j.dC * u / (2.0 * sp) : 0.0;
    t.d_p2 += w * (dc - j.ds);
  }
  if (with_derivatives && sp == 0.0) {
    // Stein limit: E[L_C(sqrt(p2) u + kappa) u] / (2 sqrt(p2)) -> L_CC(kappa) / 2.
    t.d_p2 += 0.5 * log_f_zt_cc(kappa, B, s);
  }
  return t;
}

SphereTermR3 sphere_term_r3(double kappa, double p2, double p3, double B, double theta,
                            const QuadratureGrid& inner, const QuadratureGrid& outer,
                            bool with_derivatives) {
  require_grid(inner);
  require_grid(outer);
  if (!(p2 < 1.0 && p3 >= 0.0 && p3 <= p2))
    throw OutOfDomain("sphere term: need 0 <= p3 <= p2 < 1");
  if (!(B > 0.0) || !(theta > 0.0))
    throw OutOfDomain("sphere term: B and c3/c2 must be positive");
  const double s = 1.0 - p2;
  const double a = std::sqrt(p2 - p3);
  const double b = std::sqrt(p3);
  const std::size_t ni = inner.order;

  SphereTermR3 t;
  std::vector<double> lv(ni), lc(ni), lb(ni), ls(ni), lcc(ni);
  for (std::size_t io = 0; io < outer.order; ++io) {
    const double u4 = outer.nodes[io];
    const double wo = outer.weights[io];
    for (std::size_t j = 0; j < ni; ++j) {
      const double C = a * inner.nodes[j] + b * u4 + kappa;
      if (with_derivatives) {
        const LogFztJet jet = log_f_zt_jet(C, B, s);
        lv[j] = jet.value;
        lc[j] = jet.dC;
        lb[j] = jet.dB;
        ls[j] = jet.ds;
        lcc[j] = (a == 0.0 || b == 0.0) ? log_f_zt_cc(C, B, s) : 0.0;
      } else {
        lv[j] = log_f_zt({-C / std::sqrt(s), B, C, s});
      }
    }
    const double li = log_weighted_power_mean(lv, inner.weights, theta);
    t.value += wo * li;
    if (!with_derivatives)
      continue;

    // Tilted inner weights pi_j = w_j f_j^theta / E f^theta.
    double e_l = 0.0, e_lb = 0.0, e_lc_u3 = 0.0, e_lc = 0.0, e_ls = 0.0, e_curv = 0.0;
    for (std::size_t j = 0; j < ni; ++j) {
      const double pi = inner.weights[j] * std::exp(theta * lv[j] - li);
      e_l += pi * lv[j];
      e_lb += pi * lb[j];
      e_lc += pi * lc[j];
      e_ls += pi * ls[j];
      e_lc_u3 += pi * lc[j] * inner.nodes[j];
      e_curv += pi * (lcc[j] + theta * lc[j] * lc[j]);
    }
    // E[pi L_C u3] / (2a), with its a -> 0 limit (E[L_CC + theta L_C^2]) / 2.
    const double du3 = a > 0.0 ? e_lc_u3 / (2.0 * a) : 0.5 * e_curv;
    // E[pi L_C] u4 / (2b), with its b -> 0 limit from Stein's identity in u4.
    const double du4 =
        b > 0.0 ? e_lc * u4 / (2.0 * b) : 0.5 * (e_curv - theta * e_lc * e_lc);
    t.d_theta += wo * e_l;
    t.d_B += wo * theta * e_lb;
    t.d_p2 += wo * theta * (du3 - e_ls);
    t.d_p3 += wo * theta * (du4 - du3);
  }
  return t;
}

void check_domain(const LiftingParams& lp) {
  if (!(lp.gamma_sq > 0.0) || !(lp.gamma_sq_p > 0.0))
    throw OutOfDomain("gamma_sq and gamma_sq_p must be positive");
  if (lp.level == 1)
    return;
  const std::size_t r = static_cast<std::size_t>(lp.level);
  if (lp.p.size() != r - 1 || lp.q.size() != r - 1 || lp.c.size() != r - 1)
    throw std::invalid_argument("lifting vectors do not match the level");
  double prev_p = 1.0, prev_q = 1.0;
  for (std::size_t i = 0; i + 1 < r; ++i) {
    if (!(lp.p[i] >= 0.0 && lp.p[i] <= prev_p) || !(lp.q[i] >= 0.0 && lp.q[i] <= prev_q))
      throw OutOfDomain("p and q chains must be non-increasing in [0, 1]");
    if (!(lp.c[i] > 0.0))
      throw OutOfDomain("c must be positive");
    prev_p = lp.p[i];
    prev_q = lp.q[i];
  }
  if (!(lp.p[0] < 1.0))
    throw OutOfDomain("p2 must be below 1");
}

double psi_r1(const ModelPoint& mp) {
  return -1.0 + std::sqrt(mp.alpha) * std::sqrt(e_max_sq(mp.kappa));
}

double psi_r2_partial(const ModelPoint& mp, double c2, double gamma_sq, double gamma_sq_p) {
  if (!(c2 > 0.0) || !(gamma_sq > 0.0) || !(gamma_sq_p > 0.0))
    throw OutOfDomain("partial level 2: c2 and gammas must be positive");
  const XSide x = x_side_r2(0.0, c2, gamma_sq_p);
  const double B = c2 / (4.0 * gamma_sq);
  const double lf = log_f_zt({-mp.kappa, B, mp.kappa, 1.0});
  return 0.5 * c2 - gamma_sq_p + x.value + gamma_sq - mp.alpha / c2 * lf;
}

double psi_r2_full(const ModelPoint& mp, const LiftingParams& lp, const QuadratureGrid& grid) {
  if (lp.level != 2)
    throw std::invalid_argument("psi_r2_full: level-2 parameters required");
  check_domain(lp);
  const double p2 = lp.p2(), q2 = lp.q2(), c2 = lp.c2();
  const XSide x = x_side_r2(q2, c2, lp.gamma_sq_p);
  const SphereTermR2 t = sphere_term_r2(mp.kappa, p2, c2 / (4.0 * lp.gamma_sq), grid, false);
  return 0.5 * (1.0 - p2 * q2) * c2 - lp.gamma_sq_p + x.value + lp.gamma_sq -
         mp.alpha / c2 * t.value;
}

double psi_r3_full(const ModelPoint& mp, const LiftingParams& lp,
                   const QuadratureGrid& grid_inner, const QuadratureGrid& grid_outer) {
  if (lp.level != 3)
    throw std::invalid_argument("psi_r3_full: level-3 parameters required");
  check_domain(lp);
  const double p2 = lp.p2(), p3 = lp.p3(), q2 = lp.q2(), q3 = lp.q3();
  const double c2 = lp.c2(), c3 = lp.c3();
  const XSide x = x_side_r3(q2, q3, c2, c3, lp.gamma_sq_p);
  const SphereTermR3 t = sphere_term_r3(mp.kappa, p2, p3, c2 / (4.0 * lp.gamma_sq), c3 / c2,
                                        grid_inner, grid_outer, false);
  return 0.5 * (1.0 - p2 * q2) * c2 + 0.5 * (p2 * q2 - p3 * q3) * c3 - lp.gamma_sq_p +
         x.value + lp.gamma_sq - mp.alpha / c3 * t.value;
}

double psi(const ModelPoint& mp, const LiftingParams& lp, const QuadratureGrid& inner,
           const QuadratureGrid& outer) {
  if (lp.level == 1)
    return psi_r1(mp);
  if (lp.level == 2 && !lp.full)
    return psi_r2_partial(mp, lp.c2(), lp.gamma_sq, lp.gamma_sq_p);
  if (lp.level == 2)
    return psi_r2_full(mp, lp, outer);
  if (lp.level == 3)
    return psi_r3_full(mp, lp, inner, outer);
  throw std::invalid_argument("psi: unsupported level");
}

} // namespace nsp
