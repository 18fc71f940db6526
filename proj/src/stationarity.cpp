#include "nsp/stationarity.hpp"

#include "nsp/errors.hpp"

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>

namespace nsp {

double ResidualVector::max_abs() const {
  double m = 0.0;
  for (double v : values)
    m = std::max(m, std::abs(v));
  return m;
}

double ResidualVector::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name)
      return values[i];
  throw std::out_of_range("residual has no component '" + name + "'");
}

Quadrature::Quadrature(const SolverConfig& cfg)
    : Quadrature(cfg.quad_order_inner, cfg.quad_order_outer) {}

Quadrature::Quadrature(std::size_t inner_order, std::size_t outer_order)
    : inner(gauss_hermite(inner_order)), outer(gauss_hermite(outer_order)) {}

std::string to_string(Branch b) {
  return b == Branch::interior ? "interior" : "degenerate_c2_zero";
}

double get_param(const LiftingParams& lp, const std::string& name) {
  if (name == "p2") return lp.p.at(0);
  if (name == "p3") return lp.p.at(1);
  if (name == "q2") return lp.q.at(0);
  if (name == "q3") return lp.q.at(1);
  if (name == "c2") return lp.c.at(0);
  if (name == "c3") return lp.c.at(1);
  if (name == "gamma_sq") return lp.gamma_sq;
  if (name == "gamma_sq_p") return lp.gamma_sq_p;
  throw std::invalid_argument("unknown parameter '" + name + "'");
}

void set_param(LiftingParams& lp, const std::string& name, double value) {
  if (name == "p2") lp.p.at(0) = value;
  else if (name == "p3") lp.p.at(1) = value;
  else if (name == "q2") lp.q.at(0) = value;
  else if (name == "q3") lp.q.at(1) = value;
  else if (name == "c2") lp.c.at(0) = value;
  else if (name == "c3") lp.c.at(1) = value;
  else if (name == "gamma_sq") lp.gamma_sq = value;
  else if (name == "gamma_sq_p") lp.gamma_sq_p = value;
  else throw std::invalid_argument("unknown parameter '" + name + "'");
}

// ---------------------------------------------------------------------------
// Analytic derivatives

ResidualVector grad_r2_partial(const ModelPoint& mp, const LiftingParams& lp) {
  const double c2 = lp.c2(), g = lp.gamma_sq, gp = lp.gamma_sq_p;
  if (!(c2 > 0.0) || !(g > 0.0))
    throw OutOfDomain("partial level 2: c2 and gamma_sq must be positive");
  const XSide x = x_side_r2(0.0, c2, gp);
  const LogFztJet j = log_f_zt_jet(mp.kappa, c2 / (4.0 * g), 1.0);
  const double a = mp.alpha;
  ResidualVector r;
  r.names = {"c2", "gamma_sq_p", "gamma_sq"};
  r.values = {0.5 + x.d_c2 + a / (c2 * c2) * j.value - a / c2 * j.dB / (4.0 * g),
              -1.0 + x.d_gamma_p, 1.0 + a * j.dB / (4.0 * g * g)};
  return r;
}

ResidualVector grad_r2_full(const ModelPoint& mp, const LiftingParams& lp,
                            const QuadratureGrid& grid) {
  check_domain(lp);
  const double p2 = lp.p2(), q2 = lp.q2(), c2 = lp.c2(), g = lp.gamma_sq;
  const XSide x = x_side_r2(q2, c2, lp.gamma_sq_p);
  const SphereTermR2 t = sphere_term_r2(mp.kappa, p2, c2 / (4.0 * g), grid, true);
  const double a = mp.alpha;
  ResidualVector r;
  r.names = {"q2", "p2", "c2", "gamma_sq_p", "gamma_sq"};
  r.values = {-0.5 * p2 * c2 + x.d_q2,
              -0.5 * q2 * c2 - a / c2 * t.d_p2,
              0.5 * (1.0 - p2 * q2) + x.d_c2 + a / (c2 * c2) * t.value -
                  a / c2 * t.d_B / (4.0 * g),
              -1.0 + x.d_gamma_p,
              1.0 + a * t.d_B / (4.0 * g * g)};
  return r;
}

ResidualVector grad_r3_full(const ModelPoint& mp, const LiftingParams& lp,
                            const QuadratureGrid& inner, const QuadratureGrid& outer) {
  check_domain(lp);
  const double p2 = lp.p2(), p3 = lp.p3(), q2 = lp.q2(), q3 = lp.q3();
  const double c2 = lp.c2(), c3 = lp.c3(), g = lp.gamma_sq;
  const XSide x = x_side_r3(q2, q3, c2, c3, lp.gamma_sq_p);
  const SphereTermR3 t =
      sphere_term_r3(mp.kappa, p2, p3, c2 / (4.0 * g), c3 / c2, inner, outer, true);
  const double a = mp.alpha;
  ResidualVector r;
  r.names = {"q3", "q2", "p3", "p2", "c3", "c2", "gamma_sq_p", "gamma_sq"};
  r.values = {-0.5 * p3 * c3 + x.d_q3,
              -0.5 * p2 * (c2 - c3) + x.d_q2,
              -0.5 * q3 * c3 - a / c3 * t.d_p3,
              -0.5 * q2 * (c2 - c3) - a / c3 * t.d_p2,
              0.5 * (p2 * q2 - p3 * q3) + x.d_c3 + a / (c3 * c3) * t.value -
                  a / c3 * t.d_theta / c2,
              0.5 * (1.0 - p2 * q2) + x.d_c2 -
                  a / c3 * (t.d_B / (4.0 * g) - t.d_theta * c3 / (c2 * c2)),
              -1.0 + x.d_gamma_p,
              1.0 + a * c2 * t.d_B / (4.0 * g * g * c3)};
  return r;
}

ResidualVector gradient(const ModelPoint& mp, const LiftingParams& lp, const Quadrature& quad) {
  if (lp.level == 2 && !lp.full)
    return grad_r2_partial(mp, lp);
  if (lp.level == 2)
    return grad_r2_full(mp, lp, quad.outer);
  if (lp.level == 3)
    return grad_r3_full(mp, lp, quad.inner, quad.outer);
  throw std::invalid_argument("gradient: level 1 has no free parameters");
}

// ---------------------------------------------------------------------------
// Closed forms

namespace {

// One of the two product terms of c_i (P and Q swap roles for the other);
// P[1] = Q[1] = 1 and P[k] = p_k for k >= 2.
double closed_form_term(const std::vector<double>& P, const std::vector<double>& Q, int i,
                        int r) {
  double v = 1.0 / (P[i - 1] - P[i]);
  for (int k = i; k <= r - 1; k += 2)
    v *= (P[k] - P[k + 1]) / (Q[k] - Q[k + 1]);
  for (int k = i; k <= r - 2; k += 2)
    v *= (Q[k + 1] - Q[k + 2]) / (P[k + 1] - P[k + 2]);
  const double e = ((r - i + 1) % 2 == 0) ? 0.5 : -0.5;
  return v * std::pow(Q[r] / P[r], e);
}

} // namespace

ClosedForm closed_form_params(const std::vector<double>& p, const std::vector<double>& q,
                              int r) {
  if (r < 1)
    throw std::invalid_argument("closed_form_params: r must be >= 1");
  ClosedForm cf;
  if (r == 1)
    return cf;
  if (p.size() != static_cast<std::size_t>(r - 1) || q.size() != p.size())
    throw std::invalid_argument("closed_form_params: chain length must be r-1");
  std::vector<double> P(r + 1, 1.0), Q(r + 1, 1.0);
  for (int k = 2; k <= r; ++k) {
    P[k] = p[k - 2];
    Q[k] = q[k - 2];
  }
  for (int k = 2; k <= r; ++k)
    if (!(P[k] < P[k - 1]) || !(Q[k] < Q[k - 1]) || !(P[k] > 0.0) || !(Q[k] > 0.0))
      throw std::invalid_argument(
          "closed_form_params: chains must be strictly decreasing inside (0, 1)");

  double gp = 0.5 * (Q[1] - Q[2]) / (P[1] - P[2]);
  for (int k = 2; k <= r - 1; k += 2)
    gp *= (P[k] - P[k + 1]) / (Q[k] - Q[k + 1]);
  for (int k = 2; k <= r - 2; k += 2)
    gp *= (Q[k + 1] - Q[k + 2]) / (P[k + 1] - P[k + 2]);
  gp *= std::pow(Q[r] / P[r], (r % 2 == 1) ? 0.5 : -0.5);
  cf.gamma_sq_p = gp;
  for (int i = 2; i <= r; ++i)
    cf.c.push_back(closed_form_term(P, Q, i, r) - closed_form_term(Q, P, i, r));
  return cf;
}

// ---------------------------------------------------------------------------
// Gradient verification

LiftingParams random_params(Level level, std::mt19937_64& rng) {
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double gamma_sq = u(0.03, 0.5);
  // gamma_sq_p is drawn above the bound that keeps the x-side determinants positive.
  auto gamma_p = [&](double need) { return 0.5 * need * u(1.2, 3.0) + u(0.05, 0.5); };
  switch (level) {
  case Level::r1:
    return LiftingParams::level1();
  case Level::r2p: {
    const double c2 = u(0.1, 10.0);
    return LiftingParams::r2_partial(c2, gamma_sq, gamma_p(c2));
  }
  case Level::r2f: {
    const double p2 = u(0.05, 0.95), q2 = u(0.05, 0.95), c2 = u(0.5, 15.0);
    return LiftingParams::r2_full(p2, q2, c2, gamma_sq, gamma_p(c2 * (1.0 - q2)));
  }
  case Level::r3f: {
    const double p2 = u(0.05, 0.95), q2 = u(0.05, 0.95);
    const double p3 = p2 * u(0.05, 0.95), q3 = q2 * u(0.05, 0.95);
    const double c2 = u(0.5, 20.0), c3 = u(0.5, 5.0);
    return LiftingParams::r3_full(p2, p3, q2, q3, c2, c3, gamma_sq,
                                  gamma_p(c2 * (1.0 - q2) + c3 * (q2 - q3)));
  }
  }
  return LiftingParams::level1();
}

GradientCheck check_gradient(const ModelPoint& mp, const LiftingParams& lp,
                             const Quadrature& quad, double fd_step) {
  const ResidualVector g = gradient(mp, lp, quad);
  GradientCheck rep;
  rep.tolerance = lp.level == 3 ? 1e-4 : 1e-5;
  rep.names = g.names;
  rep.analytic = g.values;
  auto value_at = [&](const std::string& name, double v, double& out) {
    LiftingParams t = lp;
    set_param(t, name, v);
    try {
      out = psi(mp, t, quad.inner, quad.outer);
      return std::isfinite(out);
    } catch (const OutOfDomain&) {
      return false;
    }
  };
  for (std::size_t i = 0; i < g.names.size(); ++i) {
    const std::string& name = g.names[i];
    const double x = get_param(lp, name);
    const double h = fd_step * std::max(1.0, std::abs(x));
    double fp = 0, fm = 0, f0 = 0, f2 = 0, d = std::numeric_limits<double>::quiet_NaN();
    const bool up = value_at(name, x + h, fp);
    const bool dn = value_at(name, x - h, fm);
    if (up && dn)
      d = (fp - fm) / (2.0 * h);
    else if (up && value_at(name, x, f0) && value_at(name, x + 2 * h, f2))
      d = (-3.0 * f0 + 4.0 * fp - f2) / (2.0 * h);
    else if (dn && value_at(name, x, f0) && value_at(name, x - 2 * h, f2))
      d = (3.0 * f0 - 4.0 * fm + f2) / (2.0 * h);
    rep.numeric.push_back(d);
    const double a = g.values[i];
    const double scale = std::max({std::abs(a), std::abs(d), kGradientFloor});
    const double e = std::isfinite(d) ? std::abs(a - d) / scale
                                      : std::numeric_limits<double>::infinity();
    rep.rel_error.push_back(e);
    rep.max_rel_error = std::max(rep.max_rel_error, e);
  }
  rep.pass = rep.max_rel_error < rep.tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Stationary solves

namespace {

double sigmoid(double a) { return 1.0 / (1.0 + std::exp(-a)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

double gamma_p_r2_partial(double c2) { return 0.25 * (c2 + std::sqrt(c2 * c2 + 4.0)); }

// Unknowns x in an unbounded space, their map to lifting parameters, and the
// residual components that must vanish.
struct Problem {
  std::vector<std::string> residual_names;
  std::function<LiftingParams(const Eigen::VectorXd&)> to_params;
  std::function<Eigen::VectorXd(const LiftingParams&)> from_params;
};

LiftingParams r2f_reduced(double p2, double q2, double g) {
  const ClosedForm cf = closed_form_params({p2}, {q2}, 2);
  return LiftingParams::r2_full(p2, q2, cf.c[0], g, cf.gamma_sq_p);
}

LiftingParams r3f_reduced(double p2, double p3, double q2, double q3, double g) {
  const ClosedForm cf = closed_form_params({p2, p3}, {q2, q3}, 3);
  return LiftingParams::r3_full(p2, p3, q2, q3, cf.c[0], cf.c[1], g, cf.gamma_sq_p);
}

// Closed-form inputs outside their range surface as OutOfDomain for the solver.
template <class F> LiftingParams guarded(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw OutOfDomain(e.what());
  }
}

Problem make_problem(Level level, bool full) {
  Problem pb;
  using V = Eigen::VectorXd;
  if (level == Level::r2p && !full) {
    pb.residual_names = {"c2", "gamma_sq"};
    pb.to_params = [](const V& x) {
      const double c2 = std::exp(x(0));
      return LiftingParams::r2_partial(c2, std::exp(x(1)), gamma_p_r2_partial(c2));
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(2);
      x << std::log(lp.c2()), std::log(lp.gamma_sq);
      return x;
    };
  } else if (level == Level::r2p) {
    pb.residual_names = {"c2", "gamma_sq_p", "gamma_sq"};
    pb.to_params = [](const V& x) {
      return LiftingParams::r2_partial(std::exp(x(0)), std::exp(x(1)), std::exp(x(2)));
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(3);
      x << std::log(lp.c2()), std::log(lp.gamma_sq), std::log(lp.gamma_sq_p);
      return x;
    };
  } else if (level == Level::r2f && !full) {
    pb.residual_names = {"p2", "c2", "gamma_sq"};
    pb.to_params = [](const V& x) {
      const double p2 = sigmoid(x(0));
      return guarded([&] { return r2f_reduced(p2, p2 * sigmoid(x(1)), std::exp(x(2))); });
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(3);
      x << logit(lp.p2()), logit(lp.q2() / lp.p2()), std::log(lp.gamma_sq);
      return x;
    };
  } else if (level == Level::r2f) {
    pb.residual_names = {"q2", "p2", "c2", "gamma_sq_p", "gamma_sq"};
    pb.to_params = [](const V& x) {
      return LiftingParams::r2_full(sigmoid(x(0)), sigmoid(x(1)), std::exp(x(2)),
                                    std::exp(x(3)), std::exp(x(4)));
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(5);
      x << logit(lp.p2()), logit(lp.q2()), std::log(lp.c2()), std::log(lp.gamma_sq),
          std::log(lp.gamma_sq_p);
      return x;
    };
  } else if (level == Level::r3f && !full) {
    // q3 = q2 (p3/p2) s keeps q3/p3 < q2/p2, which is c3 > 0.
    pb.residual_names = {"p3", "p2", "c3", "c2", "gamma_sq"};
    pb.to_params = [](const V& x) {
      const double p2 = sigmoid(x(0));
      const double p3 = p2 * sigmoid(x(1));
      const double q2 = sigmoid(x(2));
      const double q3 = q2 * (p3 / p2) * sigmoid(x(3));
      return guarded([&] { return r3f_reduced(p2, p3, q2, q3, std::exp(x(4))); });
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(5);
      x << logit(lp.p2()), logit(lp.p3() / lp.p2()), logit(lp.q2()),
          logit(lp.q3() * lp.p2() / (lp.q2() * lp.p3())), std::log(lp.gamma_sq);
      return x;
    };
  } else if (level == Level::r3f) {
    pb.residual_names = {"q3", "q2", "p3", "p2", "c3", "c2", "gamma_sq_p", "gamma_sq"};
    pb.to_params = [](const V& x) {
      const double p2 = sigmoid(x(0));
      const double q2 = sigmoid(x(2));
      return LiftingParams::r3_full(p2, p2 * sigmoid(x(1)), q2, q2 * sigmoid(x(3)),
                                    std::exp(x(4)), std::exp(x(5)), std::exp(x(6)),
                                    std::exp(x(7)));
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(8);
      x << logit(lp.p2()), logit(lp.p3() / lp.p2()), logit(lp.q2()), logit(lp.q3() / lp.q2()),
          std::log(lp.c2()), std::log(lp.c3()), std::log(lp.gamma_sq), std::log(lp.gamma_sq_p);
      return x;
    };
  } else {
    throw std::invalid_argument("no stationarity problem for level 1");
  }
  return pb;
}

// c held fixed at the values of `base`.
Problem make_fixed_c_problem(const LiftingParams& base) {
  Problem pb;
  using V = Eigen::VectorXd;
  if (base.level == 2) {
    const double c2 = base.c2();
    pb.residual_names = {"q2", "p2", "gamma_sq_p", "gamma_sq"};
    pb.to_params = [c2](const V& x) {
      return LiftingParams::r2_full(sigmoid(x(0)), sigmoid(x(1)), c2, std::exp(x(2)),
                                    std::exp(x(3)));
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(4);
      x << logit(lp.p2()), logit(lp.q2()), std::log(lp.gamma_sq), std::log(lp.gamma_sq_p);
      return x;
    };
  } else {
    const double c2 = base.c2(), c3 = base.c3();
    pb.residual_names = {"q3", "q2", "p3", "p2", "gamma_sq_p", "gamma_sq"};
    pb.to_params = [c2, c3](const V& x) {
      const double p2 = sigmoid(x(0));
      const double q2 = sigmoid(x(2));
      return LiftingParams::r3_full(p2, p2 * sigmoid(x(1)), q2, q2 * sigmoid(x(3)), c2, c3,
                                    std::exp(x(4)), std::exp(x(5)));
    };
    pb.from_params = [](const LiftingParams& lp) {
      V x(6);
      x << logit(lp.p2()), logit(lp.p3() / lp.p2()), logit(lp.q2()), logit(lp.q3() / lp.q2()),
          std::log(lp.gamma_sq), std::log(lp.gamma_sq_p);
      return x;
    };
  }
  return pb;
}

struct Evaluator {
  const ModelPoint& mp;
  const Quadrature& quad;
  const Problem& pb;

  // Residual at x, or nothing when x maps outside the domain.
  std::optional<Eigen::VectorXd> operator()(const Eigen::VectorXd& x) const {
    try {
      const LiftingParams lp = pb.to_params(x);
      const ResidualVector g = gradient(mp, lp, quad);
      Eigen::VectorXd f(pb.residual_names.size());
      for (std::size_t i = 0; i < pb.residual_names.size(); ++i)
        f(static_cast<Eigen::Index>(i)) = g.at(pb.residual_names[i]);
      if (!f.allFinite())
        return std::nullopt;
      return f;
    } catch (const OutOfDomain&) {
      return std::nullopt;
    }
  }
};

struct NewtonResult {
  Eigen::VectorXd x;
  double norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

// Damped Newton with a central-difference Jacobian, step capping in the
// unbounded coordinates and backtracking on ||F||_2 and on domain rejection.
NewtonResult newton(const Evaluator& F, Eigen::VectorXd x, const SolverConfig& cfg) {
  constexpr double kMaxStep = 2.0;
  constexpr std::size_t kStallWindow = 30;
  std::vector<double> history;
  NewtonResult res;
  auto f0 = F(x);
  if (!f0)
    throw OutOfDomain("initial point outside the domain");
  Eigen::VectorXd f = *f0;
  const Eigen::Index n = x.size();
  res.x = x;
  res.norm = f.lpNorm<Eigen::Infinity>();
  for (int it = 0; it < cfg.max_iter; ++it) {
    res.iterations = it;
    if (res.norm < cfg.residual_tol) {
      res.converged = true;
      return res;
    }
    Eigen::MatrixXd J(f.size(), n);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double h = cfg.jacobian_step * std::max(1.0, std::abs(x(k)));
      Eigen::VectorXd xp = x, xm = x;
      xp(k) += h;
      xm(k) -= h;
      const auto fp = F(xp);
      const auto fm = F(xm);
      if (fp && fm)
        J.col(k) = (*fp - *fm) / (2.0 * h);
      else if (fp)
        J.col(k) = (*fp - f) / h;
      else if (fm)
        J.col(k) = (f - *fm) / h;
      else
        throw OutOfDomain("Jacobian stencil left the domain");
    }
    Eigen::VectorXd dx = J.colPivHouseholderQr().solve(-f);
    if (!dx.allFinite())
      break;
    const double big = dx.lpNorm<Eigen::Infinity>();
    if (big > kMaxStep)
      dx *= kMaxStep / big;

    const double fn = f.norm();
    bool accepted = false;
    for (double t = cfg.damping; t > 1e-10; t *= 0.5) {
      const Eigen::VectorXd xt = x + t * dx;
      const auto ft = F(xt);
      if (ft && ft->norm() < (1.0 - 1e-4 * t) * fn) {
        x = xt;
        f = *ft;
        accepted = true;
        break;
      }
    }
    if (!accepted)
      break;
    res.x = x;
    res.norm = f.lpNorm<Eigen::Infinity>();
    // Give up on starts that stop making progress.
    history.push_back(res.norm);
    if (history.size() > kStallWindow &&
        res.norm > 0.5 * history[history.size() - 1 - kStallWindow])
      break;
  }
  res.converged = res.norm < cfg.residual_tol;
  return res;
}

// Root of d psi / d gamma_sq in log gamma_sq with the other parameters built by
// `make(gamma_sq)`; returns NaN when no sign change is found.
double solve_gamma(const std::function<LiftingParams(double)>& make, const ModelPoint& mp,
                   const Quadrature& quad, int bits = 40) {
  auto f = [&](double lg) {
    return gradient(mp, make(std::exp(lg)), quad).at("gamma_sq");
  };
  double lo = std::log(1e-3), hi = std::log(10.0);
  double flo = f(lo), fhi = f(hi);
  for (int i = 0; i < 12 && flo > 0.0; ++i) {
    hi = lo;
    fhi = flo;
    lo -= std::log(10.0);
    flo = f(lo);
  }
  for (int i = 0; i < 12 && fhi < 0.0; ++i) {
    lo = hi;
    flo = fhi;
    hi += std::log(10.0);
    fhi = f(hi);
  }
  if (!(flo <= 0.0 && fhi >= 0.0))
    return std::numeric_limits<double>::quiet_NaN();
  std::uintmax_t iters = 60;
  const auto r = boost::math::tools::toms748_solve(
      f, lo, hi, flo, fhi, boost::math::tools::eps_tolerance<double>(bits), iters);
  return std::exp(0.5 * (r.first + r.second));
}

StationaryPoint finish(const ModelPoint& mp, Level level, const LiftingParams& lp,
                       const Quadrature& quad, int iterations) {
  StationaryPoint sp;
  sp.level = level;
  sp.params = lp;
  sp.residual = gradient(mp, lp, quad);
  sp.psi = psi(mp, lp, quad.inner, quad.outer);
  sp.iterations = iterations;
  return sp;
}

bool same_point(const LiftingParams& a, const LiftingParams& b) {
  auto close = [](double x, double y) { return std::abs(x - y) <= 1e-5 * std::max(1.0, std::abs(x)); };
  for (std::size_t i = 0; i < a.p.size(); ++i)
    if (!close(a.p[i], b.p[i]) || !close(a.q[i], b.q[i]) || !close(a.c[i], b.c[i]))
      return false;
  return close(a.gamma_sq, b.gamma_sq);
}

// Newton from each start; the converged point with the largest psi wins.
StationaryPoint best_of(const ModelPoint& mp, Level level, const std::vector<LiftingParams>& starts,
                        const SolverConfig& cfg, const Quadrature& quad) {
  const Problem pb = make_problem(level, cfg.full_system);
  const Evaluator F{mp, quad, pb};
  std::vector<StationaryPoint> found;
  double best_norm = std::numeric_limits<double>::infinity();
  for (const LiftingParams& s : starts) {
    NewtonResult nr;
    try {
      nr = newton(F, pb.from_params(s), cfg);
    } catch (const OutOfDomain&) {
      continue;
    }
    best_norm = std::min(best_norm, nr.norm);
    if (!nr.converged)
      continue;
    const LiftingParams lp = pb.to_params(nr.x);
    if (std::none_of(found.begin(), found.end(),
                     [&](const StationaryPoint& s2) { return same_point(s2.params, lp); }))
      found.push_back(finish(mp, level, lp, quad, nr.iterations));
  }
  if (found.empty())
    throw ConvergenceFailure("level " + to_string(level) + " stationarity solve did not converge at alpha=" +
                                 std::to_string(mp.alpha) + " kappa=" + std::to_string(mp.kappa),
                             best_norm);
  auto it = std::max_element(found.begin(), found.end(),
                             [](const auto& a, const auto& b) { return a.psi < b.psi; });
  StationaryPoint sp = *it;
  sp.distinct_solutions = static_cast<int>(found.size());
  return sp;
}

struct Candidate {
  LiftingParams lp;
  double score;
};

std::vector<LiftingParams> take_best(std::vector<Candidate> cands, std::size_t k) {
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& a, const Candidate& b) { return a.score < b.score; });
  std::vector<LiftingParams> out;
  for (std::size_t i = 0; i < cands.size() && i < k; ++i)
    out.push_back(cands[i].lp);
  return out;
}

// Scan over (p2, q2/p2) with gamma_sq at its 1-D stationary value. Cells whose
// corners see both signs of d/dp2 and of d/dc2 bracket a root and are tried
// first; the smallest normalized residuals fill the remaining slots.
std::vector<LiftingParams> scan_r2f(const ModelPoint& mp, const Quadrature& quad) {
  const std::vector<double> ps = {0.02, 0.05, 0.1, 0.15, 0.2, 0.27, 0.34, 0.41, 0.48,
                                  0.55, 0.62, 0.69, 0.76, 0.82, 0.87, 0.91, 0.94, 0.97};
  const std::vector<double> rs = {0.01, 0.03, 0.06, 0.1, 0.15, 0.22, 0.3, 0.4,
                                  0.5, 0.6, 0.7, 0.78, 0.85, 0.92};
  const std::size_t np = ps.size(), nr = rs.size();
  std::vector<std::optional<LiftingParams>> lp(np * nr);
  std::vector<double> dp(np * nr, 0.0), dc(np * nr, 0.0);
  double sp = 0.0, sc = 0.0;
  for (std::size_t i = 0; i < np; ++i) {
    for (std::size_t j = 0; j < nr; ++j) {
      const double p2 = ps[i], q2 = p2 * rs[j];
      try {
        auto make = [&](double g) { return r2f_reduced(p2, q2, g); };
        const double g = solve_gamma(make, mp, quad, 16);
        if (!std::isfinite(g))
          continue;
        const std::size_t k = i * nr + j;
        lp[k] = make(g);
        const ResidualVector r = grad_r2_full(mp, *lp[k], quad.outer);
        dp[k] = r.at("p2");
        dc[k] = r.at("c2");
        sp = std::max(sp, std::abs(dp[k]));
        sc = std::max(sc, std::abs(dc[k]));
      } catch (const OutOfDomain&) {
      } catch (const std::invalid_argument&) {
      }
    }
  }
  auto score = [&](std::size_t k) { return std::hypot(dp[k] / sp, dc[k] / sc); };

  std::vector<Candidate> bracketed, rest;
  for (std::size_t i = 0; i + 1 < np; ++i) {
    for (std::size_t j = 0; j + 1 < nr; ++j) {
      const std::size_t c[4] = {i * nr + j, i * nr + j + 1, (i + 1) * nr + j, (i + 1) * nr + j + 1};
      if (!lp[c[0]] || !lp[c[1]] || !lp[c[2]] || !lp[c[3]])
        continue;
      auto spans = [&](const std::vector<double>& v) {
        const auto [lo, hi] = std::minmax({v[c[0]], v[c[1]], v[c[2]], v[c[3]]});
        return lo <= 0.0 && hi >= 0.0;
      };
      if (!spans(dp) || !spans(dc))
        continue;
      const std::size_t best = *std::min_element(
          c, c + 4, [&](std::size_t a, std::size_t b) { return score(a) < score(b); });
      bracketed.push_back({*lp[best], score(best)});
    }
  }
  for (std::size_t k = 0; k < lp.size(); ++k)
    if (lp[k])
      rest.push_back({*lp[k], score(k)});
  std::vector<LiftingParams> out = take_best(bracketed, 6);
  for (const LiftingParams& l : take_best(rest, 8)) {
    if (out.size() >= 8)
      break;
    if (std::none_of(out.begin(), out.end(), [&](const LiftingParams& o) {
          return o.p2() == l.p2() && o.q2() == l.q2();
        }))
      out.push_back(l);
  }
  return out;
}

// The upper lifting level is inserted above the level-2 chain: (p3, q3) take the
// level-2 values and (p2, q2) are scanned between them and 1.
std::vector<LiftingParams> scan_r3f(const ModelPoint& mp, const LiftingParams& lower,
                                    const Quadrature& quad) {
  std::vector<Candidate> cands;
  const double p3 = lower.p2(), q3 = lower.q2();
  for (double tp : {0.5, 0.75, 0.9, 0.95, 0.98}) {
    for (double tq : {0.15, 0.3, 0.45, 0.6, 0.75}) {
      const double p2 = p3 + (1.0 - p3) * tp;
      const double q2 = q3 + (1.0 - q3) * tq;
      try {
        auto make = [&](double g) { return r3f_reduced(p2, p3, q2, q3, g); };
        const LiftingParams probe = make(1.0);
        if (!(probe.c3() > 0.0) || !(probe.c2() > 0.0))
          continue;
        const double g = solve_gamma(make, mp, quad, 16);
        if (!std::isfinite(g))
          continue;
        const LiftingParams lp = make(g);
        const ResidualVector r = grad_r3_full(mp, lp, quad.inner, quad.outer);
        const double s = std::sqrt(std::pow(r.at("p2"), 2) + std::pow(r.at("p3"), 2) +
                                   std::pow(r.at("c2"), 2) + std::pow(r.at("c3"), 2));
        cands.push_back({lp, s});
      } catch (const OutOfDomain&) {
      } catch (const std::invalid_argument&) {
      }
    }
  }
  return take_best(cands, 4);
}

LiftingParams degenerate_r2p(const ModelPoint& mp) {
  // Level-1 optimizers: gamma_sq_p = 1/2, gamma_sq = sqrt(alpha e)/2, c2 -> 0.
  return LiftingParams::r2_partial(0.0, 0.5 * std::sqrt(mp.alpha * e_max_sq(mp.kappa)), 0.5);
}

// Profile psi(c2) = psi_2p(c2, gamma*(c2), gamma_p(c2)) on a log grid; interior
// local maxima are refined and polished by Newton, then compared with the
// c2 -> 0 limit, which is the level-1 value.
StationaryPoint solve_r2p(const ModelPoint& mp, const SolverConfig& cfg, const Quadrature& quad) {
  auto make_at = [&](double c2) {
    return [c2](double g) { return LiftingParams::r2_partial(c2, g, gamma_p_r2_partial(c2)); };
  };
  auto profile = [&](double c2, LiftingParams& lp) {
    const double g = solve_gamma(make_at(c2), mp, quad);
    if (!std::isfinite(g))
      return std::numeric_limits<double>::quiet_NaN();
    lp = make_at(c2)(g);
    return grad_r2_partial(mp, lp).at("c2");
  };

  constexpr int kGrid = 48;
  std::vector<double> cs(kGrid), ds(kGrid);
  std::vector<LiftingParams> lps(kGrid);
  for (int k = 0; k < kGrid; ++k) {
    cs[k] = std::pow(10.0, -3.0 + 5.0 * k / (kGrid - 1));
    ds[k] = profile(cs[k], lps[k]);
  }
  std::vector<LiftingParams> starts;
  for (int k = 0; k + 1 < kGrid; ++k) {
    if (!(ds[k] > 0.0 && ds[k + 1] <= 0.0))
      continue;
    auto f = [&](double lc) {
      LiftingParams tmp;
      return profile(std::exp(lc), tmp);
    };
    std::uintmax_t iters = 80;
    const auto r = boost::math::tools::toms748_solve(
        f, std::log(cs[k]), std::log(cs[k + 1]), ds[k], ds[k + 1],
        boost::math::tools::eps_tolerance<double>(40), iters);
    LiftingParams lp;
    profile(std::exp(0.5 * (r.first + r.second)), lp);
    starts.push_back(lp);
  }

  const double psi1 = psi_r1(mp);
  StationaryPoint best;
  bool have = false;
  if (!starts.empty()) {
    try {
      best = best_of(mp, Level::r2p, starts, cfg, quad);
      have = best.psi > psi1 + 1e-12;
    } catch (const ConvergenceFailure&) {
    }
  }
  if (!have) {
    best = StationaryPoint{};
    best.level = Level::r2p;
    best.params = degenerate_r2p(mp);
    best.psi = psi1;
    best.branch = Branch::degenerate_c2_zero;
    best.residual.names = {"c2", "gamma_sq_p", "gamma_sq"};
    best.residual.values = {0.0, 0.0, 0.0};
    best.distinct_solutions = static_cast<int>(starts.size());
  }
  return best;
}

} // namespace

StationaryPoint solve_stationary(const ModelPoint& mp, Level level, const SolverConfig& cfg) {
  return solve_stationary(mp, level, cfg, Quadrature(cfg));
}

StationaryPoint solve_stationary(const ModelPoint& mp, Level level, const SolverConfig& cfg,
                                 const Quadrature& quad) {
  if (!(mp.alpha > 0.0) || !std::isfinite(mp.kappa))
    throw std::invalid_argument("model point needs alpha > 0 and finite kappa");
  if (level == Level::r1) {
    StationaryPoint sp;
    sp.level = level;
    sp.params = LiftingParams::level1();
    sp.params.gamma_sq = 0.5 * std::sqrt(mp.alpha * e_max_sq(mp.kappa));
    sp.psi = psi_r1(mp);
    return sp;
  }
  if (level == Level::r2p)
    return solve_r2p(mp, cfg, quad);

  const int r = level == Level::r2f ? 2 : 3;
  const auto& ws = cfg.warm_start;
  if (ws && ws->level == r && ws->full) {
    try {
      return best_of(mp, level, {*ws}, cfg, quad);
    } catch (const ConvergenceFailure&) {
    } catch (const OutOfDomain&) {
    }
  }
  if (level == Level::r2f)
    return best_of(mp, level, scan_r2f(mp, quad), cfg, quad);

  LiftingParams lower;
  if (ws && ws->level == 2 && ws->full) {
    lower = *ws;
  } else {
    SolverConfig lower_cfg = cfg;
    lower_cfg.warm_start.reset();
    lower = solve_stationary(mp, Level::r2f, lower_cfg, quad).params;
  }
  return best_of(mp, level, scan_r3f(mp, lower, quad), cfg, quad);
}

StationaryPoint solve_fixed_c(const ModelPoint& mp, const LiftingParams& start,
                              const SolverConfig& cfg, const Quadrature& quad) {
  const Problem pb = make_fixed_c_problem(start);
  const Evaluator F{mp, quad, pb};
  const NewtonResult nr = newton(F, pb.from_params(start), cfg);
  if (!nr.converged)
    throw ConvergenceFailure("fixed-c stationarity solve did not converge", nr.norm);
  const Level level = start.level == 2 ? Level::r2f : Level::r3f;
  return finish(mp, level, pb.to_params(nr.x), quad, nr.iterations);
}

} // namespace nsp
