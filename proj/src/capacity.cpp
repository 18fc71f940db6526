#include "nsp/capacity.hpp"

#include "nsp/errors.hpp"

#include <boost/math/tools/roots.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <sstream>

namespace nsp {

namespace {

using Memo = std::map<Level, CapacityResult>;

// Explicit d psi / d alpha with the parameters frozen; by the envelope theorem
// this is the slope of g(alpha) = psi(stationary point at alpha).
double alpha_slope(double kappa, const StationaryPoint& sp, double alpha, const Quadrature& quad) {
  const double d = 1e-4 * alpha;
  if (sp.level == Level::r1 || sp.branch == Branch::degenerate_c2_zero)
    return (psi_r1({kappa, alpha + d}) - psi_r1({kappa, alpha - d})) / (2.0 * d);
  return (psi({kappa, alpha + d}, sp.params, quad.inner, quad.outer) -
          psi({kappa, alpha - d}, sp.params, quad.inner, quad.outer)) /
         (2.0 * d);
}

CapacityResult level1_result(double kappa, const SolverConfig& cfg) {
  CapacityResult r;
  r.kappa = kappa;
  r.level = Level::r1;
  r.alpha_c = 1.0 / e_max_sq(kappa);
  r.params = LiftingParams::level1();
  r.params.gamma_sq = 0.5 * std::sqrt(r.alpha_c * e_max_sq(kappa));
  r.psi_residual = psi_r1({kappa, r.alpha_c});
  r.diagnostics.quad_order_inner = cfg.quad_order_inner;
  r.diagnostics.quad_order_outer = cfg.quad_order_outer;
  return r;
}

CapacityResult solve_level(double kappa, Level level, const SolverConfig& cfg,
                           const Quadrature& quad, WarmStarts& warm, Memo& memo);

CapacityResult lower_level(double kappa, Level level, const SolverConfig& cfg,
                           const Quadrature& quad, WarmStarts& warm, Memo& memo) {
  auto it = memo.find(level);
  if (it != memo.end())
    return it->second;
  CapacityResult r = solve_level(kappa, level, cfg, quad, warm, memo);
  memo[level] = r;
  return r;
}

CapacityResult solve_level(double kappa, Level level, const SolverConfig& cfg,
                           const Quadrature& quad, WarmStarts& warm, Memo& memo) {
  if (level == Level::r1)
    return level1_result(kappa, cfg);

  // Each lifting level lowers the capacity, so the level below bounds the root
  // from above; the lower end is found by stepping down geometrically.
  double hi = 0.0, step = 0.0;
  std::optional<LiftingParams> initial;
  if (level == Level::r2p) {
    hi = level1_result(kappa, cfg).alpha_c;
    step = 0.05;
  } else if (level == Level::r2f) {
    hi = lower_level(kappa, Level::r2p, cfg, quad, warm, memo).alpha_c;
    step = 0.01;
    initial = warm.r2f;
  } else {
    const CapacityResult r2 = lower_level(kappa, Level::r2f, cfg, quad, warm, memo);
    hi = r2.alpha_c;
    step = 0.002;
    initial = warm.r3f ? warm.r3f : std::optional<LiftingParams>(r2.params);
  }

  CapacityResult res;
  res.kappa = kappa;
  res.level = level;
  res.diagnostics.quad_order_inner = cfg.quad_order_inner;
  res.diagnostics.quad_order_outer = cfg.quad_order_outer;

  std::vector<std::pair<double, StationaryPoint>> evals;
  auto solve_at = [&](double alpha) -> const StationaryPoint& {
    SolverConfig c = cfg;
    c.warm_start = initial;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : evals) {
      const double d = std::abs(e.first - alpha);
      if (d < best && e.second.params.level == (level == Level::r3f ? 3 : 2)) {
        best = d;
        c.warm_start = e.second.params;
      }
    }
    try {
      evals.emplace_back(alpha, solve_stationary({kappa, alpha}, level, c, quad));
    } catch (const ConvergenceFailure& e) {
      throw ConvergenceFailure(std::string(e.what()) + " (capacity search, alpha=" +
                                   std::to_string(alpha) + ")",
                               e.best_residual);
    }
    ++res.diagnostics.stationary_solves;
    return evals.back().second;
  };

  StationaryPoint sp_hi = solve_at(hi);
  double g_hi = sp_hi.psi;
  if (level == Level::r2p && sp_hi.branch == Branch::degenerate_c2_zero) {
    res.alpha_c = hi;
    res.params = sp_hi.params;
    res.psi_residual = psi_r1({kappa, hi});
    res.branch = Branch::degenerate_c2_zero;
    res.diagnostics.bracket_lo = res.diagnostics.bracket_hi = hi;
    res.diagnostics.distinct_solutions = sp_hi.distinct_solutions;
    return res;
  }
  for (int k = 0; k < 10 && g_hi < 0.0; ++k) {
    hi *= 1.0 + step;
    sp_hi = solve_at(hi);
    g_hi = sp_hi.psi;
  }
  double lo = hi;
  StationaryPoint sp_lo = sp_hi;
  double g_lo = g_hi;
  for (int k = 0; g_lo >= 0.0; ++k) {
    const double factor = 1.0 - step * std::pow(2.0, k);
    if (factor < 0.05)
      break;
    hi = lo;
    sp_hi = sp_lo;
    g_hi = g_lo;
    lo = hi * factor;
    sp_lo = solve_at(lo);
    g_lo = sp_lo.psi;
  }
  if (!(g_lo < 0.0 && g_hi > 0.0)) {
    std::ostringstream os;
    os << "no sign change for level " << to_string(level) << " at kappa=" << kappa
       << ": g(" << lo << ")=" << g_lo << ", g(" << hi << ")=" << g_hi;
    throw BracketFailure(os.str());
  }
  if (!(alpha_slope(kappa, sp_lo, lo, quad) > 0.0) || !(alpha_slope(kappa, sp_hi, hi, quad) > 0.0))
    throw BracketFailure("psi is not increasing in alpha on the bracket at kappa=" +
                         std::to_string(kappa));
  res.diagnostics.bracket_lo = lo;
  res.diagnostics.bracket_hi = hi;

  auto g = [&](double alpha) { return solve_at(alpha).psi; };
  auto done = [&](double a, double b) { return std::abs(b - a) <= cfg.capacity_tol * a; };
  std::uintmax_t iters = 100;
  const auto root = boost::math::tools::toms748_solve(g, lo, hi, g_lo, g_hi, done, iters);
  res.diagnostics.root_iterations = static_cast<int>(iters);

  const double alpha = 0.5 * (root.first + root.second);
  const StationaryPoint& sp = solve_at(alpha);
  res.alpha_c = alpha;
  res.params = sp.params;
  res.psi_residual = sp.psi;
  res.residual_norm = sp.residual.max_abs();
  res.branch = sp.branch;
  res.diagnostics.distinct_solutions = sp.distinct_solutions;
  if (level == Level::r2f)
    warm.r2f = sp.params;
  if (level == Level::r3f)
    warm.r3f = sp.params;
  return res;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

} // namespace

CapacityResult alpha_c(double kappa, Level level, const SolverConfig& cfg, WarmStarts* warm) {
  const auto t0 = std::chrono::steady_clock::now();
  WarmStarts local;
  Memo memo;
  const Quadrature quad(cfg);
  CapacityResult r = solve_level(kappa, level, cfg, quad, warm ? *warm : local, memo);
  r.diagnostics.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<CapacityResult> sweep(const std::vector<double>& kappas,
                                  const std::vector<Level>& levels, const SolverConfig& cfg,
                                  bool parallel) {
  for (std::size_t i = 1; i < kappas.size(); ++i)
    if (kappas[i] < kappas[i - 1])
      throw std::invalid_argument("sweep: kappas must be sorted");
  const std::size_t n = kappas.size() * levels.size();
  std::vector<CapacityResult> out(n);
  const Quadrature quad(cfg);

  auto run = [&](std::size_t idx, WarmStarts& warm, Memo& memo) {
    const double kappa = kappas[idx / levels.size()];
    const Level level = levels[idx % levels.size()];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto it = memo.find(level);
      out[idx] = it != memo.end() ? it->second : solve_level(kappa, level, cfg, quad, warm, memo);
      memo[level] = out[idx];
    } catch (const std::exception& e) {
      out[idx] = CapacityResult{};
      out[idx].kappa = kappa;
      out[idx].level = level;
      out[idx].ok = false;
      out[idx].error = e.what();
    }
    out[idx].diagnostics.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (std::size_t idx = 0; idx < n; ++idx) {
      WarmStarts warm;
      Memo memo;
      run(idx, warm, memo);
    }
  } else {
    WarmStarts warm;
    for (std::size_t k = 0; k < kappas.size(); ++k) {
      Memo memo;
      for (std::size_t l = 0; l < levels.size(); ++l)
        run(k * levels.size() + l, warm, memo);
    }
  }
  return out;
}

std::string csv_header() {
  return "kappa,level,alpha_c,p2,p3,q2,q3,c2,c3,gamma_sq,gamma_sq_p,psi_residual,branch";
}

std::string csv_row(const CapacityResult& r) {
  std::ostringstream os;
  os << num(r.kappa) << ',' << to_string(r.level) << ',';
  if (!r.ok) {
    os << ",,,,,,,,,,failed";
    return os.str();
  }
  const LiftingParams& lp = r.params;
  auto opt = [&](bool present, double v) { return present ? num(v) : std::string(); };
  const bool l2 = lp.level >= 2, l3 = lp.level >= 3;
  os << num(r.alpha_c) << ',' << opt(l2, lp.p2()) << ',' << opt(l3, lp.p3()) << ','
     << opt(l2, lp.q2()) << ',' << opt(l3, lp.q3()) << ',' << opt(l2, lp.c2()) << ','
     << opt(l3, lp.c3()) << ',' << num(lp.gamma_sq) << ',' << num(lp.gamma_sq_p) << ','
     << num(r.psi_residual) << ',' << to_string(r.branch);
  return os.str();
}

void write_csv(std::ostream& os, const std::vector<CapacityResult>& rows) {
  os << csv_header() << '\n';
  for (const auto& r : rows)
    os << csv_row(r) << '\n';
}

ModuloMReport modulo_m_check(const CapacityResult& root, const SolverConfig& cfg,
                             double grid_radius, int grid_points) {
  if (root.level != Level::r2f && root.level != Level::r3f)
    throw std::invalid_argument("modulo_m_check: levels 2f and 3f only");
  if (grid_points < 1 || grid_radius < 0.0)
    throw std::invalid_argument("modulo_m_check: need grid_points >= 1 and radius >= 0");
  const Quadrature quad(cfg);
  const ModelPoint mp{root.kappa, root.alpha_c};
  ModuloMReport rep;
  rep.kappa = root.kappa;
  rep.level = root.level;
  rep.psi_hat = psi(mp, root.params, quad.inner, quad.outer);
  rep.max_excess = -std::numeric_limits<double>::infinity();

  std::vector<double> offsets;
  for (int k = 0; k < grid_points; ++k)
    offsets.push_back(grid_points == 1 ? 0.0 : -1.0 + 2.0 * k / (grid_points - 1));
  std::vector<std::vector<double>> grid;
  const std::vector<double>& c_hat = root.params.c;
  if (c_hat.size() == 1) {
    for (double t : offsets)
      grid.push_back({c_hat[0] * (1.0 + grid_radius * t)});
  } else {
    for (double t2 : offsets)
      for (double t3 : offsets)
        grid.push_back({c_hat[0] * (1.0 + grid_radius * t2), c_hat[1] * (1.0 + grid_radius * t3)});
  }

  for (const auto& c : grid) {
    ModuloMPoint pt;
    pt.c = c;
    try {
      // Walk from c_hat to c in small steps, re-solving at each.
      constexpr int kSteps = 4;
      LiftingParams cur = root.params;
      StationaryPoint sp;
      for (int k = 1; k <= kSteps; ++k) {
        for (std::size_t i = 0; i < c.size(); ++i)
          cur.c[i] = c_hat[i] + (c[i] - c_hat[i]) * k / kSteps;
        sp = solve_fixed_c(mp, cur, cfg, quad);
        cur = sp.params;
      }
      pt.psi = sp.psi;
      pt.evaluated = true;
      ++rep.evaluated;
      rep.max_excess = std::max(rep.max_excess, pt.psi - rep.psi_hat);
    } catch (const OutOfDomain&) {
      ++rep.skipped;
    } catch (const ConvergenceFailure&) {
      ++rep.skipped;
    }
    rep.points.push_back(pt);
  }
  rep.pass = rep.evaluated > 0 && rep.max_excess <= 1e-8;
  return rep;
}

ModuloMReport modulo_m_check(double kappa, Level level, const SolverConfig& cfg,
                             double grid_radius, int grid_points) {
  return modulo_m_check(alpha_c(kappa, level, cfg), cfg, grid_radius, grid_points);
}

OrderingReport ordering_audit(double kappa, const SolverConfig& cfg) {
  OrderingReport rep;
  rep.kappa = kappa;
  const Quadrature quad(cfg);
  WarmStarts warm;
  Memo memo;
  for (Level l : {Level::r1, Level::r2p, Level::r2f, Level::r3f}) {
    CapacityResult r = lower_level(kappa, l, cfg, quad, warm, memo);
    rep.results.push_back(r);
  }
  rep.ordered = true;
  for (std::size_t i = 1; i < rep.results.size(); ++i) {
    const double a = rep.results[i - 1].alpha_c, b = rep.results[i].alpha_c;
    rep.improvement.push_back((a - b) / a);
    if (b > a * (1.0 + 1e-6))
      rep.ordered = false;
  }
  return rep;
}

double estimate_kappa_c(const SolverConfig& cfg, double lo, double hi, double tol) {
  const Quadrature quad(cfg);
  auto interior = [&](double kappa) {
    const double a1 = 1.0 / e_max_sq(kappa);
    return solve_stationary({kappa, a1}, Level::r2p, cfg, quad).branch == Branch::interior;
  };
  if (!interior(lo) || interior(hi))
    throw BracketFailure("estimate_kappa_c: branch change not bracketed");
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    (interior(mid) ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

} // namespace nsp
