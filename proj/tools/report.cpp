#include "report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace nsp::cli {

using nlohmann::json;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g10(double v) { return fmt("%.10g", v); }

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

json to_json(const LiftingParams& lp) {
  return {{"level", lp.level},       {"full", lp.full},
          {"p", lp.p},               {"q", lp.q},
          {"c", lp.c},               {"gamma_sq", lp.gamma_sq},
          {"gamma_sq_p", lp.gamma_sq_p}};
}

json to_json(const CapacityResult& r) {
  json j{{"kappa", r.kappa}, {"level", to_string(r.level)}, {"ok", r.ok}};
  if (!r.ok) {
    j["error"] = r.error;
    return j;
  }
  const auto& d = r.diagnostics;
  j["alpha_c"] = r.alpha_c;
  j["params"] = to_json(r.params);
  j["residual_norm"] = r.residual_norm;
  j["psi_residual"] = r.psi_residual;
  j["branch"] = to_string(r.branch);
  j["diagnostics"] = {{"root_iterations", d.root_iterations},
                      {"stationary_solves", d.stationary_solves},
                      {"distinct_solutions", d.distinct_solutions},
                      {"quad_order_inner", d.quad_order_inner},
                      {"quad_order_outer", d.quad_order_outer},
                      {"bracket", {d.bracket_lo, d.bracket_hi}},
                      {"seconds", d.seconds}};
  return j;
}

json to_json(const GradientCheck& g) {
  json comps = json::array();
  for (std::size_t i = 0; i < g.names.size(); ++i)
    comps.push_back({{"name", g.names[i]},
                     {"analytic", g.analytic[i]},
                     {"numeric", finite_or_null(g.numeric[i])},
                     {"rel_error", finite_or_null(g.rel_error[i])}});
  return {{"components", comps},
          {"max_rel_error", finite_or_null(g.max_rel_error)},
          {"tolerance", g.tolerance},
          {"pass", g.pass}};
}

json to_json(const ModuloMReport& m) {
  json pts = json::array();
  for (const auto& p : m.points)
    pts.push_back({{"c", p.c},
                   {"psi", p.evaluated ? json(p.psi) : json(nullptr)},
                   {"evaluated", p.evaluated}});
  return {{"kappa", m.kappa},         {"level", to_string(m.level)}, {"psi_hat", m.psi_hat},
          {"max_excess", finite_or_null(m.max_excess)},
          {"evaluated", m.evaluated}, {"skipped", m.skipped},        {"pass", m.pass},
          {"points", pts}};
}

json to_json(const OrderingReport& o) {
  json res = json::array();
  for (const auto& r : o.results)
    res.push_back(to_json(r));
  return {{"kappa", o.kappa}, {"results", res}, {"improvement", o.improvement},
          {"ordered", o.ordered}};
}

json to_json(const McEstimate& e) {
  json j{{"mean", e.mean}, {"std_error", e.std_error}, {"samples", e.samples}, {"seed", e.seed}};
  if (e.inner_samples > 0)
    j["inner_samples"] = e.inner_samples;
  return j;
}

json to_json(const TransitionPoint& t) {
  return {{"alpha", t.alpha},
          {"fraction_positive", t.fraction_positive},
          {"mean_value", t.mean_value},
          {"trials", t.trials}};
}

json to_json(const CellResult& c) {
  return {{"table", c.cell.table},
          {"kappa", c.cell.kappa},
          {"level", to_string(c.cell.level)},
          {"quantity", c.cell.quantity},
          {"reference", c.cell.ref_value},
          {"computed", finite_or_null(c.computed)},
          {"rel_error", finite_or_null(c.rel_error)},
          {"rel_tol", c.cell.rel_tol},
          {"provenance", c.cell.provenance},
          {"pass", c.pass}};
}

std::string pretty(const LiftingParams& lp) {
  std::ostringstream os;
  if (lp.level >= 2) {
    os << "p2=" << g10(lp.p2()) << " q2=" << g10(lp.q2()) << " c2=" << g10(lp.c2()) << ' ';
    if (lp.level >= 3)
      os << "p3=" << g10(lp.p3()) << " q3=" << g10(lp.q3()) << " c3=" << g10(lp.c3()) << ' ';
  }
  os << "gamma_sq=" << g10(lp.gamma_sq) << " gamma_sq_p=" << g10(lp.gamma_sq_p);
  return os.str();
}

std::string pretty(const CapacityResult& r) {
  std::ostringstream os;
  os << "kappa        " << g10(r.kappa) << '\n' << "level        " << to_string(r.level) << '\n';
  if (!r.ok) {
    os << "status       failed: " << r.error << '\n';
    return os.str();
  }
  const auto& d = r.diagnostics;
  os << "alpha_c      " << g10(r.alpha_c) << '\n'
     << "branch       " << to_string(r.branch) << '\n'
     << "params       " << pretty(r.params) << '\n'
     << "residuals    max|dpsi| " << fmt("%.3e", r.residual_norm) << "  psi(alpha_c) "
     << fmt("%.3e", r.psi_residual) << '\n'
     << "diagnostics  root iterations " << d.root_iterations << ", stationary solves "
     << d.stationary_solves << ", distinct stationary points " << d.distinct_solutions
     << ", quadrature " << d.quad_order_inner << 'x' << d.quad_order_outer << ", bracket ["
     << g10(d.bracket_lo) << ", " << g10(d.bracket_hi) << "], " << fmt("%.2f", d.seconds)
     << " s\n";
  return os.str();
}

std::string pretty(const GradientCheck& g) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %21s %21s %10s\n", "param", "analytic", "numeric",
                "rel err");
  os << buf;
  for (std::size_t i = 0; i < g.names.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%-12s %21.13e %21.13e %10.2e\n", g.names[i].c_str(),
                  g.analytic[i], g.numeric[i], g.rel_error[i]);
    os << buf;
  }
  os << (g.pass ? "PASS" : "FAIL") << "  max rel error " << fmt("%.2e", g.max_rel_error)
     << " (tolerance " << fmt("%.0e", g.tolerance) << ")\n";
  return os.str();
}

std::string pretty(const ModuloMReport& m) {
  std::ostringstream os;
  os << "kappa " << g10(m.kappa) << " level " << to_string(m.level) << ": psi(c_hat) "
     << fmt("%.6e", m.psi_hat) << ", max excess " << fmt("%.3e", m.max_excess) << " over "
     << m.evaluated << " points (" << m.skipped << " skipped)  " << (m.pass ? "PASS" : "FAIL")
     << '\n';
  return os.str();
}

std::string pretty(const OrderingReport& o) {
  std::ostringstream os;
  os << "kappa " << g10(o.kappa) << '\n';
  for (std::size_t i = 0; i < o.results.size(); ++i) {
    const auto& r = o.results[i];
    char buf[64];
    std::snprintf(buf, sizeof buf, "  %-3s ", to_string(r.level).c_str());
    os << buf << (r.ok ? g10(r.alpha_c) : std::string("failed"));
    if (i > 0 && i - 1 < o.improvement.size())
      os << "  (relative drop " << fmt("%.3e", o.improvement[i - 1]) << ')';
    os << '\n';
  }
  os << (o.ordered ? "ordered" : "NOT ordered") << '\n';
  return os.str();
}

std::string pretty(const TableReport& t) {
  std::ostringstream os;
  os << "table " << t.table << '\n';
  os << "kappa   level quantity                      ref        computed    rel err   tol\n";
  for (const auto& c : t.cells) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-7g %-5s %-24s %10.6g %13.7g %10.2e %5.3g %s\n",
                  c.cell.kappa, to_string(c.cell.level).c_str(), c.cell.quantity.c_str(),
                  c.cell.ref_value, c.computed, c.rel_error, c.cell.rel_tol,
                  c.pass ? "ok" : "OUT OF TOLERANCE");
    os << buf;
  }
  for (const auto& s : t.solves)
    if (!s.ok)
      os << "solve failed at kappa " << g10(s.kappa) << " level " << to_string(s.level) << ": "
         << s.error << '\n';
  os << (t.pass ? "PASS" : "FAIL") << '\n';
  return os.str();
}

std::string csv(const TableReport& t) {
  std::ostringstream os;
  os << "table,kappa,level,quantity,ref_value,computed,rel_error,rel_tol,provenance,pass\n";
  for (const auto& c : t.cells)
    os << c.cell.table << ',' << g10(c.cell.kappa) << ',' << to_string(c.cell.level) << ','
       << c.cell.quantity << ',' << g10(c.cell.ref_value) << ',' << g10(c.computed) << ','
       << fmt("%.4e", c.rel_error) << ',' << g10(c.cell.rel_tol) << ',' << c.cell.provenance
       << ',' << (c.pass ? 1 : 0) << '\n';
  return os.str();
}

} // namespace nsp::cli
