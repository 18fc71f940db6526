#include "golden.hpp"
#include "report.hpp"

#include "nsp/capacity.hpp"
#include "nsp/errors.hpp"
#include "nsp/oracle.hpp"

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace nsp;
using namespace nsp::cli;
using nlohmann::json;

struct Globals {
  std::size_t quad_order_inner = 60;
  std::size_t quad_order_outer = 60;
  double residual_tol = 1e-9;
  double capacity_tol = 1e-6;
  std::uint64_t seed = 1;
  int threads = 0;
  std::string format;
  std::string output;
};

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

SolverConfig solver_config(const Globals& g) {
  SolverConfig cfg;
  cfg.quad_order_inner = g.quad_order_inner;
  cfg.quad_order_outer = g.quad_order_outer;
  cfg.residual_tol = g.residual_tol;
  cfg.capacity_tol = g.capacity_tol;
  return cfg;
}

void apply_threads(int threads) {
  if (const char* env = std::getenv("NSP_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw UsageError("NSP_THREADS must be a positive integer");
    threads = static_cast<int>(v);
  }
#ifdef _OPENMP
  if (threads > 0)
    omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

class Output {
public:
  Output(const Globals& g, const std::string& fallback)
      : format_(g.format.empty() ? fallback : g.format) {
    if (!g.output.empty()) {
      file_.open(g.output);
      if (!file_)
        throw UsageError("cannot open output file " + g.output);
    }
  }
  const std::string& format() const { return format_; }
  std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }
  void json_doc(const std::string& command, json body) {
    body["schema_version"] = kSchemaVersion;
    body["command"] = command;
    stream() << body.dump(2) << '\n';
  }

private:
  std::string format_;
  std::ofstream file_;
};

std::vector<double> parse_alphas(const std::string& spec) {
  std::vector<double> out;
  try {
    if (spec.find(':') != std::string::npos) {
      std::istringstream is(spec);
      std::string a, b, n;
      std::getline(is, a, ':');
      std::getline(is, b, ':');
      std::getline(is, n, ':');
      const double lo = std::stod(a), hi = std::stod(b);
      const int num = std::stoi(n);
      if (num < 1)
        throw UsageError("--alphas: count must be positive");
      for (int i = 0; i < num; ++i)
        out.push_back(num == 1 ? lo : lo + (hi - lo) * i / (num - 1));
    } else {
      std::istringstream is(spec);
      std::string f;
      while (std::getline(is, f, ','))
        out.push_back(std::stod(f));
    }
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception&) {
    throw UsageError("--alphas must be start:end:count or a comma list");
  }
  for (double a : out)
    if (!(a > 0.0))
      throw UsageError("--alphas must be positive");
  if (out.empty())
    throw UsageError("--alphas is empty");
  return out;
}

const std::vector<std::string> kLevels{"1", "2p", "2f", "3f"};
const std::vector<std::string> kFormats{"csv", "json", "pretty"};

// ---------------------------------------------------------------------------

int run_capacity(const Globals& g, double kappa, const std::string& level, bool full) {
  SolverConfig cfg = solver_config(g);
  cfg.full_system = full;
  Output out(g, "pretty");
  const CapacityResult r = alpha_c(kappa, parse_level(level), cfg);
  if (out.format() == "json")
    out.json_doc("capacity", {{"result", to_json(r)}});
  else if (out.format() == "csv")
    out.stream() << csv_header() << '\n' << csv_row(r) << '\n';
  else
    out.stream() << pretty(r);
  return 0;
}

int run_sweep(const Globals& g, double k0, double k1, int num,
              const std::vector<std::string>& levels, bool parallel) {
  if (num < 1)
    throw UsageError("--num must be positive");
  std::vector<double> kappas;
  const double lo = std::min(k0, k1), hi = std::max(k0, k1);
  for (int i = 0; i < num; ++i)
    kappas.push_back(num == 1 ? lo : lo + (hi - lo) * i / (num - 1));
  std::vector<Level> lv;
  for (const auto& l : levels)
    lv.push_back(parse_level(l));
  Output out(g, "csv");
  const auto rows = sweep(kappas, lv, solver_config(g), parallel);
  bool ok = true;
  for (const auto& r : rows)
    ok = ok && r.ok;
  if (out.format() == "json") {
    json arr = json::array();
    for (const auto& r : rows)
      arr.push_back(to_json(r));
    out.json_doc("sweep", {{"results", arr}});
  } else if (out.format() == "csv") {
    write_csv(out.stream(), rows);
  } else {
    for (const auto& r : rows)
      out.stream() << pretty(r) << '\n';
  }
  return ok ? 0 : 1;
}

int run_reproduce(const Globals& g, int table) {
  Output out(g, "pretty");
  const TableReport rep = reproduce_table(table, solver_config(g));
  if (out.format() == "json") {
    json cells = json::array();
    for (const auto& c : rep.cells)
      cells.push_back(to_json(c));
    json solves = json::array();
    for (const auto& s : rep.solves)
      solves.push_back(to_json(s));
    out.json_doc("reproduce",
                 {{"table", table}, {"cells", cells}, {"solves", solves}, {"pass", rep.pass}});
  } else if (out.format() == "csv") {
    out.stream() << csv(rep);
  } else {
    out.stream() << pretty(rep);
  }
  return rep.pass ? 0 : 1;
}

int run_check_gradients(const Globals& g, const std::string& level_s, double kappa,
                        std::optional<double> alpha, int random_points, double fd_step) {
  const Level level = parse_level(level_s);
  if (level == Level::r1)
    throw UsageError("gradient checks need level 2p, 2f or 3f");
  const SolverConfig cfg = solver_config(g);
  const Quadrature quad(cfg);
  Output out(g, "pretty");

  struct Point {
    std::string label;
    ModelPoint mp;
    LiftingParams lp;
  };
  std::vector<Point> points;
  double a = 0.0;
  if (alpha) {
    a = *alpha;
  } else {
    a = alpha_c(kappa, level, cfg).alpha_c;
  }
  const StationaryPoint sp = solve_stationary({kappa, a}, level, cfg, quad);
  points.push_back({"stationary", {kappa, a}, sp.params});
  std::mt19937_64 rng = make_stream(g.seed, 0);
  for (int i = 0; i < random_points; ++i)
    points.push_back({"random " + std::to_string(i + 1), {kappa, a}, random_params(level, rng)});

  bool pass = true;
  json arr = json::array();
  std::ostringstream text;
  for (const auto& p : points) {
    const GradientCheck gc = check_gradient(p.mp, p.lp, quad, fd_step);
    pass = pass && gc.pass;
    json j = to_json(gc);
    j["label"] = p.label;
    j["params"] = to_json(p.lp);
    arr.push_back(j);
    text << p.label << ": " << pretty(p.lp) << '\n' << pretty(gc) << '\n';
  }
  if (out.format() == "json") {
    out.json_doc("check gradients", {{"kappa", kappa},
                                     {"alpha", a},
                                     {"level", level_s},
                                     {"points", arr},
                                     {"pass", pass}});
  } else if (out.format() == "csv") {
    out.stream() << "label,param,analytic,numeric,rel_error,tolerance,pass\n";
    for (const auto& j : arr)
      for (const auto& c : j["components"])
        out.stream() << j["label"].get<std::string>() << ',' << c["name"].get<std::string>()
                     << ',' << c["analytic"] << ',' << c["numeric"] << ',' << c["rel_error"]
                     << ',' << j["tolerance"] << ',' << (j["pass"].get<bool>() ? 1 : 0) << '\n';
  } else {
    out.stream() << text.str() << (pass ? "PASS" : "FAIL") << '\n';
  }
  return pass ? 0 : 1;
}

int run_check_modulo_m(const Globals& g, double kappa, const std::string& level, double radius,
                       int points) {
  Output out(g, "pretty");
  const ModuloMReport rep = modulo_m_check(kappa, parse_level(level), solver_config(g), radius,
                                           points);
  if (out.format() == "json") {
    out.json_doc("check modulo-m", {{"report", to_json(rep)}});
  } else if (out.format() == "csv") {
    out.stream() << "kappa,level,psi_hat,max_excess,evaluated,skipped,pass\n"
                 << rep.kappa << ',' << to_string(rep.level) << ',' << rep.psi_hat << ','
                 << rep.max_excess << ',' << rep.evaluated << ',' << rep.skipped << ','
                 << (rep.pass ? 1 : 0) << '\n';
  } else {
    out.stream() << pretty(rep);
  }
  return rep.pass ? 0 : 1;
}

int run_check_ordering(const Globals& g, double kappa) {
  Output out(g, "pretty");
  const OrderingReport rep = ordering_audit(kappa, solver_config(g));
  if (out.format() == "json")
    out.json_doc("check ordering", {{"report", to_json(rep)}});
  else if (out.format() == "csv")
    write_csv(out.stream(), rep.results);
  else
    out.stream() << pretty(rep);
  return rep.ordered ? 0 : 1;
}

struct McFlags {
  std::string kind = "e_max_sq";
  double kappa = -1.5;
  std::size_t samples = 1000000;
  std::size_t inner_samples = 10000;
  std::optional<double> alpha;
  double B = 1.0;
  std::optional<double> C;
  double one_minus_p = 1.0;
};

int run_oracle_mc(const Globals& g, const McFlags& f) {
  const McKind kind = parse_mc_kind(f.kind);
  const SolverConfig cfg = solver_config(g);
  McParams p;
  p.kappa = f.kappa;
  p.inner_samples = f.inner_samples;
  const double C = f.C.value_or(f.kappa);
  p.si = {-C / std::sqrt(f.one_minus_p), f.B, C, f.one_minus_p};
  double alpha = 0.0;
  if (kind == McKind::inner_log_level2 || kind == McKind::nested_level3) {
    const Level level = kind == McKind::nested_level3 ? Level::r3f : Level::r2f;
    alpha = f.alpha ? *f.alpha : alpha_c(f.kappa, level, cfg).alpha_c;
    p.lp = solve_stationary({f.kappa, alpha}, level, cfg).params;
  }
  Output out(g, "pretty");
  const McEstimate e = mc_expectation(kind, p, f.samples, g.seed);
  const double quad = quadrature_expectation(kind, p, cfg.quad_order_inner, cfg.quad_order_outer);
  const double z = e.std_error > 0.0 ? (e.mean - quad) / e.std_error : 0.0;
  const bool agree = std::abs(z) <= 3.0 || e.mean == quad;
  if (out.format() == "json") {
    json body{{"kind", f.kind}, {"kappa", f.kappa}, {"estimate", to_json(e)},
              {"quadrature", quad}, {"z", z}, {"agree_3se", agree}};
    if (alpha > 0.0) {
      body["alpha"] = alpha;
      body["params"] = to_json(p.lp);
    }
    out.json_doc("oracle mc", body);
  } else if (out.format() == "csv") {
    out.stream() << "kind,kappa,mean,std_error,samples,inner_samples,seed,quadrature,z\n"
                 << f.kind << ',' << f.kappa << ',' << e.mean << ',' << e.std_error << ','
                 << e.samples << ',' << e.inner_samples << ',' << e.seed << ',' << quad << ','
                 << z << '\n';
  } else {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%s kappa=%g: MC %.8g +- %.3g (%zu samples%s), quadrature %.8g, z=%.2f %s\n",
                  f.kind.c_str(), f.kappa, e.mean, e.std_error, e.samples,
                  e.inner_samples ? (", inner " + std::to_string(e.inner_samples)).c_str() : "",
                  quad, z, agree ? "(within 3 s.e.)" : "(outside 3 s.e.)");
    out.stream() << buf;
  }
  return 0;
}

int run_oracle_transition(const Globals& g, double kappa, int n, const std::string& alphas_s,
                          int trials, int restarts, double threshold) {
  const std::vector<double> alphas = parse_alphas(alphas_s);
  Output out(g, "csv");
  const auto pts = transition_scan(kappa, alphas, n, trials, g.seed, restarts, threshold);
  if (out.format() == "json") {
    json arr = json::array();
    for (const auto& t : pts)
      arr.push_back(to_json(t));
    out.json_doc("oracle transition", {{"kappa", kappa},
                                       {"n", n},
                                       {"threshold", threshold},
                                       {"restarts", restarts},
                                       {"results", arr}});
  } else if (out.format() == "csv") {
    out.stream() << "alpha,fraction_positive,mean_value,trials\n";
    for (const auto& t : pts)
      out.stream() << t.alpha << ',' << t.fraction_positive << ',' << t.mean_value << ','
                   << t.trials << '\n';
  } else {
    for (const auto& t : pts) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "alpha %-8g positive %5.1f%%  mean %.4g\n", t.alpha,
                    100.0 * t.fraction_positive, t.mean_value);
      out.stream() << buf;
    }
  }
  return 0;
}

int run_oracle_ground_state(const Globals& g, double kappa, double alpha, int n, int restarts,
                            int instances) {
  Output out(g, "pretty");
  json arr = json::array();
  std::ostringstream text, rows;
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t inst_seed = make_stream(g.seed, 2 * static_cast<std::uint64_t>(i))();
    const std::uint64_t start_seed = make_stream(g.seed, 2 * static_cast<std::uint64_t>(i) + 1)();
    const FiniteNInstance inst = FiniteNInstance::make(n, alpha, kappa, inst_seed);
    const Eigen::MatrixXd G = inst.G();
    const DescentResult d = sphere_descent(G, kappa, restarts, start_seed);
    json j{{"instance", i}, {"n", inst.n}, {"m", inst.m}, {"value", d.value}};
    char buf[160];
    std::snprintf(buf, sizeof buf, "instance %d (m=%d): descent %.10g", i, inst.m, d.value);
    text << buf;
    rows << i << ',' << inst.n << ',' << inst.m << ',' << d.value << ',';
    if (kappa >= 0.0) {
      const DescentResult b = ball_ground_state(G, kappa);
      j["convex"] = b.value;
      j["convex_norm"] = b.x.norm();
      std::snprintf(buf, sizeof buf, ", convex %.10g (|x|=%.6f)", b.value, b.x.norm());
      text << buf;
      rows << b.value;
    }
    text << '\n';
    rows << '\n';
    arr.push_back(j);
  }
  if (out.format() == "json")
    out.json_doc("oracle ground-state",
                 {{"kappa", kappa}, {"alpha", alpha}, {"restarts", restarts}, {"results", arr}});
  else if (out.format() == "csv")
    out.stream() << "instance,n,m,descent,convex\n" << rows.str();
  else
    out.stream() << text.str();
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Storage capacity of the negative spherical perceptron"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--quad-order-inner", g.quad_order_inner, "Gauss-Hermite order, inner level")
      ->check(CLI::Range(std::size_t{16}, std::size_t{512}))
      ->capture_default_str();
  app.add_option("--quad-order-outer", g.quad_order_outer, "Gauss-Hermite order, outer level")
      ->check(CLI::Range(std::size_t{16}, std::size_t{512}))
      ->capture_default_str();
  app.add_option("--residual-tol", g.residual_tol, "stationarity residual tolerance")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--capacity-tol", g.capacity_tol, "relative bracket width for alpha_c")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "thread cap (NSP_THREADS overrides)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--output-format", g.format, "csv, json or pretty")
      ->check(CLI::IsMember(kFormats));
  app.add_option("--output", g.output, "write to this file instead of stdout");

  int rc = 0;

  // capacity
  double cap_kappa = 0.0;
  std::string cap_level;
  bool cap_full = false;
  auto* cap = app.add_subcommand("capacity", "capacity alpha_c at one kappa and level");
  cap->add_option("--kappa", cap_kappa, "threshold kappa")->required();
  cap->add_option("--level", cap_level, "1, 2p, 2f or 3f")->required()->check(CLI::IsMember(kLevels));
  cap->add_flag("--full-system", cap_full, "Newton on every unknown");
  cap->callback([&] {
    apply_threads(g.threads);
    rc = run_capacity(g, cap_kappa, cap_level, cap_full); });

  // sweep
  double sw_k0 = 0.0, sw_k1 = 0.0;
  int sw_num = 0;
  std::vector<std::string> sw_levels;
  bool sw_parallel = false;
  auto* sw = app.add_subcommand("sweep", "capacities over a kappa grid");
  sw->add_option("--kappa-start", sw_k0)->required();
  sw->add_option("--kappa-end", sw_k1)->required();
  sw->add_option("--num", sw_num, "number of kappa values")->required()->check(CLI::PositiveNumber);
  sw->add_option("--level", sw_levels, "levels, comma separated")
      ->required()
      ->delimiter(',')
      ->check(CLI::IsMember(kLevels));
  sw->add_flag("--parallel", sw_parallel, "solve kappa values concurrently without warm starts");
  sw->callback([&] {
    apply_threads(g.threads);
    rc = run_sweep(g, sw_k0, sw_k1, sw_num, sw_levels, sw_parallel); });

  // reproduce
  int rp_table = 0;
  auto* rp = app.add_subcommand("reproduce", "recompute a reference table and compare");
  rp->add_option("--table", rp_table, "1 to 5")->required()->check(CLI::Range(1, 5));
  rp->callback([&] {
    apply_threads(g.threads);
    rc = run_reproduce(g, rp_table); });

  // check
  auto* ck = app.add_subcommand("check", "verification suites");
  ck->require_subcommand(1);

  std::string gr_level;
  double gr_kappa = 0.0;
  std::optional<double> gr_alpha;
  int gr_random = 0;
  double gr_step = 1e-6;
  auto* gr = ck->add_subcommand("gradients", "analytic vs finite-difference gradients");
  gr->add_option("--level", gr_level)->required()->check(CLI::IsMember({"2p", "2f", "3f"}));
  gr->add_option("--kappa", gr_kappa)->required();
  gr->add_option("--alpha", gr_alpha, "defaults to alpha_c")->check(CLI::PositiveNumber);
  gr->add_option("--random", gr_random, "extra random in-domain points")
      ->check(CLI::NonNegativeNumber);
  gr->add_option("--fd-step", gr_step)->check(CLI::PositiveNumber)->capture_default_str();
  gr->callback([&] {
    apply_threads(g.threads);
    rc = run_check_gradients(g, gr_level, gr_kappa, gr_alpha, gr_random, gr_step);
  });

  double mm_kappa = 0.0, mm_radius = 0.2;
  std::string mm_level;
  int mm_points = 5;
  auto* mm = ck->add_subcommand("modulo-m", "c-stationary point is a local maximum over c");
  mm->add_option("--kappa", mm_kappa)->required();
  mm->add_option("--level", mm_level)->required()->check(CLI::IsMember({"2f", "3f"}));
  mm->add_option("--radius", mm_radius, "relative grid radius around c")
      ->check(CLI::Range(0.0, 0.9))
      ->capture_default_str();
  mm->add_option("--points", mm_points, "grid points per c component")
      ->check(CLI::Range(1, 41))
      ->capture_default_str();
  mm->callback([&] {
    apply_threads(g.threads);
    rc = run_check_modulo_m(g, mm_kappa, mm_level, mm_radius, mm_points); });

  double od_kappa = 0.0;
  auto* od = ck->add_subcommand("ordering", "capacities decrease with the lifting level");
  od->add_option("--kappa", od_kappa)->required();
  od->callback([&] {
    apply_threads(g.threads);
    rc = run_check_ordering(g, od_kappa); });

  // oracle
  auto* orc = app.add_subcommand("oracle", "Monte Carlo and finite-n oracles");
  orc->require_subcommand(1);

  McFlags mc_flags;
  auto* mc = orc->add_subcommand("mc", "Monte Carlo estimate vs quadrature");
  mc->add_option("--kind", mc_flags.kind)
      ->check(CLI::IsMember({"e_max_sq", "f_zt_level2", "inner_log_level2", "nested_level3"}))
      ->capture_default_str();
  mc->add_option("--kappa", mc_flags.kappa)->capture_default_str();
  mc->add_option("--samples", mc_flags.samples)
      ->check(CLI::Range(std::size_t{1000}, std::size_t{1} << 40))
      ->capture_default_str();
  mc->add_option("--inner-samples", mc_flags.inner_samples, "nested_level3 inner draws")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  mc->add_option("--alpha", mc_flags.alpha, "stationary point for the level-2/3 kinds")
      ->check(CLI::PositiveNumber);
  mc->add_option("--B", mc_flags.B, "f_zt_level2")->check(CLI::NonNegativeNumber)->capture_default_str();
  mc->add_option("--C", mc_flags.C, "f_zt_level2, defaults to kappa");
  mc->add_option("--one-minus-p", mc_flags.one_minus_p, "f_zt_level2")
      ->check(CLI::Range(1e-12, 1.0))
      ->capture_default_str();
  mc->callback([&] {
    apply_threads(g.threads);
    rc = run_oracle_mc(g, mc_flags); });

  double tr_kappa = 0.0, tr_threshold = 1e-3;
  int tr_n = 100, tr_trials = 10, tr_restarts = 2;
  std::string tr_alphas;
  auto* tr = orc->add_subcommand("transition", "fraction of infeasible instances vs alpha");
  tr->add_option("--kappa", tr_kappa)->required();
  tr->add_option("--n", tr_n)->check(CLI::Range(2, 100000))->capture_default_str();
  tr->add_option("--alphas", tr_alphas, "start:end:count or a comma list")->required();
  tr->add_option("--trials", tr_trials)->check(CLI::Range(10, 1000000))->capture_default_str();
  tr->add_option("--restarts", tr_restarts)->check(CLI::PositiveNumber)->capture_default_str();
  tr->add_option("--threshold", tr_threshold)->check(CLI::PositiveNumber)->capture_default_str();
  tr->callback([&] {
    apply_threads(g.threads);
    rc = run_oracle_transition(g, tr_kappa, tr_n, tr_alphas, tr_trials, tr_restarts,
                               tr_threshold);
  });

  double gs_kappa = 0.0, gs_alpha = 1.0;
  int gs_n = 100, gs_restarts = 20, gs_instances = 1;
  auto* gs = orc->add_subcommand("ground-state", "finite-n ground state by sphere descent");
  gs->add_option("--kappa", gs_kappa)->required();
  gs->add_option("--alpha", gs_alpha)->required()->check(CLI::PositiveNumber);
  gs->add_option("--n", gs_n)->check(CLI::Range(2, 100000))->capture_default_str();
  gs->add_option("--restarts", gs_restarts)->check(CLI::PositiveNumber)->capture_default_str();
  gs->add_option("--instances", gs_instances)->check(CLI::PositiveNumber)->capture_default_str();
  gs->callback([&] {
    apply_threads(g.threads);
    rc = run_oracle_ground_state(g, gs_kappa, gs_alpha, gs_n, gs_restarts, gs_instances);
  });

  // Callbacks run inside parse; flag problems exit 2, numerical problems exit 1.
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 1;
  }
  return rc;
}
