#include "nsp/oracle.hpp"

#include "nsp/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nsp {

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6e737021u};
  return std::mt19937_64(seq);
}

std::string to_string(McKind k) {
  switch (k) {
  case McKind::e_max_sq:
    return "e_max_sq";
  case McKind::f_zt_level2:
    return "f_zt_level2";
  case McKind::inner_log_level2:
    return "inner_log_level2";
  case McKind::nested_level3:
    return "nested_level3";
  }
  return "?";
}

McKind parse_mc_kind(const std::string& s) {
  for (McKind k : {McKind::e_max_sq, McKind::f_zt_level2, McKind::inner_log_level2,
                   McKind::nested_level3})
    if (s == to_string(k))
      return k;
  throw std::invalid_argument("unknown expectation kind '" + s + "'");
}

namespace {

struct Moments {
  double n = 0.0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    n += 1.0;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
};

Moments merge(const Moments& a, const Moments& b) {
  if (a.n == 0.0)
    return b;
  if (b.n == 0.0)
    return a;
  Moments r;
  r.n = a.n + b.n;
  const double d = b.mean - a.mean;
  r.mean = a.mean + d * (b.n / r.n);
  r.m2 = a.m2 + b.m2 + d * d * (a.n * b.n / r.n);
  return r;
}

Moments reduce_pairwise(const std::vector<Moments>& v, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1)
    return v[lo];
  const std::size_t mid = lo + (hi - lo) / 2;
  return merge(reduce_pairwise(v, lo, mid), reduce_pairwise(v, mid, hi));
}

constexpr std::size_t kBlock = 8192;
constexpr std::size_t kNestedBlock = 16;

double log_fzt_at(double C, double B, double s) {
  return log_f_zt({-C / std::sqrt(s), B, C, s});
}

void check_params(McKind kind, const McParams& p) {
  switch (kind) {
  case McKind::e_max_sq:
    return;
  case McKind::f_zt_level2:
    if (!(p.si.B >= 0.0) || !(p.si.one_minus_p > 0.0))
      throw OutOfDomain("f_zt_level2: need B >= 0 and one_minus_p > 0");
    return;
  case McKind::inner_log_level2:
    if (p.lp.level != 2)
      throw std::invalid_argument("inner_log_level2: level-2 parameters required");
    check_domain(p.lp);
    return;
  case McKind::nested_level3:
    if (p.lp.level != 3)
      throw std::invalid_argument("nested_level3: level-3 parameters required");
    check_domain(p.lp);
    if (p.inner_samples < 1)
      throw std::invalid_argument("nested_level3: inner_samples must be positive");
    return;
  }
}

} // namespace

McEstimate mc_expectation(McKind kind, const McParams& params, std::size_t samples,
                          std::uint64_t seed) {
  if (samples < 1000)
    throw std::invalid_argument("mc_expectation: at least 1000 samples required");
  check_params(kind, params);

  const double kappa = params.kappa;
  const double p2 = params.lp.p2(), p3 = params.lp.p3();
  const double B = params.lp.level >= 2 ? params.lp.c2() / (4.0 * params.lp.gamma_sq) : 0.0;
  const double theta = params.lp.level == 3 ? params.lp.c3() / params.lp.c2() : 1.0;
  const std::size_t inner = params.inner_samples;

  const std::size_t block = kind == McKind::nested_level3 ? kNestedBlock : kBlock;
  const std::size_t nblocks = (samples + block - 1) / block;
  std::vector<Moments> parts(nblocks);

#pragma omp parallel for schedule(dynamic)
  for (std::size_t ib = 0; ib < nblocks; ++ib) {
    std::mt19937_64 rng = make_stream(seed, ib);
    std::normal_distribution<double> normal;
    const std::size_t count = std::min(block, samples - ib * block);
    Moments m;
    std::vector<double> lv(kind == McKind::nested_level3 ? inner : 0);
    for (std::size_t i = 0; i < count; ++i) {
      const double g = normal(rng);
      double x = 0.0;
      switch (kind) {
      case McKind::e_max_sq: {
        const double t = std::max(kappa + g, 0.0);
        x = t * t;
        break;
      }
      case McKind::f_zt_level2: {
        const double t = std::max(std::sqrt(params.si.one_minus_p) * g + params.si.C, 0.0);
        x = std::exp(-params.si.B * t * t);
        break;
      }
      case McKind::inner_log_level2:
        x = log_fzt_at(std::sqrt(p2) * g + kappa, B, 1.0 - p2);
        break;
      case McKind::nested_level3: {
        const double shift = std::sqrt(p3) * g + kappa;
        const double a = std::sqrt(p2 - p3);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < inner; ++j) {
          lv[j] = theta * log_fzt_at(a * normal(rng) + shift, B, 1.0 - p2);
          mx = std::max(mx, lv[j]);
        }
        double acc = 0.0;
        for (double v : lv)
          acc += std::exp(v - mx);
        x = mx + std::log(acc / static_cast<double>(inner));
        break;
      }
      }
      m.push(x);
    }
    parts[ib] = m;
  }

  const Moments tot = reduce_pairwise(parts, 0, parts.size());
  McEstimate e;
  e.mean = tot.mean;
  e.std_error = tot.n > 1.0 ? std::sqrt(tot.m2 / (tot.n - 1.0) / tot.n) : 0.0;
  e.samples = samples;
  e.seed = seed;
  e.inner_samples = kind == McKind::nested_level3 ? inner : 0;
  return e;
}

double quadrature_expectation(McKind kind, const McParams& params, std::size_t inner_order,
                              std::size_t outer_order) {
  check_params(kind, params);
  switch (kind) {
  case McKind::e_max_sq:
    return e_max_sq(params.kappa);
  case McKind::f_zt_level2: {
    const SphereIntegrand& si = params.si;
    return f_zt({-si.C / std::sqrt(si.one_minus_p), si.B, si.C, si.one_minus_p});
  }
  case McKind::inner_log_level2: {
    const LiftingParams& lp = params.lp;
    return sphere_term_r2(params.kappa, lp.p2(), lp.c2() / (4.0 * lp.gamma_sq),
                          gauss_hermite(outer_order), false)
        .value;
  }
  case McKind::nested_level3: {
    const LiftingParams& lp = params.lp;
    return sphere_term_r3(params.kappa, lp.p2(), lp.p3(), lp.c2() / (4.0 * lp.gamma_sq),
                          lp.c3() / lp.c2(), gauss_hermite(inner_order),
                          gauss_hermite(outer_order), false)
        .value;
  }
  }
  return 0.0;
}

FiniteNInstance FiniteNInstance::make(int n, double alpha, double kappa, std::uint64_t seed) {
  if (n < 2)
    throw std::invalid_argument("finite-n instance: n must be at least 2");
  if (!(alpha > 0.0))
    throw std::invalid_argument("finite-n instance: alpha must be positive");
  FiniteNInstance inst;
  inst.n = n;
  inst.m = std::max(1, static_cast<int>(std::lround(alpha * n)));
  inst.kappa = kappa;
  inst.seed = seed;
  return inst;
}

Eigen::MatrixXd FiniteNInstance::G() const {
  // Row by row, so instances with the same seed are nested in m.
  std::mt19937_64 rng = make_stream(seed, 0);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd g(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      g(i, j) = normal(rng);
  return g;
}

namespace {

// Scaled residual below which an instance counts as solved exactly.
constexpr double kSolved = 1e-9;

double half_sq_residual(const Eigen::MatrixXd& G, double kappa, const Eigen::VectorXd& x,
                        Eigen::VectorXd& r) {
  r = (kappa - (G * x).array()).max(0.0).matrix();
  return 0.5 * r.squaredNorm();
}

DescentResult descend_from(const Eigen::MatrixXd& G, double kappa, Eigen::VectorXd x,
                           double step0, double target) {
  constexpr int kMaxIter = 50000;
  constexpr double kArmijo = 1e-4;
  constexpr double kRelStop = 1e-10;

  Eigen::VectorXd r;
  double f = half_sq_residual(G, kappa, x, r);
  Eigen::VectorXd grad = -G.transpose() * r;
  Eigen::VectorXd g = grad - x.dot(grad) * x;
  double eta = step0;
  int it = 0;
  Eigen::VectorXd xn, rn, gn;
  const double floor = std::max(target, kSolved);
  const double f_zero = 0.5 * floor * floor * static_cast<double>(G.cols());
  for (; it < kMaxIter && f > f_zero; ++it) {
    const double gg = g.squaredNorm();
    if (gg == 0.0)
      break;
    double fn = f;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt) {
      xn = (x - eta * g).normalized();
      fn = half_sq_residual(G, kappa, xn, rn);
      if (fn <= f - kArmijo * eta * gg) {
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted)
      break;
    const Eigen::VectorXd gradn = -G.transpose() * rn;
    gn = gradn - xn.dot(gradn) * xn;
    const Eigen::VectorXd s = xn - x;
    const Eigen::VectorXd y = gn - g;
    const double sy = s.dot(y);
    eta = sy > 0.0 ? s.squaredNorm() / sy : 2.0 * eta;
    eta = std::clamp(eta, 1e-3 * step0, 1e3 * step0);
    const bool done = f - fn < kRelStop * f;
    x = xn;
    f = fn;
    g = gn;
    if (done)
      break;
  }
  DescentResult res;
  res.value = std::sqrt(2.0 * f / static_cast<double>(G.cols()));
  res.x = x;
  res.iterations = it;
  return res;
}

double lipschitz(const Eigen::MatrixXd& G) {
  const Eigen::MatrixXd gtg = G.transpose() * G;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gtg, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

} // namespace

DescentResult sphere_descent(const Eigen::MatrixXd& G, double kappa, int restarts,
                             std::uint64_t seed, double target) {
  if (restarts < 1)
    throw std::invalid_argument("sphere descent: restarts must be at least 1");
  const double step0 = 1.0 / std::pow(std::sqrt(double(G.rows())) + std::sqrt(double(G.cols())), 2);
  std::vector<DescentResult> runs(static_cast<std::size_t>(restarts));
  for (auto& r : runs)
    r.value = std::numeric_limits<double>::infinity();
  // A start that reaches zero is optimal; the remaining starts are skipped.
  std::atomic<bool> solved{false};
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < restarts; ++k) {
    if (solved.load())
      continue;
    std::mt19937_64 rng = make_stream(seed, static_cast<std::uint64_t>(k));
    std::normal_distribution<double> normal;
    Eigen::VectorXd x(G.cols());
    for (Eigen::Index j = 0; j < x.size(); ++j)
      x[j] = normal(rng);
    runs[static_cast<std::size_t>(k)] = descend_from(G, kappa, x.normalized(), step0, target);
    if (runs[static_cast<std::size_t>(k)].value <= std::max(target, kSolved))
      solved.store(true);
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < runs.size(); ++k)
    if (runs[k].value < runs[best].value)
      best = k;
  return runs[best];
}

double finite_n_ground_state(const FiniteNInstance& inst, int restarts, std::uint64_t seed) {
  return sphere_descent(inst.G(), inst.kappa, restarts, seed).value;
}

DescentResult ball_ground_state(const Eigen::MatrixXd& G, double kappa) {
  constexpr int kMaxIter = 500000;
  const double L = lipschitz(G);
  const double step = 1.0 / L;
  auto project = [](Eigen::VectorXd v) {
    const double nv = v.norm();
    if (nv > 1.0)
      v /= nv;
    return v;
  };

  const Eigen::Index n = G.cols();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n), y = x, xn, r;
  double t = 1.0;
  int it = 0;
  for (; it < kMaxIter; ++it) {
    half_sq_residual(G, kappa, y, r);
    xn = project(y + step * (G.transpose() * r));
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    // Restart momentum when it points uphill.
    if ((y - xn).dot(xn - x) > 0.0) {
      t = 1.0;
      y = xn;
    } else {
      y = xn + ((t - 1.0) / tn) * (xn - x);
      t = tn;
    }
    const double dx = (xn - x).norm();
    x = xn;
    if (dx <= 1e-14)
      break;
  }
  const double f = half_sq_residual(G, kappa, x, r);
  DescentResult res;
  res.value = std::sqrt(2.0 * f / static_cast<double>(n));
  res.x = x;
  res.iterations = it;
  return res;
}

std::vector<TransitionPoint> transition_scan(double kappa, const std::vector<double>& alphas,
                                             int n, int trials, std::uint64_t seed,
                                             int restarts, double threshold) {
  if (trials < 1)
    throw std::invalid_argument("transition scan: trials must be positive");
  const std::size_t na = alphas.size();
  const std::size_t nt = static_cast<std::size_t>(trials);
  std::vector<double> values(na * nt);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < na * nt; ++k) {
    const std::size_t ia = k / nt, t = k % nt;
    const std::uint64_t inst_seed = make_stream(seed, 2 * t)();
    const std::uint64_t start_seed = make_stream(seed, 2 * t + 1)();
    const FiniteNInstance inst = FiniteNInstance::make(n, alphas[ia], kappa, inst_seed);
    // Below the threshold the classification is settled, so descent stops there.
    values[k] = sphere_descent(inst.G(), kappa, restarts, start_seed, 0.01 * threshold).value;
  }
  std::vector<TransitionPoint> out(na);
  for (std::size_t ia = 0; ia < na; ++ia) {
    TransitionPoint& tp = out[ia];
    tp.alpha = alphas[ia];
    tp.trials = trials;
    double pos = 0.0, sum = 0.0;
    for (std::size_t t = 0; t < nt; ++t) {
      const double v = values[ia * nt + t];
      pos += v > threshold ? 1.0 : 0.0;
      sum += v;
    }
    tp.fraction_positive = pos / static_cast<double>(nt);
    tp.mean_value = sum / static_cast<double>(nt);
  }
  return out;
}

} // namespace nsp
