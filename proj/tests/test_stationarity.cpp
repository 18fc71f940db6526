#include "nsp/errors.hpp"
#include "nsp/stationarity.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

using namespace nsp;

namespace {

const Quadrature& quad60() {
  static const Quadrature q(60, 60);
  return q;
}

LiftingParams table1_r2f() { return LiftingParams::r2_full(0.4747, 0.0981, 3.6835, 0.1324, 1.8884); }
LiftingParams table4_r3f() {
  return LiftingParams::r3_full(0.9693, 0.4075, 0.5384, 0.0743, 12.6, 3.25, 0.0647, 3.8759);
}

// Explicit r = 2 and r = 3 closed forms, written out term by term.
ClosedForm explicit_r2(double p2, double q2) {
  ClosedForm cf;
  const double s = std::sqrt(p2 / q2);
  cf.gamma_sq_p = 0.5 * (1 - q2) / (1 - p2) * s;
  cf.c = {s / (1 - p2) - 1 / ((1 - q2) * s)};
  return cf;
}

ClosedForm explicit_r3(double p2, double p3, double q2, double q3) {
  ClosedForm cf;
  const double s = std::sqrt(q3 / p3);
  const double rp = (p2 - p3) / (q2 - q3);
  cf.gamma_sq_p = 0.5 * (1 - q2) / (1 - p2) * rp * s;
  const double c3 = 1 / ((p2 - p3) * s) - s / (q2 - q3);
  const double c2 = rp * s / (1 - p2) - 1 / (rp * s * (1 - q2));
  cf.c = {c2, c3};
  return cf;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

} // namespace

TEST_SUITE("stationarity") {

TEST_CASE("residuals at the tabulated level-2 point are small") {
  const ResidualVector r = grad_r2_full({-1.5, 36.57}, table1_r2f(), quad60().outer);
  REQUIRE(r.values.size() == 5);
  CHECK(r.max_abs() < 5e-3);
}

TEST_CASE("q2 derivative vanishes on the helper relation") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    LiftingParams lp = random_params(Level::r2f, rng);
    const double a1 = 2 * lp.gamma_sq_p - lp.c2() * (1 - lp.q2());
    const double p2 = lp.q2() / (a1 * a1);
    if (!(p2 < 1.0))
      continue;
    lp.p[0] = p2;
    const ResidualVector r = grad_r2_full({-1.0, 10.0}, lp, quad60().outer);
    CHECK(std::abs(r.at("q2")) < 1e-13);
  }
}

TEST_CASE("residuals at the tabulated level-3 point are small") {
  const ResidualVector r =
      grad_r3_full({-1.5, 36.40}, table4_r3f(), quad60().inner, quad60().outer);
  REQUIRE(r.values.size() == 8);
  CHECK(r.max_abs() < 2e-2);
}

TEST_CASE("analytic gradients match finite differences") {
  SUBCASE("tabulated points") {
    CHECK(check_gradient({-1.5, 36.57}, table1_r2f(), quad60()).pass);
    CHECK(check_gradient({-1.5, 36.40}, table4_r3f(), quad60()).pass);
  }
  SUBCASE("p2 = 0 boundary") {
    LiftingParams lp = table1_r2f();
    lp.p[0] = 0.0;
    const GradientCheck g = check_gradient({-1.5, 36.57}, lp, quad60());
    CHECK(g.pass);
  }
  SUBCASE("random points") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> uk(-2.7, 0.0), ua(2.0, 100.0);
    for (int i = 0; i < 10; ++i) {
      const ModelPoint mp{uk(rng), ua(rng)};
      const GradientCheck g2 = check_gradient(mp, random_params(Level::r2f, rng), quad60());
      CHECK(g2.max_rel_error < 1e-5);
      const GradientCheck g3 = check_gradient(mp, random_params(Level::r3f, rng), quad60());
      CHECK(g3.max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("level-3 derivatives collapse onto level 2") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 10; ++i) {
    LiftingParams l3 = random_params(Level::r3f, rng);
    l3.p[1] = l3.p[0];
    l3.q[1] = l3.q[0];
    const LiftingParams l2 =
        LiftingParams::r2_full(l3.p2(), l3.q2(), l3.c2(), l3.gamma_sq, l3.gamma_sq_p);
    const ModelPoint mp{-1.2, 20.0};
    const ResidualVector r3 = grad_r3_full(mp, l3, quad60().inner, quad60().outer);
    const ResidualVector r2 = grad_r2_full(mp, l2, quad60().outer);
    const double tol = 1e-8;
    CHECK(std::abs(r3.at("p2") + r3.at("p3") - r2.at("p2")) < tol * std::max(1.0, std::abs(r2.at("p2"))));
    CHECK(std::abs(r3.at("q2") + r3.at("q3") - r2.at("q2")) < tol * std::max(1.0, std::abs(r2.at("q2"))));
    CHECK(std::abs(r3.at("c2") - r2.at("c2")) < tol * std::max(1.0, std::abs(r2.at("c2"))));
    CHECK(std::abs(r3.at("gamma_sq") - r2.at("gamma_sq")) < tol);
    CHECK(std::abs(r3.at("gamma_sq_p") - r2.at("gamma_sq_p")) < tol);
  }
}

TEST_CASE("closed forms against tabulated values") {
  const ClosedForm a = closed_form_params({0.4747}, {0.0981}, 2);
  CHECK(std::abs(a.gamma_sq_p - 1.8884) < 2e-3);
  CHECK(std::abs(a.c[0] - 3.6835) < 2e-3);

  const ClosedForm b = closed_form_params({0.9693, 0.4075}, {0.5384, 0.0743}, 3);
  // 1 - p2 = 0.0307 carries only three digits, so the printed 3.876 is matched to 0.5%.
  CHECK(rel(b.gamma_sq_p, 3.876) < 5e-3);
  CHECK(std::abs(b.c[1] - 3.25) < 1e-2);
  CHECK(std::abs(b.c[0] - 12.6) < 1e-1);

  const ClosedForm one = closed_form_params({}, {}, 1);
  CHECK(one.gamma_sq_p == 0.5);
  CHECK(one.c.empty());

  for (double t : {0.1, 0.5, 0.9}) {
    const ClosedForm d = closed_form_params({t}, {t}, 2);
    CHECK(d.gamma_sq_p == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::abs(d.c[0]) < 1e-14);
  }
}

TEST_CASE("general closed form agrees with the explicit r = 2 and r = 3 forms") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  for (int i = 0; i < 200; ++i) {
    const double p2 = u(rng), q2 = u(rng), p3 = p2 * u(rng), q3 = q2 * u(rng);
    const ClosedForm g2 = closed_form_params({p2}, {q2}, 2);
    const ClosedForm e2 = explicit_r2(p2, q2);
    CHECK(rel(g2.gamma_sq_p, e2.gamma_sq_p) < 1e-13);
    CHECK(std::abs(g2.c[0] - e2.c[0]) < 1e-12 * std::max(1.0, std::abs(e2.c[0])));

    const ClosedForm g3 = closed_form_params({p2, p3}, {q2, q3}, 3);
    const ClosedForm e3 = explicit_r3(p2, p3, q2, q3);
    CHECK(rel(g3.gamma_sq_p, e3.gamma_sq_p) < 1e-13);
    CHECK(std::abs(g3.c[0] - e3.c[0]) < 1e-12 * std::max(1.0, std::abs(e3.c[0])));
    CHECK(std::abs(g3.c[1] - e3.c[1]) < 1e-12 * std::max(1.0, std::abs(e3.c[1])));
  }
}

TEST_CASE("closed forms reject bad chains") {
  CHECK_THROWS_AS(closed_form_params({}, {}, 0), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_params({0.5}, {0.5, 0.2}, 2), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_params({0.3, 0.5}, {0.5, 0.2}, 3), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_params({0.5, 0.5}, {0.5, 0.2}, 3), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_params({1.0}, {0.5}, 2), std::invalid_argument);
  CHECK_THROWS_AS(closed_form_params({0.0}, {0.5}, 2), std::invalid_argument);
}

TEST_CASE("closed forms zero the q and gamma_sq_p derivatives") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.05, 0.95), ug(0.03, 0.5);
  double worst2 = 0.0, worst3 = 0.0;
  int used2 = 0, used3 = 0;
  for (int i = 0; i < 2000 && (used2 < 100 || used3 < 100); ++i) {
    const double p2 = u(rng), q2 = u(rng), p3 = p2 * u(rng), q3 = q2 * u(rng);
    const ModelPoint mp{-1.5, 30.0};
    const ClosedForm c2 = closed_form_params({p2}, {q2}, 2);
    if (c2.c[0] > 0.0 && used2 < 100) {
      const LiftingParams lp = LiftingParams::r2_full(p2, q2, c2.c[0], ug(rng), c2.gamma_sq_p);
      const ResidualVector r = grad_r2_full(mp, lp, quad60().outer);
      worst2 = std::max({worst2, std::abs(r.at("q2")), std::abs(r.at("gamma_sq_p"))});
      ++used2;
    }
    const ClosedForm c3 = closed_form_params({p2, p3}, {q2, q3}, 3);
    if (c3.c[0] > 0.0 && c3.c[1] > 0.0 && used3 < 100) {
      const LiftingParams lp =
          LiftingParams::r3_full(p2, p3, q2, q3, c3.c[0], c3.c[1], ug(rng), c3.gamma_sq_p);
      const ResidualVector r = grad_r3_full(mp, lp, quad60().inner, quad60().outer);
      worst3 = std::max({worst3, std::abs(r.at("q2")), std::abs(r.at("q3")),
                         std::abs(r.at("gamma_sq_p"))});
      ++used3;
    }
  }
  CHECK(used2 == 100);
  CHECK(used3 == 100);
  CHECK(worst2 < 1e-10);
  CHECK(worst3 < 1e-10);
}

TEST_CASE("level-2 solves match tabulated values") {
  SolverConfig cfg;
  const StationaryPoint a = solve_stationary({-1.5, 36.57}, Level::r2f, cfg);
  CHECK(a.residual.max_abs() < cfg.residual_tol);
  CHECK(a.branch == Branch::interior);
  CHECK(rel(a.params.p2(), 0.4747) < 0.01);
  CHECK(rel(a.params.q2(), 0.0981) < 0.01);
  CHECK(rel(a.params.c2(), 3.6835) < 0.01);
  CHECK(rel(a.params.gamma_sq, 0.1324) < 0.01);
  CHECK(rel(a.params.gamma_sq_p, 1.8884) < 0.01);
  CHECK(std::abs(a.psi) < 5e-3);

  const StationaryPoint b = solve_stationary({-2.7, 942.9}, Level::r2f, cfg);
  CHECK(rel(b.params.p2(), 0.0560) < 0.02);
  // Printed with two significant digits; compared within half a unit of the last one.
  CHECK(std::abs(b.params.q2() - 0.0014) < 0.5e-4);
  CHECK(rel(b.params.c2(), 6.6181) < 0.02);

  const StationaryPoint c = solve_stationary({-1.5, 37.36}, Level::r2p, cfg);
  CHECK(c.branch == Branch::interior);
  CHECK(rel(c.params.c2(), 2.5320) < 0.01);
  CHECK(rel(c.params.gamma_sq, 0.1737) < 0.01);
  CHECK(rel(c.params.gamma_sq_p, 1.4397) < 0.01);

  const StationaryPoint d = solve_stationary({-0.5, 4.770}, Level::r2p, cfg);
  CHECK(d.branch == Branch::degenerate_c2_zero);
  CHECK(d.params.gamma_sq_p == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(std::abs(d.psi - psi_r1({-0.5, 4.770})) < 1e-9);
}

TEST_CASE("level-3 solve satisfies the closed forms and chain order") {
  SolverConfig cfg;
  const StationaryPoint s = solve_stationary({-1.5, 36.40}, Level::r3f, cfg);
  const LiftingParams& lp = s.params;
  CHECK(s.residual.max_abs() < 1e-6);
  CHECK(1.0 > lp.p2());
  CHECK(lp.p2() > lp.p3());
  CHECK(lp.p3() > 0.0);
  CHECK(1.0 > lp.q2());
  CHECK(lp.q2() > lp.q3());
  CHECK(lp.q3() > 0.0);
  const ClosedForm cf = closed_form_params(lp.p, lp.q, 3);
  CHECK(std::abs(cf.gamma_sq_p - lp.gamma_sq_p) < 1e-8);
  CHECK(std::abs(cf.c[0] - lp.c2()) < 1e-8);
  CHECK(std::abs(cf.c[1] - lp.c3()) < 1e-8);
  CHECK(rel(lp.p2(), 0.9693) < 0.03);
  CHECK(rel(lp.p3(), 0.4075) < 0.03);
  CHECK(rel(lp.c3(), 3.25) < 0.03);
}

TEST_CASE("reduced and full solve modes agree") {
  SolverConfig reduced;
  SolverConfig full;
  full.full_system = true;
  const ModelPoint mp{-1.5, 36.57};
  const StationaryPoint a = solve_stationary(mp, Level::r2f, reduced);
  full.warm_start = a.params;
  full.warm_start->c[0] *= 1.01;
  full.warm_start->gamma_sq_p *= 0.99;
  const StationaryPoint b = solve_stationary(mp, Level::r2f, full);
  CHECK(std::abs(a.psi - b.psi) < 10 * reduced.residual_tol);
  CHECK(std::abs(a.params.p2() - b.params.p2()) < 1e-6);
  CHECK(std::abs(a.params.c2() - b.params.c2()) < 1e-6);
}

TEST_CASE("solves are bitwise reproducible") {
  SolverConfig cfg;
  const StationaryPoint a = solve_stationary({-1.0, 12.3}, Level::r2f, cfg);
  const StationaryPoint b = solve_stationary({-1.0, 12.3}, Level::r2f, cfg);
  CHECK(a.params.p == b.params.p);
  CHECK(a.params.q == b.params.q);
  CHECK(a.params.c == b.params.c);
  CHECK(a.params.gamma_sq == b.params.gamma_sq);
  CHECK(a.psi == b.psi);
}

TEST_CASE("solver input validation") {
  SolverConfig cfg;
  CHECK_THROWS_AS(solve_stationary({-1.0, 0.0}, Level::r2f, cfg), std::invalid_argument);
  CHECK_THROWS_AS(solve_stationary({NAN, 1.0}, Level::r2f, cfg), std::invalid_argument);
  CHECK_THROWS_AS(parse_level("4"), std::invalid_argument);
  CHECK(parse_level("3f") == Level::r3f);
  CHECK(to_string(Level::r2p) == "2p");
}

} // TEST_SUITE
