#include "doctest.h"
#include "fiotrace/statphase.hpp"

#include <cmath>

using namespace ftr;

namespace {

LayoutP xx_layout(int n) { return make_layout({{"x", 1}, {"xp", 1}, {"th", n}}); }

PhaseFunction phase(const std::string& text, int n, Params prm = {}, std::vector<std::string> cone = {}) {
  auto L = xx_layout(n);
  std::vector<Expression> c;
  for (auto& s : cone) c.push_back(parse_expression(s, L, prm));
  return make_phase(parse_expression(text, L, prm), {"x"}, {"xp"}, c);
}

Expression constant(const PhaseFunction& ph, double v) { return Expression(ex::num(v), ph.layout); }

VectorXd vec(std::initializer_list<double> l) {
  VectorXd v(l.size());
  int i = 0;
  for (double x : l) v[i++] = x;
  return v;
}

PhaseFunction rotation(double a) {
  return phase("(x[1]-xp[1]*cos($a))*th[1] - xp[1]*sin($a)*th[2]", 2, {{"a", a}});
}

const char* bump = "((1-(th[2]^2+th[4]^2)/(0.64*(th[1]^2+th[3]^2)) + abs(1-(th[2]^2+th[4]^2)/(0.64*(th[1]^2+th[3]^2))))/2)^2";

}  // namespace

TEST_CASE("signature and prefactor") {
  MatrixXd H = MatrixXd::Zero(3, 3);
  H.diagonal() << 1, -2, 3;
  CHECK(signature_of(H) == 1);
  MatrixXd D = MatrixXd::Zero(2, 2);
  D.diagonal() << 1, 1e-10;
  CHECK_THROWS_AS(signature_of(D), DegenerateHessian);
  CHECK(prefactor(PrefactorMode::Derived, 2, 2, 0) == doctest::Approx(1 / (2 * M_PI)));
  CHECK(prefactor(PrefactorMode::Paper, 2, 2, 0) == doctest::Approx(1 / (4 * M_PI * M_PI)));
  CHECK(prefactor(PrefactorMode::Paper, 2, 4, 2) == prefactor(PrefactorMode::Derived, 2, 4, 2));
  CHECK(parse_prefactor("paper") == PrefactorMode::Paper);
  CHECK_THROWS(parse_prefactor("other"));
}

TEST_CASE("rotation: stationary point, hessian, b0") {
  for (double a : {M_PI / 6, M_PI / 4, M_PI / 3}) {
    auto ph = rotation(a);
    std::mt19937_64 rng(1);
    auto crit = solve_critical_set(ph, SeedSpec{}, rng);
    auto chart = make_chart(1, {}, {}, std::string("0"));
    auto sp = compute_theta_splitting(ph, crit);
    CHECK(sp.e == 0);
    CHECK(sp.Q.isIdentity());
    AmplitudeEngine E(ph, chart, sp, constant(ph, 1), constant(ph, 0), crit.points, 2);
    auto w = vec({1, std::cos(a)});
    auto d = E.find_stationary_point(w);
    CHECK(std::fabs(d.point[0]) < 1e-12);
    CHECK(std::fabs(d.point[1]) < 1e-12);
    CHECK(d.point[2] == doctest::Approx(1.0));
    CHECK(std::fabs(d.point[3]) < 1e-12);
    CHECK(d.hessian.rows() == 4);
    CHECK(d.det == doctest::Approx(std::sin(a) * std::sin(a)));
    CHECK(d.signature == 0);
    CHECK(std::fabs(d.critical_value) < 1e-12);
    auto b = E.leading_amplitude(w);
    double want = 1 / (2 * M_PI * std::fabs(std::sin(a)));
    CHECK(std::abs(b.b0 - want) < 1e-10 * want);
    auto bp = E.leading_amplitude(w, PrefactorMode::Paper);
    CHECK(std::abs(bp.b0 - want / (2 * M_PI)) < 1e-10 * want);
    // b0 is 0-homogeneous here
    CHECK(std::abs(E.leading_amplitude(vec({3, -2})).b0 - want) < 1e-10 * want);
    CHECK(std::fabs(E.generating_function_value(w)) < 1e-12);
    CHECK(std::fabs(E.generating_function_value(2 * w)) < 1e-12);
  }
}

TEST_CASE("half-wave: chart, generating function, b0") {
  double t = 1;
  auto ph = phase("(x[1]-xp[1])*th[1] + $t*norm(th)", 2, {{"t", t}});
  std::mt19937_64 rng(2);
  auto crit = solve_critical_set(ph, SeedSpec{}, rng);
  auto chart = make_chart(1, {}, {1}, std::string("-w[2]*w[1] + $t*abs(w[1])"), {{"t", t}});
  // traced samples straight from gamma of the critical set
  TracedLagrangian tl;
  auto S = lagrangian_samples(ph, crit);
  tl.points = S.points;
  tl.frames = S.frames;
  auto fit = fit_canonical_chart(chart, tl);
  CHECK(fit.rank == 2);
  CHECK(fit.canonical_residual < 1e-8);
  CHECK(fit.euler_residual < 1e-9);
  auto bad = make_chart(1, {1}, {1});
  try {
    fit_canonical_chart(bad, tl);
    FAIL("no throw");
  } catch (const NotAChart& e) {
    CHECK(e.rank_found == 1);
  }
  auto sp = compute_theta_splitting(ph, crit);
  AmplitudeEngine E(ph, chart, sp, constant(ph, 1), constant(ph, 0), crit.points, 2);
  auto d = E.find_stationary_point(vec({1, 0}));
  CHECK(d.point[0] == doctest::Approx(-1.0));
  CHECK(d.point[2] == doctest::Approx(1.0));
  CHECK(std::fabs(d.point[3]) < 1e-12);
  MatrixXd H(3, 3);
  H << 0, 1, 0, 1, 0, 0, 0, 0, t;
  CHECK((d.hessian - H).norm() < 1e-10);
  CHECK(d.det == doctest::Approx(-1.0));
  CHECK(d.signature == 1);
  CHECK(E.generating_function_value(vec({2, 0.3})) == doctest::Approx(-0.6 + 2 * t));
  CHECK(E.generating_function_value(vec({4, 0.3})) == doctest::Approx(2 * E.generating_function_value(vec({2, 0.3}))));
  for (double p : {1.0, 4.0, -2.0, 16.0}) {
    auto b = E.leading_amplitude(vec({p, 0.25}));
    cplx want = std::polar(std::sqrt(std::fabs(p) / t) / (2 * M_PI), M_PI / 4);
    CHECK(std::abs(b.b0 - want) < 1e-6 * std::abs(want));
    CHECK(std::fabs(b.max_critical_value) < 1e-9);
  }
}

TEST_CASE("fiber pair: splitting, fiber disk, bump integral") {
  auto ph = phase("x[1]*th[1] - xp[1]*th[3]", 4, {}, {"0.64*(th[1]^2+th[3]^2)-th[2]^2-th[4]^2"});
  std::mt19937_64 rng(3);
  auto crit = solve_critical_set(ph, SeedSpec{}, rng);
  auto sp = compute_theta_splitting(ph, crit);
  CHECK(sp.e == 2);
  // theta' = (p, p'), theta'' = (q, q') up to sign
  CHECK(std::fabs(std::fabs(sp.Q(0, 0)) - 1) < 1e-12);
  CHECK(std::fabs(std::fabs(sp.Q(2, 1)) - 1) < 1e-12);
  CHECK(std::fabs(std::fabs(sp.Q(1, 2)) - 1) < 1e-12);
  CHECK(std::fabs(std::fabs(sp.Q(3, 3)) - 1) < 1e-12);
  auto chart = make_chart(1, {}, {}, std::string("0"));
  auto L = ph.layout;
  AmplitudeEngine E(ph, chart, sp, parse_expression(bump, L), constant(ph, 0), crit.points, 2);
  auto w = vec({1, 1});
  auto d = E.find_stationary_point(w, vec({0.1, -0.2}));
  CHECK(std::fabs(d.point[0]) < 1e-12);
  CHECK(std::fabs(d.point[1]) < 1e-12);
  CHECK(std::fabs(d.det - 1) < 1e-10);
  CHECK(d.signature == 0);
  auto F = E.fiber_trace(w);
  CHECK(F.diameter == doctest::Approx(2 * 0.8 * std::sqrt(2.0)).epsilon(0.01));
  auto b = E.leading_amplitude(w);
  // disk radius^2 = 1.28, integral of (1 - r^2/R^2)^2 = pi R^2 / 3
  double want = M_PI * 1.28 / 3 / std::pow(2 * M_PI, 2);
  CHECK(std::fabs(b.b0.real() - want) < 1e-4 * want);
  CHECK(std::fabs(b.b0.imag()) < 1e-12);
  CHECK(b.signature == 0);
}

TEST_CASE("pdo restriction: unbounded fiber") {
  auto ph = phase("(x[1]-xp[1])*th[1]", 2);
  std::mt19937_64 rng(4);
  auto crit = solve_critical_set(ph, SeedSpec{}, rng);
  CHECK(crit.excess == 1);
  CHECK(compute_theta_splitting(ph, crit, 0, false).min_theta_prime < 1);
  auto sp = compute_theta_splitting(ph, crit, 0, false);
  CHECK(std::fabs(std::fabs(sp.Q(1, 1)) - 1) < 1e-12);
  auto chart = make_chart(1, {1}, {});
  AmplitudeEngine E(ph, chart, sp, constant(ph, 1), constant(ph, 0), crit.points, 2);
  CHECK_THROWS_AS(E.fiber_trace(vec({0.3, 1})), UnboundedFiber);
}
