#include "doctest.h"
#include "fiotrace/trace.hpp"

#include <cmath>

using namespace ftr;

namespace {

const double alpha = M_PI / 4;
const EmbeddingChart chart{2, 1};

LayoutP full_layout(int n) { return make_layout({{"x", 1}, {"y", 1}, {"xp", 1}, {"yp", 1}, {"th", n}}); }

PhaseFunction full_phase(const std::string& text, int n = 2, Params prm = {}, std::vector<std::string> cone = {}) {
  auto L = full_layout(n);
  std::vector<Expression> c;
  for (auto& s : cone) c.push_back(parse_expression(s, L, prm));
  return make_phase(parse_expression(text, L, prm), {"x", "y"}, {"xp", "yp"}, c);
}

const char* rot_text = "(x[1]-xp[1]*cos($a)+yp[1]*sin($a))*th[1] + (y[1]-xp[1]*sin($a)-yp[1]*cos($a))*th[2]";

struct Setup {
  PhaseFunction ph;
  RestrictedPhase r;
  CriticalManifold crit, crit_xx;
  LagrangianSource src;
  LambdaXX lxx;
};

Setup build(PhaseFunction ph, uint64_t seed = 1) {
  Setup S;
  S.ph = std::move(ph);
  std::mt19937_64 rng(seed);
  S.crit = solve_critical_set(S.ph, SeedSpec{}, rng);
  S.r = restrict_phase(S.ph, chart);
  S.r.parent = &S.ph;
  S.crit_xx = solve_critical_set(S.r.phi_xx, SeedSpec{}, rng);
  S.src = source_from_phase(S.ph, S.crit, chart);
  std::vector<VectorXd> seeds;
  for (auto& c : S.crit_xx.points) seeds.push_back(embed_restricted(S.ph, S.r.phi_xx, c));
  for (auto u : S.crit.points) {
    u[1] = u[3] = 0;
    seeds.push_back(u);
  }
  S.lxx = lambda_xx_samples(S.src, 40, rng, seeds);
  return S;
}

}  // namespace

TEST_CASE("restriction is substitution on the tree") {
  auto ph = full_phase(rot_text, 2, {{"a", alpha}});
  auto r = restrict_phase(ph, chart);
  auto L = r.phi_xx.layout;
  auto want = parse_expression("(x[1]-xp[1]*cos($a))*th[1] + (-(xp[1]*sin($a)))*th[2]", L, {{"a", alpha}});
  CHECK(structurally_equal(r.phi_xx.phi.root(), want.root()));
  auto pdo = full_phase("(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]");
  auto [rp, a] = restrict_phase_and_amplitude(pdo, parse_expression("1", pdo.layout), chart);
  CHECK(structurally_equal(rp.phi_xx.phi.root(), parse_expression("(x[1]-xp[1])*th[1]", rp.phi_xx.layout).root()));
  CHECK(ex::is_num(a.root(), 1.0));
  // pointwise identity phi_XX(x,x',th) = phi(x,0,x',0,th)
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    VectorXd c(4);
    for (int j = 0; j < 4; ++j) c[j] = normal01(rng);
    VectorXd u = embed_restricted(ph, r.phi_xx, c);
    CHECK(r.phi_xx.phi.eval(std::span<const double>(c.data(), 4)) ==
          ph.phi.eval(std::span<const double>(u.data(), 6)));
  }
  EmbeddingChart bad{1, 1};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("rotation: both conditions pass") {
  auto S = build(full_phase(rot_text, 2, {{"a", alpha}}));
  REQUIRE(S.lxx.params.size() >= 20);
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(c1.pass());
  CHECK(c1.dim_lambda_xx == 2);
  CHECK(c1.clean.excess_over_transversal == 0);
  for (auto& g : S.lxx.points) {
    CHECK(std::fabs(g[0]) < 1e-9);
    CHECK(std::fabs(g[4]) < 1e-9);
  }
  auto c2 = check_condition_conormal(S.src, S.lxx);
  CHECK(c2.pass());
  // min of |(p,p')| / |full| over the unit circle: sqrt((1 - 1/sqrt 2) / 2)
  CHECK(c2.g_min == doctest::Approx(std::sqrt((1 - M_SQRT1_2) / 2)).epsilon(1e-6));
  auto T = trace_lagrangian(S.src, S.lxx);
  CHECK(T.immersive);
  CHECK(T.dim == 2);
  CHECK(T.isotropy < 1e-7);
  for (auto& z : T.points) {
    CHECK(std::fabs(z[0]) < 1e-9);
    CHECK(std::fabs(z[2]) < 1e-9);
  }
  CHECK(trace_order(0, chart, c1.dim_lambda_xx) == 0.5);
  auto pc = verify_parameter_space_cleanness(S.ph, S.r, S.crit_xx);
  CHECK(pc.pass);
  CHECK(pc.tangent_dim == 2);
  CHECK(diagram_residual(S.ph, S.r, S.crit_xx) < 1e-10);
}

TEST_CASE("half-wave: traced Lagrangian is the shift by t sgn p") {
  auto S = build(full_phase("(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2] + $t*norm(th)", 2, {{"t", 1.0}}));
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(c1.pass());
  CHECK(c1.dim_lambda_xx == 2);
  CHECK(check_condition_conormal(S.src, S.lxx).pass());
  auto T = trace_lagrangian(S.src, S.lxx);
  CHECK(T.dim == 2);
  for (auto& z : T.points) {
    double sg = z[1] > 0 ? 1 : -1;
    CHECK(z[0] == doctest::Approx(z[2] - sg));
    CHECK(z[1] == doctest::Approx(z[3]));
  }
  CHECK(verify_parameter_space_cleanness(S.ph, S.r, S.crit_xx).pass);
  CHECK(diagram_residual(S.ph, S.r, S.crit_xx) < 1e-10);
}

TEST_CASE("fiber pair: dim Lambda_XX = 4, excess 2") {
  auto S = build(full_phase("x[1]*th[1] + y[1]*th[2] - xp[1]*th[3] - yp[1]*th[4]", 4, {},
                            {"0.64*(th[1]^2+th[3]^2)-th[2]^2-th[4]^2"}));
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(c1.pass());
  CHECK(c1.dim_lambda_xx == 4);
  CHECK(c1.dim_lambda_xx - 2 * chart.dim_x == 2);
  CHECK(excess_of(S.r.phi_xx, S.crit_xx).e == 2);
  CHECK(check_condition_conormal(S.src, S.lxx).pass());
  auto T = trace_lagrangian(S.src, S.lxx);
  CHECK(T.dim == 2);
  CHECK(T.immersive);
  auto pc = verify_parameter_space_cleanness(S.ph, S.r, S.crit_xx);
  CHECK(pc.pass);
  CHECK(pc.tangent_dim == 4);
  CHECK(trace_order(-1, chart, 4) == doctest::Approx(0.5));
}

TEST_CASE("shift along X fails condition 2") {
  double a = 1;
  auto S = build(full_phase("(x[1]-xp[1]-$a)*th[1] + (y[1]-yp[1])*th[2]", 2, {{"a", a}}));
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(c1.pass());
  CHECK(c1.dim_lambda_xx == 3);
  auto c2 = check_condition_conormal(S.src, S.lxx);
  CHECK(!c2.pass());
  CHECK(c2.g_min < 1e-6);
  // witness (x, 0, 0, q; x - a, 0, 0, q)
  auto& w = c2.witness;
  CHECK(std::fabs(w[1]) < 1e-9);
  CHECK(std::fabs(w[2]) < 1e-6);
  CHECK(std::fabs(w[6]) < 1e-6);
  CHECK(w[0] - w[4] == doctest::Approx(a));
  CHECK(w[3] == doctest::Approx(w[7]));
}

TEST_CASE("shift off X: empty intersection, trace smoothing") {
  auto S = build(full_phase("(x[1]-xp[1]-1)*th[1] + (y[1]-yp[1]-0.5)*th[2]"));
  CHECK(S.lxx.empty);
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(c1.empty);
  CHECK(c1.pass());
  CHECK(check_condition_conormal(S.src, S.lxx).vacuous);
}

TEST_CASE("parabola tangency fails condition 1 with gap 1") {
  auto S = build(full_phase("(x[1]-xp[1])*th[1] + (y[1]-yp[1]-xp[1]^2)*th[2]", 2, {}, {"th[1]^2-th[2]^2"}));
  REQUIRE(S.lxx.params.size() >= 20);
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(!c1.pass());
  CHECK(c1.clean.tangent_gap == 1);
  auto pc = verify_parameter_space_cleanness(S.ph, S.r, S.crit_xx);
  CHECK(!pc.pass);
  CHECK(pc.tangent_gap == 1);
}

TEST_CASE("pdo conormal fails condition 2") {
  auto S = build(full_phase("(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]"));
  auto c1 = check_condition_clean(S.src, S.lxx);
  CHECK(c1.pass());
  auto c2 = check_condition_conormal(S.src, S.lxx);
  CHECK(!c2.pass());
  CHECK(c2.g_min < 1e-6);
  CHECK(c2.witness[0] == doctest::Approx(c2.witness[4]));
}

TEST_CASE("order and sobolev window") {
  CHECK(trace_order(0, chart, 2) == 0.5);
  CHECK(trace_order(2.5, chart, 2) == 3.0);
  auto w = check_sobolev_window(-3, chart);
  CHECK(!w.empty);
  CHECK(w.lo == -2.5);
  CHECK(w.hi == -0.5);
  CHECK(check_sobolev_window(0, chart).empty);
  CHECK(check_sobolev_window(-1, chart).empty);
}

TEST_CASE("report serialization") {
  TraceReport R;
  R.scenario = "demo";
  R.condition2.g_min = 0.25;
  R.condition2.witness = VectorXd::Zero(2);
  R.condition1.clean.empty = false;
  auto t = R.to_text();
  CHECK(t.find("condition2.g_min = 0.25") != std::string::npos);
  auto c = R.to_csv();
  CHECK(c.rfind("name,verdict,margin,witness\n", 0) == 0);
}
