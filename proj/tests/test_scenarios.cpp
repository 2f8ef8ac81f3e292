#include "doctest.h"
#include "fiotrace/scenario.hpp"

#include <cmath>

using namespace ftr;

TEST_CASE("builtins round-trip through ini") {
  for (auto& n : builtin_names()) {
    auto B = builtin_scenario(n);
    auto c = parse_config(to_ini(B.config), n);
    CHECK(c.name == n);
    CHECK(c.phase == B.config.phase);
    CHECK(c.params == B.config.params);
    CHECK(c.I == B.config.I);
    CHECK(c.Ip == B.config.Ip);
    CHECK(c.cone == B.config.cone);
    CHECK(c.quad.epsilons == B.config.quad.epsilons);
    CHECK(to_ini(c) == to_ini(B.config));
    if (B.canonical) CHECK(to_ini(parse_config(to_ini(*B.canonical))) == to_ini(*B.canonical));
  }
  CHECK_THROWS_AS(builtin_scenario("nope"), std::invalid_argument);
}

TEST_CASE("config errors carry section and line") {
  const char* zero_theta =
      "[space]\ndim_m = 2\ndim_x = 1\n[phase]\nphi = \"x[1]\"\nn_theta = 0\n";
  try {
    parse_config(zero_theta);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.section == "phase");
    CHECK(e.line == 6);
  }
  const char* both =
      "[phase]\nphi = \"(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]\"\nn_theta = 2\n"
      "[canonical]\npsi = \"x[1]\", \"y[1]\"\npsi_inverse = \"x[1]\", \"y[1]\"\n";
  try {
    parse_config(both);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.section == "canonical");
    CHECK(std::string(e.what()).find("ambiguous") != std::string::npos);
  }
  const char* bad_expr = "[phase]\nphi = \"x[1]*th[1] +\"\nn_theta = 1\n";
  try {
    parse_config(bad_expr);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line == 2);
    CHECK(std::string(e.what()).find("position") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("[phase]\nphi = \"x[1]*th[1]\"\nn_theta = 1\nbogus = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nosuch]\n"), ConfigError);
  auto c = builtin_scenario("rotation").config;
  CHECK_THROWS_AS(apply_params(c, {"zz=1"}), std::invalid_argument);
  apply_params(c, {"a=pi/3"});
  CHECK(c.params["a"] == doctest::Approx(M_PI / 3));
}

TEST_CASE("check exit codes") {
  CHECK(run_check(builtin_scenario("rotation").config, 1)->exit_code == 0);
  auto sh = run_check(builtin_scenario("shift_along_x").config, 1);
  CHECK(sh->exit_code == 2);
  CHECK(sh->report.condition1.pass());
  CHECK_FALSE(sh->report.condition2.pass());
  auto pb = run_check(builtin_scenario("parabola_tangency").config, 1);
  CHECK(pb->exit_code == 2);
  CHECK_FALSE(pb->report.condition1.pass());
  // the lifted point transformation behaves like the phase form
  auto lift = run_check(*builtin_scenario("rotation").canonical, 1);
  CHECK(lift->exit_code == 0);
  REQUIRE(lift->corollary);
  CHECK(lift->corollary->agree());
}

TEST_CASE("amplitude grids") {
  auto P = run_check(builtin_scenario("rotation").config, 3);
  REQUIRE(P->exit_code == 0);
  auto grid = parse_w_grid("ray:1,0.70710678118654757:1,2,3,4,5,6,7,8,9,10", 2);
  CHECK(grid.size() == 10);
  auto A = run_amplitude(*P, grid, PrefactorMode::Derived, false);
  REQUIRE(A.rows.size() == 10);
  for (auto& r : A.rows) {
    REQUIRE(r.ok);
    // order 1/2 - 1/2 = 0 on the trace: constant along rays
    CHECK(std::abs(r.b.b0 - A.rows[0].b.b0) < 1e-6 * std::abs(A.rows[0].b.b0));
  }
  auto T = A.table();
  CHECK(T.header.front() == "w1");
  CHECK(T.rows.size() == 10);
  CHECK(parse_w_grid("1,2;3,4", 2).size() == 2);
  CHECK(parse_w_grid("line:0,1:1,1:5", 2)[2][0] == doctest::Approx(0.5));
  CHECK_THROWS(parse_w_grid("1,2,3", 2));

  auto H = run_check(builtin_scenario("halfwave").config, 3);
  REQUIRE(H->exit_code == 0);
  auto hw = run_amplitude(*H, parse_w_grid("ray:1,0:4,16", 2), PrefactorMode::Derived, false);
  REQUIRE(hw.rows.size() == 2);
  REQUIRE(hw.rows[0].ok);
  REQUIRE(hw.rows[1].ok);
  double slope = std::log(std::abs(hw.rows[1].b.b0) / std::abs(hw.rows[0].b.b0)) / std::log(4.0);
  CHECK(slope == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("csv quoting and forced runs") {
  Table t{{"a", "b"}, {{"1", "x,y"}, {"q\"", ""}}};
  CHECK(t.to_csv() == "a,b\n1,\"x,y\"\n\"q\"\"\",\n");
  auto P = run_check(builtin_scenario("pdo_conormal").config, 1);
  CHECK(P->exit_code == 2);
  auto A = run_amplitude(*P, parse_w_grid("0.3,1", 2), PrefactorMode::Derived, false);
  CHECK(A.rows.empty());
  CHECK(A.exit_code == 2);
  auto F = run_amplitude(*P, parse_w_grid("0.3,1", 2), PrefactorMode::Derived, true);
  REQUIRE(F.rows.size() == 1);
  CHECK_FALSE(F.rows[0].ok);
  CHECK(F.rows[0].status.find("UnboundedFiber") != std::string::npos);
  CHECK(F.table().rows[0][F.table().header.size() - 2] == "non-certified");
}

TEST_CASE("trace kernel oracle with zero amplitude") {
  auto c = builtin_scenario("rotation").config;
  c.amp_re = "0";
  auto P = run_check(c, 1);
  REQUIRE(P->exit_code == 0);
  auto O = run_oracle(*P, "trace_kernel", "0.5,0.7", PrefactorMode::Derived, false);
  REQUIRE(O.rows.size() == 1);
  CHECK(std::abs(O.rows[0].oracle.value) == 0.0);
}
