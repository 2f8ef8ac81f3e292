#include "doctest.h"
#include "fiotrace/oscquad.hpp"

#include <cmath>

using namespace ftr;

namespace {

LayoutP xx_layout(int n) { return make_layout({{"x", 1}, {"xp", 1}, {"th", n}}); }

PhaseFunction phase(const std::string& text, int n, Params prm = {}) {
  auto L = xx_layout(n);
  return make_phase(parse_expression(text, L, prm), {"x"}, {"xp"});
}

Expression constant(const LayoutP& L, double v) { return Expression(ex::num(v), L); }

VectorXd vec(std::initializer_list<double> l) {
  VectorXd v(l.size());
  int i = 0;
  for (double x : l) v[i++] = x;
  return v;
}

// simpson on [a, b], independent of the library quadrature
template <class F>
double simpson(F f, double a, double b, int n = 20000) {
  double h = (b - a) / n, s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(a + i * h);
  return s * h / 3;
}

}  // namespace

TEST_CASE("extrapolation is exact on cubics") {
  std::vector<double> e{0.4, 0.3, 0.2, 0.1};
  std::vector<cplx> v;
  for (double x : e) v.push_back(cplx(1 + 2 * x - x * x + 0.5 * x * x * x, -x));
  auto [val, err] = extrapolate(e, v, 3);
  CHECK(std::abs(val - cplx(1, 0)) < 1e-12);
  auto [v2, err2] = extrapolate(e, v, 1);
  CHECK(err2 > 1e-3);
  (void)err;
  (void)v2;
}

TEST_CASE("mollified fourier integral of 1 matches the gaussian closed form") {
  auto L = make_layout({{"x", 1}, {"th", 1}});
  auto phi = parse_expression("x[1]*th[1]", L);
  MollifiedIntegralSpec s;
  s.epsilons = {0.4, 0.2, 0.1};
  s.hessian_normalize = false;
  s.nodes = 256;
  auto r = oscillatory_integral(phi, constant(L, 1), constant(L, 0), {1}, vec({3, 0}), s);
  for (auto& [e, v] : r.epsilon_trace) {
    double want = std::sqrt(M_PI / e) * std::exp(-9 / (4 * e));
    CHECK(std::fabs(v.real() - want) < 1e-10);
    CHECK(std::fabs(v.imag()) < 1e-12);
  }
  CHECK(s.epsilons.size() + 1 == r.epsilon_trace.size());
}

TEST_CASE("plain quadrature of the normal density") {
  auto L = make_layout({{"th", 2}});
  auto g = parse_expression("exp(-(th[1]^2+th[2]^2)/2)/(2*pi)", L);
  MollifiedIntegralSpec s;
  s.epsilons = {0};
  s.radius = 10;
  s.nodes = 64;
  s.hessian_normalize = false;
  auto r = oscillatory_integral(constant(L, 0), g, constant(L, 0), {0, 1}, vec({0, 0}), s);
  CHECK(std::fabs(r.value.real() - 1) < 1e-8);
  CHECK(r.value.imag() == 0);
  MollifiedIntegralSpec bad;
  bad.epsilons = {0};
  CHECK_THROWS(bad.validate());
  bad.epsilons = {0.1, 0.2};
  CHECK_THROWS(bad.validate());
}

TEST_CASE("delta pair against a bump in the fiber variables") {
  auto ph = phase("x[1]*th[1] - xp[1]*th[3]", 4);
  auto beta = parse_expression("((1-th[2]^2-th[4]^2 + abs(1-th[2]^2-th[4]^2))/2)^2", ph.layout);
  MollifiedIntegralSpec s;
  s.epsilons = {0.4, 0.2};
  s.halving_check = false;
  s.hessian_normalize = false;
  s.nodes = 96;
  auto r = oscillatory_integral(ph.phi, beta, constant(ph.layout, 0), ph.theta_slots, vec({0.3, 0.3, 0, 0, 0, 0}), s);
  for (auto& [e, v] : r.epsilon_trace) {
    double ep = e;
    double pq = M_PI / ep * std::exp(-2 * 0.09 / (4 * ep));
    double bq = M_PI * simpson([&](double u) { return (1 - u) * (1 - u) * std::exp(-ep * u); }, 0, 1);
    CHECK(std::abs(v - pq * bq) < 0.02 * pq * bq);
  }
}

TEST_CASE("linearity, amplitude zero, theta scaling") {
  auto ph = phase("(x[1]-xp[1])*th[1] + 0.3*th[1]^2 - 0.5*th[2]^2", 2);
  auto L = ph.layout;
  auto a1 = parse_expression("exp(-th[1]^2)", L);
  auto a2 = parse_expression("th[2]*exp(-th[2]^2)", L);
  auto comb = parse_expression("exp(-th[1]^2) + 2*th[2]*exp(-th[2]^2)", L);
  MollifiedIntegralSpec s;
  s.epsilons = {0.4, 0.2, 0.1};
  s.hessian_normalize = false;
  VectorXd z = vec({0.4, -0.1, 0, 0});
  auto r1 = oscillatory_integral(ph.phi, a1, constant(L, 0), ph.theta_slots, z, s);
  auto r2 = oscillatory_integral(ph.phi, a2, constant(L, 0), ph.theta_slots, z, s);
  auto rc = oscillatory_integral(ph.phi, comb, constant(L, 0), ph.theta_slots, z, s);
  CHECK(std::abs(rc.value - (r1.value + 2.0 * r2.value)) < 1e-12 * (1 + std::abs(rc.value)));
  auto r0 = oscillatory_integral(ph.phi, constant(L, 0), constant(L, 0), ph.theta_slots, z, s);
  CHECK(r0.value == cplx(0));

  // theta = 2 eta: the eta integral carries 2^N
  MollifiedIntegralSpec p;
  p.epsilons = {0};
  p.hessian_normalize = false;
  p.nodes = 160;
  auto f1 = parse_expression("x[1]*th[1] - 0.7*th[2] + 0.2*th[1]*th[2]", L);
  auto f2 = parse_expression("2*x[1]*th[1] - 1.4*th[2] + 0.8*th[1]*th[2]", L);
  auto w1 = parse_expression("exp(-(th[1]^2+th[2]^2)/2)", L);
  auto w2 = parse_expression("4*exp(-2*(th[1]^2+th[2]^2))", L);
  p.radius = 14;
  auto I1 = oscillatory_integral(f1, w1, constant(L, 0), ph.theta_slots, z, p);
  p.radius = 7;
  auto I2 = oscillatory_integral(f2, w2, constant(L, 0), ph.theta_slots, z, p);
  CHECK(std::abs(I1.value - I2.value) < 1e-10);
}

TEST_CASE("rotation: kernel vanishes off the origin, oracle agrees with b0") {
  double a = M_PI / 4;
  auto ph = phase("(x[1]-xp[1]*cos($a))*th[1] - xp[1]*sin($a)*th[2]", 2, {{"a", a}});
  auto L = ph.layout;
  MollifiedIntegralSpec k;
  k.epsilons = {0.016, 0.008, 0.004, 0.002};
  k.halving_check = false;
  k.nodes = 1024;
  auto K = trace_kernel_value(ph, constant(L, 1), constant(L, 0), 2, vec({0.5}), vec({0.7}), k);
  double prev = INFINITY;
  for (auto& [e, v] : K.epsilon_trace) {
    CHECK(std::abs(v) < prev);
    prev = std::abs(v);
  }
  CHECK(prev < 1e-3 * std::abs(K.epsilon_trace.front().second));

  std::mt19937_64 rng(1);
  auto crit = solve_critical_set(ph, SeedSpec{}, rng);
  auto chart = make_chart(1, {}, {}, std::string("0"));
  AmplitudeEngine E(ph, chart, identity_splitting(2), constant(L, 1), constant(L, 0), crit.points, 2);
  VectorXd w = 40 * vec({1, std::cos(a)});
  MollifiedIntegralSpec s;
  s.epsilons = {0.4, 0.3, 0.2, 0.1};
  s.halving_check = false;
  auto r = amplitude_oracle(E, w, s);
  double want = E.leading_amplitude(w).b0.real();
  CHECK(std::abs(r.value - want) < 0.05 * want);
  CHECK(r.error_estimate < 0.05 * want);
  CHECK_FALSE(r.inconclusive);
  CHECK(r.evaluations > 0);
}

TEST_CASE("oracle refuses integrals above four dimensions") {
  auto ph = phase("x[1]*th[1] - xp[1]*th[3]", 4);
  auto chart = make_chart(1, {}, {}, std::string("0"));
  AmplitudeEngine E(ph, chart, identity_splitting(4), constant(ph.layout, 1), constant(ph.layout, 0),
                    {vec({0, 0, 1, 0, 0, 0})}, 2);
  CHECK_THROWS_AS(amplitude_oracle(E, vec({1, 1}), MollifiedIntegralSpec{}), OracleTooLarge);
}

TEST_CASE("wavepackets: half-wave shifts by t, rotation kills a packet away from 0") {
  double t = 1;
  auto hw = phase("(x[1]-xp[1])*th[1] + $t*norm(th)", 2, {{"t", t}});
  MollifiedIntegralSpec s;
  s.epsilons = {0.4, 0.2, 0.1};
  s.halving_check = false;
  std::vector<double> xs;
  for (int i = 0; i <= 30; ++i) xs.push_back(-2.5 + 0.1 * i);
  auto W = wavepacket_operator_check(hw, constant(hw.layout, 1), constant(hw.layout, 0), 2, 0.0, 20.0, 0.5, -t, xs, s);
  CHECK(std::fabs(W.output_center - W.predicted_center) < 0.05);
  // the q integral contributes sqrt(2 pi p0 / t) e^{i pi/4}
  CHECK(W.output_mass == doctest::Approx(W.input_mass * 20 / (2 * M_PI * t)).epsilon(0.1));

  auto rot = phase("(x[1]-xp[1]*cos($a))*th[1] - xp[1]*sin($a)*th[2]", 2, {{"a", M_PI / 4}});
  std::vector<double> ys;
  for (int i = 0; i <= 20; ++i) ys.push_back(-1 + 0.1 * i);
  auto V =
      wavepacket_operator_check(rot, constant(rot.layout, 1), constant(rot.layout, 0), 2, 3.0, 20.0, 0.3, 0, ys, s);
  CHECK(V.output_mass < 1e-3 * V.input_mass);
}
