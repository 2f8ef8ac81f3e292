// acceptance suite: one PASS/FAIL line per criterion
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fiotrace/scenario.hpp"

using namespace ftr;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = true;
  std::vector<std::string> msgs;
  void need(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      msgs.push_back("FAILED " + what);
    }
  }
  void info(const std::string& s) { msgs.push_back(s); }
};

double secs(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

VectorXd vec2(double a, double b) {
  VectorXd v(2);
  v << a, b;
  return v;
}

// oracle comparison rows: scenario,quantity,lambda,oracle_re,oracle_im,predicted_re,predicted_im,ratio,error_estimate,verdict
std::vector<std::string> oracle_csv;

void record(const std::string& sc, double lam, const OracleRow& r) {
  cplx pred = r.derived.value_or(cplx(0));
  double ratio = std::abs(pred) > 0 ? std::abs(r.oracle.value / pred) : 0;
  oracle_csv.push_back(sc + ",amplitude," + shortest(lam) + "," + shortest(r.oracle.value.real()) + "," +
                       shortest(r.oracle.value.imag()) + "," + shortest(pred.real()) + "," + shortest(pred.imag()) +
                       "," + shortest(ratio) + "," + shortest(r.oracle.error_estimate) + "," + r.verdict);
}

ScenarioConfig with_param(ScenarioConfig c, const std::string& k, double v) {
  apply_params(c, {k + "=" + shortest(v)});
  return c;
}

std::optional<OracleRow> rot40;  // shared by AC1 and AC7

Verdict ac1() {
  Verdict V;
  for (double a : {M_PI / 6, M_PI / 4, M_PI / 3}) {
    auto t0 = Clock::now();
    auto P = run_check(with_param(builtin_scenario("rotation").config, "a", a), 1);
    V.need(P->exit_code == 0, "rotation check at a=" + fmt(a));
    if (P->exit_code != 0) continue;
    auto E = make_amplitude_engine(*P);
    double want = 1 / (2 * M_PI * std::fabs(std::sin(a)));
    double worst = 0;
    for (double lam : {1.0, 2.0, 5.0, 10.0, 40.0}) {
      auto b = E->leading_amplitude(lam * vec2(1, std::cos(a)));
      worst = std::max(worst, std::abs(b.b0 - want) / want);
    }
    V.need(worst < 1e-6, "analytic b0 rel err " + fmt(worst));
    auto O = run_oracle(*P, "amplitude", "40", PrefactorMode::Derived, false);
    auto& r = O.rows.at(0);
    record("rotation(a=" + fmt(a) + ")", 40, r);
    double rel = r.derived ? std::abs(r.oracle.value / *r.derived - 1.0) : 1;
    V.need(rel < 0.05, "oracle vs b0 at lambda 40: rel " + fmt(rel));
    V.need(r.oracle.halving_ok && !r.oracle.inconclusive, "oracle halving/inconclusive");
    if (std::fabs(a - M_PI / 4) < 1e-12) rot40 = r;
    double t = secs(t0);
    V.need(t < 60, "runtime " + fmt(t) + " s");
    V.info("a=" + fmt(a) + ": b0 err " + fmt(worst) + ", oracle rel " + fmt(rel) + ", " + fmt(t) + " s");
  }
  return V;
}

Verdict ac2() {
  Verdict V;
  auto t0 = Clock::now();
  auto P = run_check(builtin_scenario("halfwave").config, 1);
  V.need(P->exit_code == 0, "halfwave check");
  if (P->exit_code != 0) return V;
  V.need(P->report.traced_order == 0.5, "traced order " + shortest(P->report.traced_order));
  auto E = make_amplitude_engine(*P);
  double worst = 0;
  for (double p : {1.0, 2.5, 7.0, 16.0})
    for (double xp : {0.0, 0.3, -0.7}) {
      cplx want = std::polar(std::sqrt(p) / (2 * M_PI), M_PI / 4);
      auto b = E->leading_amplitude(vec2(p, xp));
      worst = std::max(worst, std::abs(b.b0 - want) / std::abs(want));
    }
  V.need(worst < 1e-6, "b0 rel err " + fmt(worst));
  // least-squares slope of log|b0| over lambda in [1, 16]
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (double lam : {1.0, 2.0, 4.0, 8.0, 16.0}) {
    double lx = std::log(lam), ly = std::log(std::abs(E->leading_amplitude(vec2(lam, 0)).b0));
    sx += lx, sy += ly, sxx += lx * lx, sxy += lx * ly, ++n;
  }
  double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  V.need(std::fabs(slope - 0.5) <= 0.02, "slope " + fmt(slope));
  auto O = run_oracle(*P, "amplitude", "40", PrefactorMode::Derived, false);
  auto& r = O.rows.at(0);
  record("halfwave", 40, r);
  double ph = std::arg(r.oracle.value);
  double mag = std::abs(r.oracle.value) / (std::sqrt(40.0) / (2 * M_PI));
  V.need(std::fabs(ph - M_PI / 4) < 0.1, "oracle phase " + fmt(ph));
  V.need(mag > 0.95 && mag < 1.05, "oracle magnitude ratio " + fmt(mag));
  V.need(r.oracle.halving_ok && !r.oracle.inconclusive, "oracle halving/inconclusive");
  double t = secs(t0);
  V.need(t < 90, "runtime " + fmt(t) + " s");
  V.info("b0 err " + fmt(worst) + ", slope " + fmt(slope) + ", oracle phase " + fmt(ph) + " mag " + fmt(mag) + ", " +
         fmt(t) + " s");
  return V;
}

Verdict ac3() {
  Verdict V;
  auto t0 = Clock::now();
  auto P = run_check(builtin_scenario("fiberpair").config, 1);
  V.need(P->exit_code == 0, "fiberpair check");
  if (P->exit_code != 0) return V;
  auto X = excess_of(P->r.phi_xx, P->crit_xx);
  V.need(X.e == 2 && X.from_rank == 2 && X.from_dim == 2,
         "excess rank/dim " + std::to_string(X.from_rank) + "/" + std::to_string(X.from_dim));
  auto E = make_amplitude_engine(*P);
  double c = P->cfg.params.at("c");
  double dworst = 0, bworst = 0;
  for (auto w : {vec2(1, 1), vec2(2, 0.5), vec2(0.7, -1.3)}) {
    auto F = E->fiber_trace(w);
    double dw = 2 * c * w.norm();
    dworst = std::max(dworst, std::fabs(F.diameter - dw) / dw);
    // (2 pi)^-2 times the integral of (1 - r^2/R^2)^2 over the disk of radius R = c |w|
    double want = M_PI * c * c * w.squaredNorm() / 3 / std::pow(2 * M_PI, 2);
    auto b = E->leading_amplitude(w);
    bworst = std::max(bworst, std::abs(b.b0 - want) / want);
  }
  V.need(dworst < 0.01, "fiber diameter rel err " + fmt(dworst));
  V.need(bworst < 1e-4, "bump integral rel err " + fmt(bworst));
  double t = secs(t0);
  V.need(t < 120, "runtime " + fmt(t) + " s");
  V.info("e = 2 (rank and dim), diameter err " + fmt(dworst) + ", b0 err " + fmt(bworst) + ", " + fmt(t) + " s");
  return V;
}

Verdict ac4() {
  Verdict V;
  auto sh = run_check(builtin_scenario("shift_along_x").config, 1);
  V.need(sh->exit_code == 2, "shift exit " + std::to_string(sh->exit_code));
  V.need(sh->report.condition1.pass() && !sh->report.condition2.pass() && sh->report.condition2.g_min < 1e-6,
         "shift condition 2 gap " + shortest(sh->report.condition2.g_min));
  auto pb = run_check(builtin_scenario("parabola_tangency").config, 1);
  V.need(pb->exit_code == 2, "parabola exit " + std::to_string(pb->exit_code));
  V.need(!pb->report.condition1.pass() && pb->report.condition1.clean.tangent_gap == 1,
         "parabola tangent gap " + std::to_string(pb->report.condition1.clean.tangent_gap));
  auto pd = run_check(builtin_scenario("pdo_conormal").config, 1);
  V.need(pd->exit_code == 2, "pdo exit " + std::to_string(pd->exit_code));
  V.need(!pd->report.condition2.pass(), "pdo condition 2");
  auto A = run_amplitude(*pd, {vec2(0.3, 1)}, PrefactorMode::Derived, true);
  bool unbounded = !A.rows.empty() && A.rows[0].status.rfind("UnboundedFiber", 0) == 0;
  V.need(unbounded, "pdo --force unbounded fiber");
  V.need(A.exit_code == 2, "pdo forced exit " + std::to_string(A.exit_code));
  V.info("shift g_min " + shortest(sh->report.condition2.g_min) + ", parabola gap " +
         std::to_string(pb->report.condition1.clean.tangent_gap) + ", pdo forced: " +
         (A.rows.empty() ? std::string("-") : A.rows[0].status.substr(0, 14)));
  return V;
}

// d/ds symbolic vs central differences at random points away from singular loci
double derivative_defect(const PhaseFunction& ph, std::mt19937_64& rng, int samples) {
  int D = ph.layout->total_dim();
  std::vector<Expression> d;
  for (int s = 0; s < D; ++s) d.push_back(differentiate(ph.phi, s));
  double worst = 0;
  int done = 0;
  while (done < samples) {
    VectorXd u(D);
    for (int s = 0; s < D; ++s) u[s] = 2 * uniform01(rng) - 1;
    for (int s : ph.theta_slots) u[s] = 2 * normal01(rng);
    std::span<const double> pt(u.data(), D);
    if (ph.phi.singular_margin(pt) < 1e-2) continue;
    ++done;
    for (int s = 0; s < D; ++s) {
      double h = 1e-5 * (1 + std::fabs(u[s]));
      VectorXd a = u, b = u;
      a[s] += h;
      b[s] -= h;
      double fd = (ph.phi.eval(std::span<const double>(a.data(), D)) -
                   ph.phi.eval(std::span<const double>(b.data(), D))) / (2 * h);
      double sym = d[s].eval(pt);
      worst = std::max(worst, std::fabs(sym - fd) / (1 + std::fabs(sym)));
    }
  }
  return worst;
}

Verdict ac5() {
  Verdict V;
  const int S = 100;
  std::vector<std::pair<std::string, ScenarioConfig>> all;
  for (auto& n : builtin_names()) {
    auto B = builtin_scenario(n);
    all.push_back({n, B.config});
    if (B.canonical) all.push_back({n + "[canonical]", *B.canonical});
  }
  for (auto& [name, cfg] : all) {
    cfg.property_samples = S;
    auto P = run_check(cfg, 7);
    std::mt19937_64 rng(11);
    std::string tag = name + ": ";
    if (P->canonical) {
      auto C = validate_canonical(*P->canonical, rng, S);
      V.need(C.homogeneity_residual < 1e-9, tag + "canonical homogeneity " + shortest(C.homogeneity_residual));
      V.need(C.symplectic_residual < 1e-7, tag + "symplectic residual " + shortest(C.symplectic_residual));
      auto G = graph_lagrangian(*P->canonical, rng, S);
      V.need(G.isotropy < 1e-7, tag + "graph isotropy " + shortest(G.isotropy));
    }
    if (!P->have_phase) continue;
    V.need(P->validation.samples >= S, tag + "euler samples");
    V.need(P->validation.euler_residual < 1e-9, tag + "euler residual " + shortest(P->validation.euler_residual));
    auto LS = lagrangian_samples(P->ph, P->crit);
    V.need(LS.isotropy < 1e-7, tag + "isotropy on Lambda " + shortest(LS.isotropy));
    if (!P->traced.points.empty())
      V.need(P->traced.isotropy < 1e-7, tag + "isotropy on the trace " + shortest(P->traced.isotropy));
    if (!P->crit_xx.empty()) {
      double dr = diagram_residual(P->ph, P->r, P->crit_xx);
      V.need(dr < 1e-10, tag + "diagram residual " + shortest(dr));
    }
    double dd = derivative_defect(P->ph, rng, S);
    V.need(dd < 1e-6, tag + "symbolic vs finite differences " + shortest(dd));
    if (P->exit_code == 0 && !P->traced.points.empty()) {
      auto E = make_amplitude_engine(*P);
      const auto& ch = E->big().chart();
      double cv = 0, det = 1e300;
      for (int i = 0; i < S; ++i) {
        const auto& z = P->traced.points[i % P->traced.points.size()];
        VectorXd w = chart_coords(ch, z) * (0.5 + 2.5 * uniform01(rng));
        auto d = E->find_stationary_point(w);
        cv = std::max(cv, std::fabs(d.critical_value));
        det = std::min(det, std::fabs(d.det));
      }
      V.need(cv < 1e-9, tag + "critical value " + shortest(cv));
      V.need(det > 1e-8, tag + "hessian |det| " + shortest(det));
    }
  }
  V.info(std::to_string(all.size()) + " configs x " + std::to_string(S) + " samples");
  return V;
}

Verdict ac6() {
  Verdict V;
  int n = 0;
  for (auto& name : builtin_names()) {
    auto B = builtin_scenario(name);
    if (!B.canonical) continue;
    auto C = run_check(*B.canonical, 1);
    auto Ph = run_check(B.config, 1);
    if (!C->corollary) {
      V.need(false, name + ": no corollary report");
      continue;
    }
    auto& K = *C->corollary;
    ++n;
    V.need(K.agree(), name + ": corollary vs theorem on the graph");
    V.need(K.cond1_pass() == Ph->report.condition1.pass() && K.cond2_pass() == Ph->report.condition2.pass(),
           name + ": corollary vs phase-based theorem");
    V.info(name + " " + (K.cond1_pass() ? "1" : "0") + (K.cond2_pass() ? "1" : "0"));
  }
  V.need(n == 5, "canonical scenario count " + std::to_string(n));
  return V;
}

Verdict ac7() {
  Verdict V;
  auto P = run_check(builtin_scenario("rotation").config, 1);
  V.need(P->exit_code == 0, "rotation check");
  if (P->exit_code != 0) return V;
  std::string confirmed;
  for (double lam : {10.0, 20.0, 40.0}) {
    OracleRow r;
    if (lam == 40 && rot40) {
      r = *rot40;
    } else {
      auto O = run_oracle(*P, "amplitude", shortest(lam), PrefactorMode::Derived, false);
      r = O.rows.at(0);
      record("rotation(a=0.7854)", lam, r);
    }
    if (!r.derived || !r.paper) {
      V.need(false, "predictions missing at lambda " + fmt(lam));
      continue;
    }
    double rd = std::abs(r.oracle.value / *r.derived), rp = std::abs(r.oracle.value / *r.paper);
    bool d = std::fabs(rd - 1) < 0.05, p = std::fabs(rp - 1) < 0.05;
    V.need(d != p, "exactly one mode within 5% at lambda " + fmt(lam));
    double reject = d ? std::max(rp, 1 / rp) : std::max(rd, 1 / rd);
    V.need(reject >= 2 * M_PI * 0.8, "rejection factor " + fmt(reject));
    V.need(r.oracle.halving_ok && !r.oracle.inconclusive, "oracle halving/inconclusive at lambda " + fmt(lam));
    std::string m = d ? "derived" : p ? "paper" : "none";
    if (confirmed.empty()) confirmed = m;
    V.need(m == confirmed, "same mode at every lambda");
    V.info("lambda " + fmt(lam) + ": derived " + fmt(rd) + ", paper " + fmt(rp));
  }
  V.info("confirmed mode = " + confirmed);
  return V;
}

}  // namespace

int main(int argc, char** argv) {
  std::string csv = argc > 1 ? argv[1] : "acceptance_oracles.csv";
  struct Item {
    const char* id;
    Verdict (*fn)();
  };
  Item items[] = {{"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5}, {"AC6", ac6}, {"AC7", ac7}};
  bool all = true;
  for (auto& it : items) {
    auto t0 = Clock::now();
    Verdict v;
    try {
      v = it.fn();
    } catch (const std::exception& e) {
      v.need(false, std::string("exception: ") + e.what());
    }
    all &= v.pass;
    std::string detail;
    for (auto& m : v.msgs) detail += (detail.empty() ? "" : "; ") + m;
    std::cout << it.id << " " << (v.pass ? "PASS" : "FAIL") << " (" << fmt(secs(t0)) << " s) " << detail << std::endl;
  }
  std::ofstream f(csv);
  f << "scenario,quantity,lambda,oracle_re,oracle_im,predicted_re,predicted_im,ratio,error_estimate,verdict\n";
  for (auto& l : oracle_csv) f << l << "\n";
  return all ? 0 : 1;
}
