#include "fiotrace/trace.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace ftr {

void EmbeddingChart::validate() const {
  if (dim_x < 1) throw std::invalid_argument("embedding chart: dim X must be at least 1");
  if (nu() < 1) throw std::invalid_argument("embedding chart: codimension must be at least 1");
}

static std::vector<int> block_slots(const BlockLayout& L, const std::string& b) {
  std::vector<int> s;
  for (int i = 1; i <= L.dim(b); ++i) s.push_back(L.slot(b, i));
  return s;
}

LagrangianSource source_from_phase(const PhaseFunction& ph, const CriticalManifold& crit, const EmbeddingChart& ch) {
  ch.validate();
  const auto& L = *ph.layout;
  for (auto b : {"x", "y", "xp", "yp"})
    if (!L.has(b)) throw std::invalid_argument(std::string("phase layout lacks block '") + b + "'");
  if (L.dim("x") != ch.dim_x || L.dim("y") != ch.nu())
    throw std::invalid_argument("phase layout does not match the embedding chart");
  LagrangianSource S;
  S.kind = "phase";
  S.lambda = make_submanifold(ph.layout, gradient(ph.phi, ph.theta_slots), crit.dim, ph.theta_slots, ph.cone);
  S.gamma = gamma_field(ph);
  S.y_slots = block_slots(L, "y");
  auto yp = block_slots(L, "yp");
  S.y_slots.insert(S.y_slots.end(), yp.begin(), yp.end());
  S.n = ch.dim_m;
  S.k = ch.dim_x;
  return S;
}

// ---------------------------------------------------------------- restriction

static bool is_y_block(const std::string& b) { return b == "y" || b == "yp"; }

Expression restrict_expression(const Expression& e, const LayoutP& R) {
  const auto& L = *e.layout();
  std::vector<NodeP> map(L.total_dim());
  for (int s = 0; s < L.total_dim(); ++s) {
    auto [bi, idx] = L.locate(s);
    const auto& name = L.blocks()[bi].name;
    if (is_y_block(name)) map[s] = ex::num(0);
    else if (R->has(name) && idx <= R->dim(name)) map[s] = ex::var(R->slot(name, idx));
    else throw std::invalid_argument("restricted layout lacks " + L.slot_name(s));
  }
  return rebind(e, R, map);
}

RestrictedPhase restrict_phase(const PhaseFunction& ph, const EmbeddingChart& ch) {
  ch.validate();
  auto R = make_layout({{"x", ch.dim_x}, {"xp", ch.dim_x}, {"th", ph.n_theta}});
  std::vector<Expression> cone;
  for (auto& c : ph.cone) cone.push_back(restrict_expression(c, R));
  RestrictedPhase r;
  r.phi_xx = make_phase(restrict_expression(ph.phi, R), {"x"}, {"xp"}, cone);
  r.parent = &ph;
  return r;
}

std::pair<RestrictedPhase, Expression> restrict_phase_and_amplitude(const PhaseFunction& ph, const Expression& amp,
                                                                   const EmbeddingChart& ch) {
  auto r = restrict_phase(ph, ch);
  return {r, restrict_expression(amp, r.phi_xx.layout)};
}

VectorXd embed_restricted(const PhaseFunction& parent, const PhaseFunction& phi_xx, const VectorXd& c) {
  const auto& P = *parent.layout;
  const auto& R = *phi_xx.layout;
  VectorXd u = VectorXd::Zero(P.total_dim());
  for (int s = 0; s < R.total_dim(); ++s) {
    auto [bi, idx] = R.locate(s);
    u[P.slot(R.blocks()[bi].name, idx)] = c[s];
  }
  return u;
}

// ---------------------------------------------------------------- Lambda_XX

ConstraintSubmanifold xx_constraint(const LagrangianSource& src) {
  std::vector<Expression> ys;
  for (int s : src.y_slots) ys.push_back(Expression(ex::var(s), src.lambda.layout));
  return make_submanifold(src.lambda.layout, ys, src.lambda.ambient_dim() - (int)src.y_slots.size());
}

LambdaXX lambda_xx_samples(const LagrangianSource& src, int count, std::mt19937_64& rng,
                           const std::vector<VectorXd>& seeds, SampleBox box) {
  auto B = xx_constraint(src);
  auto I = sample_intersection(src.lambda, B, count, box, rng, seeds);
  LambdaXX R;
  R.params = I.points;
  R.empty = I.empty;
  R.inconclusive = I.inconclusive;
  R.best_residual = I.best_residual;
  for (auto& u : R.params) R.points.push_back(src.gamma.eval(u));
  return R;
}

static MatrixXd intersection_tangent(const LagrangianSource& src, const VectorXd& u) {
  MatrixXd JA = src.lambda.constraints.jac(u);
  MatrixXd JS(JA.rows() + src.y_slots.size(), JA.cols());
  JS.topRows(JA.rows()) = JA;
  JS.bottomRows(src.y_slots.size()).setZero();
  for (size_t i = 0; i < src.y_slots.size(); ++i) JS(JA.rows() + i, src.y_slots[i]) = 1;
  return null_space(JS);
}

Condition1 check_condition_clean(const LagrangianSource& src, const LambdaXX& lxx) {
  Condition1 C;
  C.empty = lxx.empty;
  C.inconclusive = lxx.inconclusive;
  if (lxx.params.empty()) {
    C.clean.empty = true;
    C.clean.is_manifold = false;
    return C;
  }
  C.clean = clean_intersection_check(src.lambda, xx_constraint(src), lxx.params);
  for (auto& u : lxx.params) {
    int d = numeric_rank(src.gamma.jac(u) * intersection_tangent(src, u));
    if (C.dim_lambda_xx < 0) C.dim_lambda_xx = d;
    else if (d != C.dim_lambda_xx) C.clean.is_manifold = false;
  }
  return C;
}

// ---------------------------------------------------------------- condition 2

double conormal_ratio(const VectorXd& g, int n, int k) {
  double num = g.segment(n, k).squaredNorm() + g.segment(3 * n, k).squaredNorm();
  double den = g.segment(n, n).squaredNorm() + g.segment(3 * n, n).squaredNorm();
  if (den == 0) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(num / den);
}

static Expression scaled(const Expression& e, double w) { return e.with_root(ex::mul(ex::num(w), e.root())); }

static Expression fiber_normalization(const LagrangianSource& src) {
  NodeP s = ex::num(-1);
  for (int c : src.lambda.conic_slots) s = ex::add(s, ex::mul(ex::var(c), ex::var(c)));
  return Expression(s, src.lambda.layout);
}

Condition2 check_condition_conormal(const LagrangianSource& src, const LambdaXX& lxx, double delta) {
  Condition2 C;
  C.delta = delta;
  if (lxx.params.empty()) {
    C.vacuous = true;
    return C;
  }
  int n = src.n, k = src.k;
  std::vector<double> ratio(lxx.points.size());
  for (size_t i = 0; i < ratio.size(); ++i) ratio[i] = conormal_ratio(lxx.points[i], n, k);
  std::vector<size_t> order(ratio.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return ratio[a] < ratio[b]; });
  C.g_min = ratio[order[0]];
  C.witness = lxx.points[order[0]];
  C.witness_param = lxx.params[order[0]];

  // penalized least squares driving (p, p') to zero on the slice, then exact projection back
  const double W = 1e3;
  std::vector<Expression> pen, proj;
  for (auto& e : src.lambda.constraints.exprs()) {
    pen.push_back(scaled(e, W));
    proj.push_back(e);
  }
  for (int s : src.y_slots) {
    Expression y(ex::var(s), src.lambda.layout);
    pen.push_back(scaled(y, W));
    proj.push_back(y);
  }
  auto nrm = fiber_normalization(src);
  pen.push_back(scaled(nrm, W));
  proj.push_back(nrm);
  for (int i = 0; i < k; ++i) {
    pen.push_back(src.gamma.exprs()[n + i]);
    pen.push_back(src.gamma.exprs()[3 * n + i]);
  }
  ExprField Fpen(pen, src.lambda.layout), Fproj(proj, src.lambda.layout);
  GNOptions go;
  go.max_iter = 200;
  go.tol = 1e-14;
  GNOptions po;
  po.tol = 1e-12;
  auto project = [&](const VectorXd& u, VectorXd& out) {
    auto g = gauss_newton(Fproj, u, po);
    if (!g.converged || !src.lambda.in_domain(g.x)) return false;
    out = g.x;
    return true;
  };
  auto consider = [&](const VectorXd& u) {
    VectorXd g = src.gamma.eval(u);
    double r = conormal_ratio(g, n, k);
    if (r < C.g_min) {
      C.g_min = r;
      C.witness = g;
      C.witness_param = u;
    }
  };
  for (size_t j = 0; j < std::min<size_t>(3, order.size()); ++j) {
    const VectorXd& c = lxx.params[order[j]];
    auto m = gauss_newton(Fpen, c, go);
    VectorXd u;
    if (m.x.allFinite() && project(m.x, u)) {
      consider(u);
      continue;
    }
    // left the domain: bisect along the segment for the last admissible point
    double lo = 0, hi = 1;
    VectorXd best;
    for (int it = 0; it < 30; ++it) {
      double t = 0.5 * (lo + hi);
      if (project(c + t * (m.x - c), u)) {
        lo = t;
        best = u;
      } else {
        hi = t;
      }
    }
    if (best.size()) consider(best);
  }
  return C;
}

// ---------------------------------------------------------------- i!(Lambda)

TracedLagrangian trace_lagrangian(const LagrangianSource& src, const LambdaXX& lxx) {
  TracedLagrangian T;
  int n = src.n, k = src.k;
  MatrixXd Pi = MatrixXd::Zero(4 * k, 4 * n);
  for (int i = 0; i < k; ++i) {
    Pi(i, i) = 1;
    Pi(k + i, n + i) = 1;
    Pi(2 * k + i, 2 * n + i) = 1;
    Pi(3 * k + i, 3 * n + i) = 1;
  }
  SymplecticSpace sp{k, 2};
  T.min_covector_norm = T.min_one_sided = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < lxx.params.size(); ++i) {
    const VectorXd& u = lxx.params[i];
    VectorXd z = Pi * src.gamma.eval(u);
    MatrixXd fr = orth(Pi * src.gamma.jac(u) * intersection_tangent(src, u));
    if (fr.cols() != 2 * k || (T.dim >= 0 && fr.cols() != T.dim)) T.immersive = false;
    T.dim = (int)fr.cols();
    if (fr.cols() > 0) T.isotropy = std::max(T.isotropy, max_isotropy(sp, fr));
    double a = z.segment(k, k).norm(), b = z.segment(3 * k, k).norm();
    T.min_covector_norm = std::min(T.min_covector_norm, std::hypot(a, b));
    T.min_one_sided = std::min({T.min_one_sided, a, b});
    T.points.push_back(z);
    T.frames.push_back(fr);
  }
  return T;
}

double trace_order(double order_phi, const EmbeddingChart& ch, int dim_lambda_xx) {
  return order_phi - ch.dim_x + 0.5 * ch.nu() + 0.5 * dim_lambda_xx;
}

SobolevWindow check_sobolev_window(double d, const EmbeddingChart& ch) {
  SobolevWindow w;
  w.lo = d + 0.5 * ch.nu();
  w.hi = -0.5 * ch.nu();
  w.empty = !(w.lo < w.hi);
  return w;
}

// ---------------------------------------------------------------- lemma checks

ParamCleanReport verify_parameter_space_cleanness(const PhaseFunction& ph, const RestrictedPhase& r,
                                                  const CriticalManifold& crit_xx) {
  ParamCleanReport R;
  ExprField F = theta_gradient(ph), Fxx = theta_gradient(r.phi_xx);
  const auto& L = *ph.layout;
  std::vector<int> ys = block_slots(L, "y"), yp = block_slots(L, "yp");
  ys.insert(ys.end(), yp.begin(), yp.end());
  for (size_t i = 0; i < crit_xx.points.size(); ++i) {
    const VectorXd& c = crit_xx.points[i];
    VectorXd u = embed_restricted(ph, r.phi_xx, c);
    R.max_residual = std::max(R.max_residual, F.eval(u).norm());
    MatrixXd J = F.jac(u);
    MatrixXd JS = MatrixXd::Zero(J.rows() + ys.size(), J.cols());
    JS.topRows(J.rows()) = J;
    for (size_t j = 0; j < ys.size(); ++j) JS(J.rows() + j, ys[j]) = 1;
    int k1 = (int)null_space(JS).cols();
    int k2 = projected_dimension(Fxx, c, null_space(Fxx.jac(c))).dim;
    if (R.tangent_dim < 0) R.tangent_dim = k2;
    int gap = std::abs(k1 - k2);
    if (gap > R.tangent_gap) {
      R.tangent_gap = gap;
      R.witness = (int)i;
    }
    ++R.samples;
  }
  R.pass = R.samples > 0 && R.tangent_gap == 0 && R.max_residual < 1e-9;
  return R;
}

double diagram_residual(const PhaseFunction& ph, const RestrictedPhase& r, const CriticalManifold& crit_xx) {
  ExprField G = gamma_field(ph), Gxx = gamma_field(r.phi_xx);
  int n = ph.base_dim(), k = r.phi_xx.base_dim();
  double worst = 0;
  for (auto& c : crit_xx.points) {
    VectorXd g = G.eval(embed_restricted(ph, r.phi_xx, c));
    VectorXd gx = Gxx.eval(c);
    for (int i = 0; i < k; ++i) {
      worst = std::max(worst, std::fabs(gx[i] - g[i]));
      worst = std::max(worst, std::fabs(gx[k + i] - g[n + i]));
      worst = std::max(worst, std::fabs(gx[2 * k + i] - g[2 * n + i]));
      worst = std::max(worst, std::fabs(gx[3 * k + i] - g[3 * n + i]));
    }
  }
  return worst;
}

// ---------------------------------------------------------------- report

static std::string join(const VectorXd& v, const char* sep) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) s += (i ? sep : "") + shortest(v[i]);
  return s;
}

std::string TraceReport::to_text() const {
  std::ostringstream o;
  o << "scenario = " << scenario << "\n";
  o << "source = " << source_kind << "\n";
  o << "seed = " << seed << "\n";
  if (condition1.empty) {
    o << "condition1 = empty intersection; trace smoothing\n";
  } else {
    const auto& c = condition1.clean;
    o << "condition1 = " << (condition1.pass() ? "pass" : "fail") << "\n";
    o << "condition1.intersection_dim = " << c.intersection_dim << "\n";
    o << "condition1.tangent_gap = " << c.tangent_gap << "\n";
    o << "condition1.rank_constant = " << (c.rank_constant ? "true" : "false") << "\n";
    o << "condition1.excess_over_transversal = " << c.excess_over_transversal << "\n";
    o << "condition1.samples = " << c.samples_used << "\n";
    if (c.marginal) o << "condition1.marginal = true\n";
  }
  if (condition1.inconclusive) o << "condition1.inconclusive = true\n";
  if (condition2.vacuous) {
    o << "condition2 = pass (vacuous)\n";
  } else {
    o << "condition2 = " << (condition2.pass() ? "pass" : "fail") << "\n";
    o << "condition2.g_min = " << shortest(condition2.g_min) << "\n";
    o << "condition2.delta = " << shortest(condition2.delta) << "\n";
    o << "condition2.witness = " << join(condition2.witness, " ") << "\n";
  }
  o << "dim_lambda_xx = " << dim_lambda_xx << "\n";
  o << "excess_e = " << excess_e << "\n";
  o << "order_phi = " << shortest(order_phi) << "\n";
  o << "traced_order = " << shortest(traced_order) << "\n";
  if (sobolev.empty) o << "sobolev_window = empty (computed formally)\n";
  else o << "sobolev_window = (" << shortest(sobolev.lo) << ", " << shortest(sobolev.hi) << ")\n";
  if (have_param_clean) {
    o << "parameter_space_cleanness = " << (param_clean.pass ? "pass" : "fail") << "\n";
    o << "parameter_space_cleanness.tangent_gap = " << param_clean.tangent_gap << "\n";
  }
  o << "verdict = " << (pass() ? "pass" : "fail") << "\n";
  for (auto& n : notes) o << "note = " << n << "\n";
  return o.str();
}

std::string TraceReport::to_csv() const {
  std::ostringstream o;
  o << "name,verdict,margin,witness\n";
  auto v = [](bool b) { return b ? "pass" : "fail"; };
  o << "condition1," << (condition1.empty ? "empty" : v(condition1.pass())) << "," << condition1.clean.tangent_gap
    << ",";
  if (condition1.clean.witness >= 0) o << condition1.clean.witness;
  o << "\n";
  o << "condition2," << (condition2.vacuous ? "vacuous" : v(condition2.pass())) << "," << shortest(condition2.g_min)
    << "," << join(condition2.witness, " ") << "\n";
  if (have_param_clean)
    o << "parameter_space_cleanness," << v(param_clean.pass) << "," << param_clean.tangent_gap << ","
      << (param_clean.witness >= 0 ? std::to_string(param_clean.witness) : "") << "\n";
  o << "traced_order,info," << shortest(traced_order) << ",\n";
  o << "excess," << "info," << excess_e << ",\n";
  o << "seed,info," << seed << ",\n";
  return o.str();
}

}  // namespace ftr
