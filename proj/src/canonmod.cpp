#include "fiotrace/canonmod.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace ftr {

LayoutP cotangent_layout(const EmbeddingChart& ch) {
  ch.validate();
  return make_layout({{"x", ch.dim_x}, {"y", ch.nu()}, {"p", ch.dim_x}, {"q", ch.nu()}});
}

static std::vector<Expression> parse_all(const std::vector<std::string>& t, const LayoutP& L, const Params& p,
                                         size_t want, const char* what) {
  if (t.size() != want)
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(want) + " components, got " +
                                std::to_string(t.size()));
  std::vector<Expression> out;
  for (auto& s : t) out.push_back(parse_expression(s, L, p));
  return out;
}

CanonicalMap make_canonical_map(const EmbeddingChart& ch, const std::vector<std::string>& forward,
                                const std::vector<std::string>& inverse, const Params& params) {
  CanonicalMap g;
  g.chart = ch;
  g.layout = cotangent_layout(ch);
  size_t m = 2 * ch.dim_m;
  g.forward = parse_all(forward, g.layout, params, m, "canonical map");
  g.inverse = parse_all(inverse, g.layout, params, m, "canonical map inverse");
  return g;
}

namespace {

// cofactor matrix C with A^{-T} = C / det A, symbolic, n <= 3
std::vector<std::vector<NodeP>> cofactors(const std::vector<std::vector<NodeP>>& A) {
  using namespace ex;
  int n = (int)A.size();
  std::vector<std::vector<NodeP>> C(n, std::vector<NodeP>(n));
  if (n == 1) {
    C[0][0] = num(1);
  } else if (n == 2) {
    C[0][0] = A[1][1];
    C[0][1] = neg(A[1][0]);
    C[1][0] = neg(A[0][1]);
    C[1][1] = A[0][0];
  } else if (n == 3) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        int r0 = (i + 1) % 3, r1 = (i + 2) % 3, c0 = (j + 1) % 3, c1 = (j + 2) % 3;
        C[i][j] = sub(mul(A[r0][c0], A[r1][c1]), mul(A[r0][c1], A[r1][c0]));
      }
  } else {
    throw std::invalid_argument("cotangent lift supports dim M <= 3");
  }
  return C;
}

VectorXd random_cotangent(int n, std::mt19937_64& rng) {
  VectorXd z(2 * n);
  for (int i = 0; i < n; ++i) z[i] = -1 + 2 * uniform01(rng);
  VectorXd xi(n);
  for (int i = 0; i < n; ++i) xi[i] = normal01(rng);
  while (xi.norm() < 1e-3)
    for (int i = 0; i < n; ++i) xi[i] = normal01(rng);
  xi *= (0.5 + 1.5 * uniform01(rng)) / xi.norm();
  z.tail(n) = xi;
  return z;
}

VectorXd eval_all(const std::vector<Tape>& T, const VectorXd& z) {
  VectorXd r(T.size());
  for (size_t i = 0; i < T.size(); ++i) r[i] = T[i].eval(z.data());
  return r;
}

std::vector<Tape> tapes(const std::vector<Expression>& e) {
  std::vector<Tape> t;
  for (auto& x : e) t.emplace_back(x);
  return t;
}

}  // namespace

CanonicalMap lift_point_transformation(const EmbeddingChart& ch, const std::vector<std::string>& psi,
                                       const std::vector<std::string>& psi_inverse, const Params& params,
                                       std::mt19937_64* rng) {
  using namespace ex;
  CanonicalMap g;
  g.chart = ch;
  g.layout = cotangent_layout(ch);
  int n = ch.dim_m;
  auto P = parse_all(psi, g.layout, params, n, "point transformation");
  auto Pi = parse_all(psi_inverse, g.layout, params, n, "point transformation inverse");
  for (auto* v : {&P, &Pi})
    for (auto& e : *v)
      for (int s = n; s < 2 * n; ++s)
        if (e.depends_on(s)) throw std::invalid_argument("point transformation depends on covector variables");

  std::mt19937_64 local(7);
  std::mt19937_64& r = rng ? *rng : local;
  auto tp = tapes(P), tpi = tapes(Pi);
  for (int i = 0; i < 50; ++i) {
    VectorXd z = random_cotangent(n, r);
    VectorXd m = z;
    m.head(n) = eval_all(tpi, z);
    VectorXd back = eval_all(tp, m);
    if ((back - z.head(n)).norm() > 1e-9 * (1 + z.head(n).norm()))
      throw std::invalid_argument("psi o psi_inverse is not the identity on base samples");
  }

  auto lift = [&](const std::vector<Expression>& f, const std::vector<Tape>& ft) {
    (void)ft;
    std::vector<std::vector<NodeP>> A(n, std::vector<NodeP>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A[i][j] = differentiate(f[i], j).root();
    auto C = cofactors(A);
    NodeP det = num(0);
    for (int j = 0; j < n; ++j) det = add(det, mul(A[0][j], C[0][j]));
    Expression det_e(det, g.layout, params);
    for (int i = 0; i < 50; ++i) {
      VectorXd z = random_cotangent(n, r);
      if (std::fabs(det_e.eval(std::span<const double>(z.data(), z.size()))) < 1e-10)
        throw NotInvertible("point transformation has a singular differential at a sample");
    }
    std::vector<Expression> out = f;
    for (int i = 0; i < n; ++i) {
      NodeP s = num(0);
      for (int j = 0; j < n; ++j) s = add(s, mul(C[i][j], var(n + j)));
      out.push_back(Expression(div(s, det), g.layout, params));
    }
    return out;
  };
  g.forward = lift(P, tp);
  g.inverse = lift(Pi, tpi);
  return g;
}

CanonicalReport validate_canonical(CanonicalMap& g, std::mt19937_64& rng, int samples, double tol) {
  int n = g.n();
  ExprField F(g.forward, g.layout);
  auto ti = tapes(g.inverse);
  SymplecticSpace sp{n, 1};
  MatrixXd Om(2 * n, 2 * n);
  for (int i = 0; i < 2 * n; ++i)
    for (int j = 0; j < 2 * n; ++j)
      Om(i, j) = symplectic_form_value(sp, VectorXd::Unit(2 * n, i), VectorXd::Unit(2 * n, j));
  CanonicalReport R;
  for (int s = 0; s < samples; ++s) {
    VectorXd z = random_cotangent(n, rng);
    VectorXd gz = F.eval(z);
    MatrixXd J = F.jac(z);
    MatrixXd D = J.transpose() * Om * J - Om;
    Eigen::Index bi, bj;
    double res = D.cwiseAbs().maxCoeff(&bi, &bj);
    if (res > R.symplectic_residual) {
      R.symplectic_residual = res;
      R.worst_sample = z;
      R.worst_pair = {(int)bi, (int)bj};
    }
    for (double lam : {0.5, 2.0, 3.0}) {
      VectorXd zl = z;
      zl.tail(n) *= lam;
      VectorXd gl = F.eval(zl), want = gz;
      want.tail(n) *= lam;
      R.homogeneity_residual = std::max(R.homogeneity_residual, (gl - want).norm() / (1 + want.norm()));
    }
    R.inverse_residual = std::max(R.inverse_residual, (eval_all(ti, gz) - z).norm() / (1 + z.norm()));
    if (!(gz.tail(n).norm() > 1e-12 * z.tail(n).norm())) R.zero_section_ok = false;
    ++R.samples;
  }
  g.symplectic_residual = R.symplectic_residual;
  g.fiber_homogeneity_residual = R.homogeneity_residual;
  R.pass = R.symplectic_residual < tol && R.homogeneity_residual < 1e-9 && R.inverse_residual < 1e-9 &&
           R.zero_section_ok;
  return R;
}

VectorXd graph_point(const CanonicalMap& g, const VectorXd& zp) {
  int n = g.n();
  VectorXd out(4 * n);
  for (int i = 0; i < 2 * n; ++i) out[i] = g.forward[i].eval(std::span<const double>(zp.data(), zp.size()));
  out.tail(2 * n) = zp;
  return out;
}

GraphLagrangian graph_lagrangian(const CanonicalMap& g, std::mt19937_64& rng, int samples) {
  using namespace ex;
  const auto& ch = g.chart;
  int n = g.n(), k = ch.dim_x, nu = ch.nu();
  auto L = make_layout({{"x", k}, {"y", nu}, {"p", k}, {"q", nu}, {"xp", k}, {"yp", nu}, {"pp", k}, {"qp", nu}});
  std::vector<NodeP> map(2 * n);
  for (int s = 0; s < 2 * n; ++s) map[s] = var(2 * n + s);
  std::vector<Expression> cons;
  for (int s = 0; s < 2 * n; ++s) {
    Expression gp = rebind(g.forward[s], L, map);
    cons.push_back(gp.with_root(sub(var(s), gp.root())));
  }
  std::vector<int> conic;
  for (int s = n; s < 2 * n; ++s) conic.push_back(s);
  for (int s = 3 * n; s < 4 * n; ++s) conic.push_back(s);
  NodeP cov = num(0);
  for (int s = 3 * n; s < 4 * n; ++s) cov = add(cov, mul(var(s), var(s)));
  GraphLagrangian G;
  G.source.kind = "graph";
  G.source.lambda = make_submanifold(L, cons, 2 * n, conic, {Expression(cov, L)});
  std::vector<Expression> id;
  for (int s = 0; s < 4 * n; ++s) id.push_back(Expression(var(s), L));
  G.source.gamma = ExprField(id, L);
  for (int i = 1; i <= nu; ++i) G.source.y_slots.push_back(L->slot("y", i));
  for (int i = 1; i <= nu; ++i) G.source.y_slots.push_back(L->slot("yp", i));
  G.source.n = n;
  G.source.k = k;

  SymplecticSpace sp{n, 2};
  for (int s = 0; s < samples; ++s) {
    VectorXd z = graph_point(g, random_cotangent(n, rng));
    MatrixXd T = tangent_basis(G.source.lambda, z);
    G.dim = (int)T.cols();
    G.isotropy = std::max(G.isotropy, max_isotropy(sp, T));
  }
  if (G.dim != 2 * n) throw std::runtime_error("graph has dimension " + std::to_string(G.dim));
  if (G.isotropy > 1e-7)
    throw InconsistentSignConvention("graph is not Lagrangian for dx^dp - dx'^dp' (isotropy " +
                                     shortest(G.isotropy) + "); check the map's sign conventions");
  return G;
}

static double pair_ratio(const CanonicalMap& g, const VectorXd& w) {
  // |(p, p')| / |(p, q, p', q')| at the graph point (g(w), w)
  VectorXd z = graph_point(g, w);
  return conormal_ratio(z, g.n(), g.chart.dim_x);
}

CorollaryReport check_corollary_conditions(const CanonicalMap& g, std::mt19937_64& rng, int samples, double delta,
                                           bool throw_on_disagreement) {
  using namespace ex;
  const auto& ch = g.chart;
  int n = g.n(), k = ch.dim_x, nu = ch.nu();
  const auto& L = g.layout;
  std::vector<int> cov_slots;
  for (int s = n; s < 2 * n; ++s) cov_slots.push_back(s);
  std::vector<Expression> ys, gys, ginv_ys;
  for (int i = 0; i < nu; ++i) {
    ys.push_back(Expression(var(k + i), L));
    gys.push_back(g.forward[k + i]);
    ginv_ys.push_back(g.inverse[k + i]);
  }
  NodeP c2 = num(0);
  for (int s : cov_slots) c2 = add(c2, mul(var(s), var(s)));
  std::vector<Expression> dom{Expression(c2, L)};
  CorollaryReport R;
  R.delta = delta;
  SampleBox box{-1, 1, 1, 1};

  // condition 1: T*M|_X against g(T*M|_X) = {g^{-1}(z) in T*M|_X}
  auto A = make_submanifold(L, ys, 2 * n - nu, cov_slots, dom);
  auto B = make_submanifold(L, ginv_ys, 2 * n - nu, cov_slots, dom);
  auto I = sample_intersection(A, B, samples, box, rng);
  if (I.points.empty()) {
    R.cond1_empty = I.empty;
    R.cond1.empty = true;
    R.cond1.is_manifold = false;
  } else {
    R.cond1 = clean_intersection_check(A, B, I.points);
    R.cond1_dim = R.cond1.intersection_dim;
  }

  // condition 2 in the source parametrization w': y' = 0, g(w')_y = 0
  if (!R.cond1_empty) {
    auto Bp = make_submanifold(L, gys, 2 * n - nu, cov_slots, dom);
    auto J = sample_intersection(A, Bp, samples, box, rng);
    std::vector<VectorXd> pts = J.points;
    std::vector<double> ratio;
    for (auto& w : pts) ratio.push_back(pair_ratio(g, w));
    std::vector<size_t> order(pts.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return ratio[a] < ratio[b]; });
    R.cond2_margin = std::numeric_limits<double>::infinity();
    if (!order.empty()) {
      R.cond2_margin = ratio[order[0]];
      R.cond2_witness = pts[order[0]];
    }
    const double W = 1e3;
    NodeP nrm = sub(c2, num(1));
    std::vector<Expression> pen, proj;
    for (auto& e : ys) pen.push_back(e.with_root(mul(num(W), e.root()))), proj.push_back(e);
    for (auto& e : gys) pen.push_back(e.with_root(mul(num(W), e.root()))), proj.push_back(e);
    pen.push_back(Expression(mul(num(W), nrm), L));
    proj.push_back(Expression(nrm, L));
    for (int i = 0; i < k; ++i) {
      pen.push_back(g.forward[n + i]);
      pen.push_back(Expression(var(n + i), L));
    }
    ExprField Fpen(pen, L), Fproj(proj, L);
    GNOptions go;
    go.max_iter = 200;
    go.tol = 1e-14;
    for (size_t j = 0; j < std::min<size_t>(3, order.size()); ++j) {
      auto m = gauss_newton(Fpen, pts[order[j]], go);
      if (!m.x.allFinite()) continue;
      auto p = gauss_newton(Fproj, m.x);
      if (!p.converged || p.x.tail(n).norm() < 0.5) continue;
      double r = pair_ratio(g, p.x);
      if (r < R.cond2_margin) {
        R.cond2_margin = r;
        R.cond2_witness = p.x;
      }
    }
  }

  // theorem level on the graph
  auto G = graph_lagrangian(g, rng);
  auto lxx = lambda_xx_samples(G.source, samples, rng);
  R.theorem1 = check_condition_clean(G.source, lxx);
  R.theorem2 = check_condition_conormal(G.source, lxx, delta);
  if (throw_on_disagreement && !R.agree())
    throw GraphLemmaViolation("corollary-level and theorem-level verdicts disagree (condition 1: " +
                              std::to_string(R.cond1_pass()) + " vs " + std::to_string(R.theorem1.pass()) +
                              ", condition 2: " + std::to_string(R.cond2_pass()) + " vs " +
                              std::to_string(R.theorem2.pass()) + ")");
  return R;
}

OrderBound check_order_bound(double order_phi, const EmbeddingChart& ch) {
  OrderBound b;
  b.order = order_phi;
  b.bound = -ch.nu();
  b.pass = order_phi < b.bound;
  return b;
}

}  // namespace ftr
