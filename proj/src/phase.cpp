#include "fiotrace/phase.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ftr {

bool PhaseFunction::in_cone(const VectorXd& u) const {
  std::span<const double> p(u.data(), u.size());
  for (auto& g : cone) {
    try {
      if (!(g.eval(p) > 0)) return false;
    } catch (const SingularError&) {
      return false;
    }
  }
  return true;
}

static std::vector<int> slots_of(const BlockLayout& L, const std::vector<std::string>& blocks) {
  std::vector<int> s;
  for (auto& b : blocks) {
    if (!L.has(b)) throw std::invalid_argument("phase layout has no block '" + b + "'");
    for (int i = 1; i <= L.dim(b); ++i) s.push_back(L.slot(b, i));
  }
  return s;
}

PhaseFunction make_phase(const Expression& phi, const std::vector<std::string>& base_blocks,
                         const std::vector<std::string>& primed_blocks, const std::vector<Expression>& cone) {
  PhaseFunction P;
  P.phi = phi;
  P.layout = phi.layout();
  const auto& L = *P.layout;
  if (!L.has("th")) throw std::invalid_argument("phase layout has no fiber block 'th'");
  P.base_slots = slots_of(L, base_blocks);
  P.primed_slots = slots_of(L, primed_blocks);
  P.theta_slots = slots_of(L, {"th"});
  P.n_theta = (int)P.theta_slots.size();
  if (P.base_slots.size() != P.primed_slots.size())
    throw std::invalid_argument("base and primed factors differ in dimension");
  int used = (int)(P.base_slots.size() + P.primed_slots.size() + P.theta_slots.size());
  if (used != L.total_dim()) throw std::invalid_argument("phase layout has blocks outside base, primed base and th");
  P.cone = cone;
  return P;
}

// random point with unit theta inside the cone
static bool cone_sample(const PhaseFunction& ph, std::mt19937_64& rng, VectorXd& u, double lo = -1, double hi = 1) {
  int D = ph.layout->total_dim();
  u.resize(D);
  for (int tries = 0; tries < 200; ++tries) {
    for (int s : ph.base_slots) u[s] = lo + (hi - lo) * uniform01(rng);
    for (int s : ph.primed_slots) u[s] = lo + (hi - lo) * uniform01(rng);
    double n = 0;
    for (int s : ph.theta_slots) {
      u[s] = normal01(rng);
      n += u[s] * u[s];
    }
    n = std::sqrt(n);
    if (n < 1e-12) continue;
    for (int s : ph.theta_slots) u[s] /= n;
    if (ph.in_cone(u)) return true;
  }
  return false;
}

PhaseValidation validate_phase(PhaseFunction& ph, std::mt19937_64& rng, int samples) {
  PhaseValidation V;
  std::vector<std::vector<double>> S;
  VectorXd u;
  for (int i = 0; i < samples; ++i)
    if (cone_sample(ph, rng, u)) S.emplace_back(u.data(), u.data() + u.size());
  V.samples = (int)S.size();
  if (S.empty()) return V;
  auto h = check_homogeneity(ph.phi, "th", 1.0, S, 1e-9);
  V.euler_residual = h.worst_residual;
  int D = ph.layout->total_dim();
  std::vector<Tape> grad;
  for (int j = 0; j < D; ++j) grad.emplace_back(differentiate(ph.phi, j));
  V.gradient_margin = std::numeric_limits<double>::infinity();
  for (auto& s : S) {
    double n = 0;
    for (auto& g : grad) n += std::pow(g.eval(s.data()), 2);
    V.gradient_margin = std::min(V.gradient_margin, std::sqrt(n));
  }
  V.pass = h.pass && V.gradient_margin > 1e-10;
  ph.homogeneity_checked = true;
  ph.euler_residual = V.euler_residual;
  ph.gradient_margin = V.gradient_margin;
  return V;
}

ExprField theta_gradient(const PhaseFunction& ph) { return ExprField(gradient(ph.phi, ph.theta_slots), ph.layout); }

ExprField gamma_field(const PhaseFunction& ph) {
  std::vector<Expression> g;
  auto var = [&](int s) { return ph.phi.with_root(ex::var(s)); };
  for (int s : ph.base_slots) g.push_back(var(s));
  for (int s : ph.base_slots) g.push_back(differentiate(ph.phi, s));
  for (int s : ph.primed_slots) g.push_back(var(s));
  for (int s : ph.primed_slots) {
    auto d = differentiate(ph.phi, s);
    g.push_back(d.with_root(ex::neg(d.root())));
  }
  return ExprField(g, ph.layout);
}

std::vector<VectorXd> sphere_points(int dim, int count, std::mt19937_64& rng) {
  std::vector<VectorXd> out;
  if (dim <= 0) return out;
  if (dim == 1) {
    out.push_back(VectorXd::Constant(1, 1.0));
    out.push_back(VectorXd::Constant(1, -1.0));
    return out;
  }
  for (int i = 0; i < count; ++i) {
    VectorXd v(dim);
    if (dim == 2) {
      double a = 2 * M_PI * (i + 0.5) / count;
      v << std::cos(a), std::sin(a);
    } else if (dim == 3) {
      // Fibonacci lattice
      double z = 1 - (2.0 * i + 1) / count, r = std::sqrt(std::max(0.0, 1 - z * z));
      double a = M_PI * (3 - std::sqrt(5.0)) * i;
      v << r * std::cos(a), r * std::sin(a), z;
    } else {
      for (int j = 0; j < dim; ++j) v[j] = normal01(rng);
      v.normalize();
    }
    out.push_back(v);
  }
  return out;
}

static void normalize_theta(const PhaseFunction& ph, VectorXd& u) {
  double n = 0;
  for (int s : ph.theta_slots) n += u[s] * u[s];
  n = std::sqrt(n);
  for (int s : ph.theta_slots) u[s] /= n;
}

static double theta_norm(const PhaseFunction& ph, const VectorXd& u) {
  double n = 0;
  for (int s : ph.theta_slots) n += u[s] * u[s];
  return std::sqrt(n);
}

CriticalManifold solve_critical_set(const PhaseFunction& ph, const SeedSpec& spec, std::mt19937_64& rng,
                                    const std::vector<VectorXd>& extra_seeds) {
  ExprField F = theta_gradient(ph);
  int D = ph.layout->total_dim();
  std::vector<VectorXd> seeds = extra_seeds;
  for (auto& th : sphere_points(ph.n_theta, spec.theta_points, rng)) {
    for (int b = 0; b < spec.base_per_theta; ++b) {
      VectorXd u(D);
      for (int s : ph.base_slots) u[s] = spec.base_lo + (spec.base_hi - spec.base_lo) * uniform01(rng);
      for (int s : ph.primed_slots) u[s] = spec.base_lo + (spec.base_hi - spec.base_lo) * uniform01(rng);
      for (int i = 0; i < ph.n_theta; ++i) u[ph.theta_slots[i]] = th[i];
      if (ph.in_cone(u)) seeds.push_back(u);
    }
  }
  // grid points may all miss a thin cone
  for (int i = 0; (int)seeds.size() < spec.theta_points && i < spec.theta_points; ++i) {
    VectorXd u;
    if (cone_sample(ph, rng, u, spec.base_lo, spec.base_hi)) seeds.push_back(u);
  }
  GNOptions o;
  o.tol = spec.tol_newton;
  o.polish = 60;
  std::vector<VectorXd> pts;
  int exits = 0;
  for (auto& s : seeds) {
    auto g = gauss_newton(F, s, o);
    if (!g.converged) continue;
    VectorXd u = g.x;
    if (theta_norm(ph, u) < 1e-10) continue;
    normalize_theta(ph, u);
    if (!ph.in_cone(u)) {
      ++exits;
      continue;
    }
    if (ph.phi.singular_margin(std::span<const double>(u.data(), u.size())) < 1e-8) continue;
    if (F.eval(u).norm() > 1e-9) continue;
    bool dup = false;
    for (auto& p : pts)
      if ((p - u).norm() < 1e-6) dup = true;
    if (!dup) pts.push_back(u);
  }
  auto C = analyze_critical_points(ph, std::move(pts));
  C.cone_exits = exits;
  return C;
}

CriticalManifold analyze_critical_points(const PhaseFunction& ph, std::vector<VectorXd> pts) {
  std::sort(pts.begin(), pts.end(), [](const VectorXd& a, const VectorXd& b) {
    return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(), b.data() + b.size());
  });
  CriticalManifold C;
  C.points = std::move(pts);
  if (C.points.empty()) return C;
  ExprField F = theta_gradient(ph);
  ExprField G = gamma_field(ph);
  int D = ph.layout->total_dim();
  C.rank_gap = std::numeric_limits<double>::infinity();
  int dim0 = -1;
  for (size_t i = 0; i < C.points.size(); ++i) {
    const VectorXd& u = C.points[i];
    MatrixXd J = F.jac(u);
    auto ri = rank_info(J);
    C.rank_gap = std::min(C.rank_gap, ri.gap);
    if (C.rank < 0) C.rank = ri.rank;
    else if (ri.rank != C.rank && C.rank_constant) {
      C.rank_constant = false;
      C.rank_witness = {0, (int)i};
    }
    MatrixXd T = null_space(J);
    auto ld = projected_dimension(F, u, T);
    if (dim0 < 0) dim0 = ld.dim;
    else if (ld.dim != dim0) C.dim_constant = false;
    if (ld.dim != (int)T.cols()) C.dim_constant = false;
    MatrixXd GT = G.jac(u) * T;
    MatrixXd K = null_space(GT);
    C.tangent.push_back(T);
    C.fiber_frames.push_back(T * K);
  }
  C.dim = D - C.rank;
  C.excess = ph.n_theta - C.rank;
  return C;
}

ExcessCertificate excess_of(const PhaseFunction& ph, const CriticalManifold& crit) {
  if (crit.empty()) throw std::invalid_argument("excess of an empty critical set");
  if (!crit.rank_constant)
    throw NotCleanPhase("not a clean phase: rank of the theta-gradient jacobian changes between samples " +
                            std::to_string(crit.rank_witness.first) + " and " + std::to_string(crit.rank_witness.second),
                        crit.rank_witness);
  ExcessCertificate E;
  E.from_rank = ph.n_theta - crit.rank;
  ExprField F = theta_gradient(ph);
  int dmin = std::numeric_limits<int>::max(), dmax = -1;
  for (size_t i = 0; i < crit.points.size(); ++i) {
    int d = projected_dimension(F, crit.points[i], crit.tangent[i]).dim;
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
  }
  E.from_dim = dmin - 2 * ph.base_dim();
  if (dmin != dmax || E.from_dim != E.from_rank)
    throw InconsistentExcess("inconsistent excess: N - rank = " + std::to_string(E.from_rank) +
                             ", local dimension - 2 dim X ranges over [" + std::to_string(dmin - 2 * ph.base_dim()) +
                             ", " + std::to_string(dmax - 2 * ph.base_dim()) + "]");
  E.e = E.from_rank;
  return E;
}

VectorXd parametrize(const PhaseFunction& ph, const VectorXd& u) {
  ExprField F = theta_gradient(ph);
  double r = F.eval(u).norm();
  if (r > 1e-8 * std::max(1.0, theta_norm(ph, u)))
    throw std::invalid_argument("point is not on the critical set (|d_theta phi| = " + std::to_string(r) + ")");
  VectorXd g = gamma_field(ph).eval(u);
  int k = ph.base_dim();
  double cov = std::hypot(g.segment(k, k).norm(), g.segment(3 * k, k).norm());
  if (cov < 1e-12) throw ZeroSectionHit("zero-section hit: both covectors vanish at the critical point");
  return g;
}

LagrangianSampleSet lagrangian_samples(const PhaseFunction& ph, const CriticalManifold& crit) {
  LagrangianSampleSet S;
  if (crit.empty()) return S;
  ExprField G = gamma_field(ph);
  int k = ph.base_dim();
  SymplecticSpace sp{k, 2};
  S.min_covector_norm = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < crit.points.size(); ++i) {
    const VectorXd& u = crit.points[i];
    VectorXd g = parametrize(ph, u);
    S.min_covector_norm = std::min(S.min_covector_norm, std::hypot(g.segment(k, k).norm(), g.segment(3 * k, k).norm()));
    MatrixXd img = G.jac(u) * crit.tangent[i];
    MatrixXd fr = orth(img);
    int want = (int)crit.tangent[i].cols() - (int)crit.fiber_frames[i].cols();
    if (fr.cols() != want || fr.cols() != crit.dim - crit.excess || (S.dim >= 0 && fr.cols() != S.dim))
      throw std::runtime_error("non-constant rank of d gamma on the critical set at sample " + std::to_string(i));
    S.dim = (int)fr.cols();
    S.fiber_dim = (int)crit.fiber_frames[i].cols();
    S.isotropy = std::max(S.isotropy, max_isotropy(sp, fr));
    S.points.push_back(g);
    S.frames.push_back(fr);
  }
  return S;
}

}  // namespace ftr
