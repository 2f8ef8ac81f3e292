#include "fiotrace/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ftr {

double uniform01(std::mt19937_64& rng) { return (double)(rng() >> 11) * 0x1.0p-53; }

double normal01(std::mt19937_64& rng) {
  // Box-Muller, platform independent
  double u1 = uniform01(rng), u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2 * M_PI * u2);
}

void gauss_legendre(int n, VectorXd& x, VectorXd& w) {
  MatrixXd J = MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = i / std::sqrt(4.0 * i * i - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(J);
  x = es.eigenvalues();
  w = 2 * es.eigenvectors().row(0).array().square().transpose();
  // symmetrize against round-off
  for (int i = 0; i < n / 2; ++i) {
    double a = 0.5 * (x[n - 1 - i] - x[i]), b = 0.5 * (w[i] + w[n - 1 - i]);
    x[i] = -a;
    x[n - 1 - i] = a;
    w[i] = w[n - 1 - i] = b;
  }
  if (n % 2) x[n / 2] = 0;
}

RankInfo rank_info(const MatrixXd& m, double tol_rel) {
  RankInfo R;
  R.gap = std::numeric_limits<double>::infinity();
  if (m.rows() == 0 || m.cols() == 0) return R;
  Eigen::JacobiSVD<MatrixXd> svd(m);
  auto s = svd.singularValues();
  R.sv.assign(s.data(), s.data() + s.size());
  if (R.sv.empty() || R.sv[0] == 0) return R;
  for (double v : R.sv)
    if (v > tol_rel * R.sv[0]) ++R.rank;
  if (R.rank < (int)R.sv.size()) {
    double lo = R.sv[R.rank];
    R.gap = lo > 0 ? R.sv[R.rank - 1] / lo : std::numeric_limits<double>::infinity();
  }
  R.marginal = R.gap < 1e3;
  return R;
}

int numeric_rank(const MatrixXd& m, double tol_rel) { return rank_info(m, tol_rel).rank; }

MatrixXd null_space(const MatrixXd& m, double tol_rel) {
  int n = (int)m.cols();
  if (m.rows() == 0) return MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<MatrixXd> svd(m, Eigen::ComputeFullV);
  int r = rank_info(m, tol_rel).rank;
  return svd.matrixV().rightCols(n - r);
}

MatrixXd orth(const MatrixXd& cols, double tol_rel) {
  if (cols.cols() == 0) return MatrixXd(cols.rows(), 0);
  Eigen::JacobiSVD<MatrixXd> svd(cols, Eigen::ComputeThinU);
  int r = rank_info(cols, tol_rel).rank;
  return svd.matrixU().leftCols(r);
}

// ---------------------------------------------------------------- ExprField

ExprField::ExprField(std::vector<Expression> f, LayoutP layout) : f_(std::move(f)), layout_(std::move(layout)) {
  int n = layout_->total_dim();
  for (auto& e : f_) {
    ft_.emplace_back(e);
    std::vector<Expression> row;
    std::vector<Tape> trow;
    std::vector<char> zrow;
    for (int j = 0; j < n; ++j) {
      row.push_back(differentiate(e, j));
      zrow.push_back(row.back().is_zero());
      trow.emplace_back(row.back());
    }
    J_.push_back(std::move(row));
    Jt_.push_back(std::move(trow));
    Jzero_.push_back(std::move(zrow));
  }
}

VectorXd ExprField::eval(const VectorXd& x) const {
  VectorXd r(size());
  for (int i = 0; i < size(); ++i) r[i] = ft_[i].eval(x.data());
  return r;
}

MatrixXd ExprField::jac(const VectorXd& x) const {
  MatrixXd J = MatrixXd::Zero(size(), dim());
  for (int i = 0; i < size(); ++i)
    for (int j = 0; j < dim(); ++j)
      if (!Jzero_[i][j]) J(i, j) = Jt_[i][j].eval(x.data());
  return J;
}

double ExprField::margin(const VectorXd& x) const {
  double m = std::numeric_limits<double>::infinity();
  std::span<const double> p(x.data(), x.size());
  for (auto& e : f_) m = std::min(m, e.singular_margin(p));
  for (auto& row : J_)
    for (auto& e : row)
      if (!e.is_zero()) m = std::min(m, e.singular_margin(p));
  return m;
}

ExprField ExprField::stacked(const ExprField& o) const {
  if (layout_ && o.layout_ && !(*layout_ == *o.layout_)) throw std::invalid_argument("stacking fields over different layouts");
  auto f = f_;
  f.insert(f.end(), o.f_.begin(), o.f_.end());
  return ExprField(f, layout_ ? layout_ : o.layout_);
}

// ---------------------------------------------------------------- Gauss-Newton

GNResult gauss_newton(const ExprField& F, VectorXd x, const GNOptions& opt) {
  GNResult R;
  for (int it = 0; it <= opt.max_iter; ++it) {
    VectorXd f = F.eval(x);
    R.residual = f.size() ? f.norm() : 0.0;
    R.iterations = it;
    if (!std::isfinite(R.residual)) {
      R.x = x;
      return R;
    }
    if (R.residual < opt.tol) {
      R.converged = true;
      R.x = x;
      // polishing: keep stepping while the residual drops
      for (int k = 0; k < opt.polish && R.residual > 0; ++k) {
        MatrixXd J = F.jac(R.x);
        Eigen::JacobiSVD<MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
        svd.setThreshold(1e-12);
        VectorXd step = -svd.solve(F.eval(R.x));
        if (!step.allFinite() || step.norm() < 1e-15 * (1 + R.x.norm())) break;
        VectorXd y = R.x + step;
        double ry = F.eval(y).norm();
        if (!(ry < R.residual)) break;
        R.x = y;
        R.residual = ry;
      }
      return R;
    }
    if (it == opt.max_iter) break;
    MatrixXd J = F.jac(x);
    if (!J.allFinite()) break;
    Eigen::JacobiSVD<MatrixXd> svd(J, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-12);
    VectorXd step = -svd.solve(f);
    double cap = opt.max_step * (1 + x.norm());
    if (step.norm() > cap) step *= cap / step.norm();
    if (step.norm() < 1e-15 * (1 + x.norm())) {
      R.stagnated = true;
      break;
    }
    x += step;
  }
  R.x = x;
  return R;
}

// ---------------------------------------------------------------- submanifolds

bool ConstraintSubmanifold::in_domain(const VectorXd& x, double margin) const {
  std::span<const double> p(x.data(), x.size());
  for (auto& g : domain) {
    try {
      if (!(g.eval(p) > margin)) return false;
    } catch (const SingularError&) {
      return false;
    }
  }
  return true;
}

ConstraintSubmanifold make_submanifold(LayoutP layout, const std::vector<Expression>& cons, int expected_dim,
                                       std::vector<int> conic_slots, std::vector<Expression> domain) {
  ConstraintSubmanifold S;
  S.layout = layout;
  S.constraints = ExprField(cons, layout);
  S.expected_dim = expected_dim;
  S.conic_slots = std::move(conic_slots);
  S.domain = std::move(domain);
  return S;
}

MatrixXd tangent_basis(const ConstraintSubmanifold& sub, const VectorXd& point) {
  VectorXd r = sub.constraints.eval(point);
  if (r.size() && r.norm() > sub.tol_residual * 100)
    throw std::runtime_error("point does not satisfy the constraints (residual " + std::to_string(r.norm()) + ")");
  MatrixXd J = sub.constraints.jac(point);
  int want = sub.ambient_dim() - sub.expected_dim;
  int rk = numeric_rank(J);
  if (rk != want)
    throw NotRegularPoint("not a regular point: jacobian rank " + std::to_string(rk) + ", expected " +
                              std::to_string(want),
                          rk);
  return null_space(J);
}

LocalDim projected_dimension(const ExprField& F, const VectorXd& c, const MatrixXd& V, double h) {
  LocalDim L;
  int k = (int)V.cols();
  if (k == 0) return L;
  double hs = h * std::max(1.0, c.norm());
  MatrixXd D(c.size(), k);
  GNOptions o;
  o.tol = 1e-14;
  o.max_iter = 200;
  for (int j = 0; j < k; ++j) {
    auto g = gauss_newton(F, c + hs * V.col(j), o);
    D.col(j) = (g.x - c) / hs;
  }
  MatrixXd M = V.transpose() * D;
  Eigen::JacobiSVD<MatrixXd> svd(M);
  auto s = svd.singularValues();
  for (int i = 0; i < s.size(); ++i) {
    L.sv.push_back(s[i]);
    if (s[i] > 0.5) ++L.dim;
    L.ambiguity = std::max(L.ambiguity, std::min(std::fabs(s[i]), std::fabs(s[i] - 1)));
  }
  return L;
}

CleanReport clean_intersection_check(const ConstraintSubmanifold& A, const ConstraintSubmanifold& B,
                                     const std::vector<VectorXd>& samples, double tol) {
  CleanReport R;
  R.worst_gap = std::numeric_limits<double>::infinity();
  if (samples.size() < 20) {
    R.empty = true;
    R.is_manifold = false;
    R.samples_used = (int)samples.size();
    return R;
  }
  ExprField FAB = A.constraints.stacked(B.constraints);
  int n = A.ambient_dim();
  int dA = A.expected_dim, dB = B.expected_dim;
  int stacked_rank0 = -1;
  GNOptions o;
  o.tol = 1e-13;
  o.polish = 60;
  for (size_t si = 0; si < samples.size(); ++si) {
    auto g = gauss_newton(FAB, samples[si], o);
    VectorXd pt = g.residual < 1e-8 ? g.x : samples[si];
    MatrixXd JA = A.constraints.jac(pt), JB = B.constraints.jac(pt);
    auto rA = rank_info(JA, tol), rB = rank_info(JB, tol);
    if (rA.rank != n - dA || rB.rank != n - dB) R.is_manifold = false;
    R.worst_gap = std::min({R.worst_gap, rA.gap, rB.gap});
    MatrixXd TA = null_space(JA, tol), TB = null_space(JB, tol);
    MatrixXd TT(n, TA.cols() + TB.cols());
    TT << TA, TB;
    auto rT = rank_info(TT, tol);
    int k_tan = (int)TA.cols() + (int)TB.cols() - rT.rank;
    MatrixXd JS(JA.rows() + JB.rows(), n);
    JS << JA, JB;
    auto rS = rank_info(JS, tol);
    R.worst_gap = std::min({R.worst_gap, rT.gap, rS.gap});
    if (stacked_rank0 < 0) stacked_rank0 = rS.rank;
    else if (rS.rank != stacked_rank0) R.rank_constant = false;
    MatrixXd V = null_space(JS, tol);
    auto ld = projected_dimension(FAB, pt, V);
    if (R.intersection_dim < 0) R.intersection_dim = ld.dim;
    else if (ld.dim != R.intersection_dim) R.is_manifold = false;
    int gap = k_tan - ld.dim;
    if (gap > R.tangent_gap) {
      R.tangent_gap = gap;
      R.witness = (int)si;
    }
    if (gap != 0) R.tangent_equality = false;
    ++R.samples_used;
  }
  R.marginal = R.worst_gap < 1e3;
  R.excess_over_transversal = R.intersection_dim - (dA + dB - n);
  return R;
}

// ---------------------------------------------------------------- symplectic

double symplectic_form_value(const SymplecticSpace& sp, const VectorXd& u, const VectorXd& v) {
  if (u.size() != sp.dim() || v.size() != sp.dim())
    throw std::invalid_argument("tangent vector dimension " + std::to_string(u.size()) + "/" + std::to_string(v.size()) +
                                " does not match symplectic space of dimension " + std::to_string(sp.dim()));
  double w = 0;
  for (int f = 0; f < sp.factors; ++f) {
    double sgn = f == 0 ? 1.0 : -1.0;
    int off = 2 * sp.n * f;
    for (int i = 0; i < sp.n; ++i) {
      int zi = off + i, pi = off + sp.n + i;
      w += sgn * (u[zi] * v[pi] - u[pi] * v[zi]);
    }
  }
  return w;
}

double max_isotropy(const SymplecticSpace& sp, const MatrixXd& F) {
  double m = 0;
  for (int i = 0; i < F.cols(); ++i)
    for (int j = i + 1; j < F.cols(); ++j) m = std::max(m, std::fabs(symplectic_form_value(sp, F.col(i), F.col(j))));
  return m;
}

// ---------------------------------------------------------------- sampling

static VectorXd random_seed(const ConstraintSubmanifold& sub, const SampleBox& box, std::mt19937_64& rng, double& r) {
  int n = sub.ambient_dim();
  VectorXd x(n);
  std::vector<char> fiber(n, 0);
  for (int s : sub.conic_slots) fiber[s] = 1;
  for (int i = 0; i < n; ++i)
    x[i] = fiber[i] ? normal01(rng) : box.base_lo + (box.base_hi - box.base_lo) * uniform01(rng);
  r = box.r_min + (box.r_max - box.r_min) * uniform01(rng);
  if (!sub.conic_slots.empty()) {
    double nn = 0;
    for (int s : sub.conic_slots) nn += x[s] * x[s];
    nn = std::sqrt(nn);
    for (int s : sub.conic_slots) x[s] *= r / nn;
  }
  return x;
}

static bool rescale_fiber(const ConstraintSubmanifold& sub, VectorXd& x, double r) {
  if (sub.conic_slots.empty()) return true;
  double nn = 0;
  for (int s : sub.conic_slots) nn += x[s] * x[s];
  nn = std::sqrt(nn);
  if (nn < 1e-12) return false;
  for (int s : sub.conic_slots) x[s] *= r / nn;
  return true;
}

static bool accept(const ConstraintSubmanifold& sub, const VectorXd& x) {
  if (!x.allFinite()) return false;
  VectorXd f = sub.constraints.eval(x);
  if (f.size() && !(f.norm() < sub.tol_residual)) return false;
  if (!sub.in_domain(x)) return false;
  if (sub.constraints.margin(x) < 1e-8) return false;
  for (auto& g : sub.domain)
    if (g.singular_margin(std::span<const double>(x.data(), x.size())) < 1e-8) return false;
  return true;
}

std::vector<VectorXd> sample_cone(const ConstraintSubmanifold& sub, int count, const SampleBox& box,
                                  std::mt19937_64& rng, int budget_factor) {
  std::vector<VectorXd> out;
  int attempts = 0, budget = std::max(count * budget_factor, 100);
  GNOptions o;
  o.tol = sub.tol_residual * 1e-2;
  while ((int)out.size() < count && attempts < budget) {
    ++attempts;
    double r;
    VectorXd x = random_seed(sub, box, rng, r);
    auto g = gauss_newton(sub.constraints, x, o);
    if (!g.converged) continue;
    VectorXd y = g.x;
    if (!rescale_fiber(sub, y, r)) continue;
    if (accept(sub, y)) out.push_back(y);
  }
  if ((int)out.size() < count) {
    double rate = attempts ? (double)out.size() / attempts : 0.0;
    throw SamplerStarvation("sampler starved: " + std::to_string(out.size()) + " of " + std::to_string(count) +
                                " samples after " + std::to_string(attempts) + " attempts (acceptance rate " +
                                std::to_string(rate) + ")",
                            rate);
  }
  return out;
}

IntersectionSamples sample_intersection(const ConstraintSubmanifold& A, const ConstraintSubmanifold& B, int count,
                                        const SampleBox& box, std::mt19937_64& rng, const std::vector<VectorXd>& seeds) {
  ConstraintSubmanifold S = A;
  S.constraints = A.constraints.stacked(B.constraints);
  S.domain.insert(S.domain.end(), B.domain.begin(), B.domain.end());
  IntersectionSamples R;
  R.best_residual = std::numeric_limits<double>::infinity();
  GNOptions o;
  o.tol = S.tol_residual * 1e-2;
  o.polish = 60;
  int attempts = 0, stagnated = 0, budget = std::max(count * 20, 200);
  size_t si = 0;
  while ((int)R.points.size() < count && attempts < budget) {
    ++attempts;
    double r = box.r_min + (box.r_max - box.r_min) * uniform01(rng);
    VectorXd x;
    if (si < seeds.size()) x = seeds[si++];
    else x = random_seed(S, box, rng, r);
    auto g = gauss_newton(S.constraints, x, o);
    R.best_residual = std::min(R.best_residual, g.residual);
    if (!g.converged) {
      if (g.stagnated) ++stagnated;
      continue;
    }
    VectorXd y = g.x;
    if (!rescale_fiber(S, y, r)) continue;
    if (accept(S, y)) R.points.push_back(y);
  }
  if (R.points.empty()) {
    if (stagnated * 10 >= attempts * 9) R.empty = true;
    else R.inconclusive = true;
  }
  return R;
}

}  // namespace ftr
