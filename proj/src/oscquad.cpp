#include "fiotrace/oscquad.hpp"

#include <algorithm>
#include <cmath>

namespace ftr {

void MollifiedIntegralSpec::validate() const {
  if (epsilons.empty()) throw std::invalid_argument("epsilon sequence is empty");
  if (epsilons.size() == 1 && epsilons[0] == 0) {
    if (radius <= 0) throw std::invalid_argument("plain quadrature (eps = 0) needs an explicit radius");
    return;
  }
  for (size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0)) throw std::invalid_argument("epsilons must be positive");
    if (i && !(epsilons[i] < epsilons[i - 1])) throw std::invalid_argument("epsilons must be strictly decreasing");
  }
  if (order < 1) throw std::invalid_argument("extrapolation order must be >= 1");
  if ((int)epsilons.size() < 2) throw std::invalid_argument("need at least two epsilons to extrapolate");
}

namespace {

cplx neville0(const double* x, const cplx* y, int n) {
  std::vector<cplx> P(y, y + n);
  for (int m = 1; m < n; ++m)
    for (int i = 0; i + m < n; ++i)
      P[i] = ((0 - x[i + m]) * P[i] + (x[i] - 0) * P[i + 1]) / (x[i] - x[i + m]);
  return P[0];
}

int ceil16(double v) { return 16 * std::max(1, (int)std::ceil(v / 16.0)); }

}  // namespace

std::pair<cplx, double> extrapolate(const std::vector<double>& eps, const std::vector<cplx>& vals, int order) {
  int n = (int)eps.size();
  int p = std::min(order, n - 1);
  if (p < 1) return {vals.back(), 0.0};
  cplx hi = neville0(eps.data() + n - p - 1, vals.data() + n - p - 1, p + 1);
  cplx lo = neville0(eps.data() + n - p, vals.data() + n - p, p);
  return {hi, std::abs(hi - lo)};
}

OracleResult oscillatory_integral(const Expression& phase, const Expression& a_re, const Expression& a_im,
                                  const std::vector<int>& slots, const VectorXd& fixed,
                                  const MollifiedIntegralSpec& spec) {
  spec.validate();
  const int d = (int)slots.size();
  if (d < 1) throw std::invalid_argument("no integration variables");
  const int D = phase.layout()->total_dim();
  if (fixed.size() != D) throw std::invalid_argument("fixed point has the wrong dimension");

  bool plain = spec.epsilons.size() == 1 && spec.epsilons[0] == 0;
  std::vector<double> levels = spec.epsilons;
  if (!plain && spec.halving_check) levels.push_back(spec.epsilons.back() / 2);
  const int L = (int)levels.size();

  Tape tphi(phase), tre(a_re), tim(a_im);
  bool re_zero = a_re.is_zero(), im_zero = a_im.is_zero();

  // preconditioner
  MatrixXd A = MatrixXd::Identity(d, d);
  double jac = 1;
  if (spec.hessian_normalize) {
    MatrixXd H(d, d);
    VectorXd z = fixed;
    auto f = [&](int i, double hi, int j, double hj) {
      VectorXd q = z;
      q[slots[i]] += hi;
      q[slots[j]] += hj;
      return tphi.eval(q.data());
    };
    for (int i = 0; i < d; ++i)
      for (int j = i; j < d; ++j) {
        double hi = 1e-3 * (1 + std::fabs(z[slots[i]])), hj = 1e-3 * (1 + std::fabs(z[slots[j]]));
        double v = (f(i, hi, j, hj) - f(i, hi, j, -hj) - f(i, -hi, j, hj) + f(i, -hi, j, -hj)) / (4 * hi * hj);
        H(i, j) = H(j, i) = v;
      }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(H);
    VectorXd lam = es.eigenvalues().cwiseAbs();
    double mx = lam.maxCoeff();
    if (mx > 0 && std::isfinite(mx)) {
      // flat directions keep unit scale
      for (int i = 0; i < d; ++i) lam[i] = lam[i] < 1e-6 * mx ? 1.0 : 1 / std::sqrt(lam[i]);
      A = es.eigenvectors() * lam.asDiagonal();
      jac = std::fabs(A.determinant());
    }
  }

  double R = spec.radius > 0 ? spec.radius : 6.0 / std::sqrt(levels.back());
  int n = spec.nodes > 0 ? ceil16(spec.nodes) : std::max(32, ceil16(spec.kappa * R * R));
  VectorXd X(n), W(n);
  {
    VectorXd gx, gw;
    gauss_legendre(16, gx, gw);
    int P = n / 16;
    double h = 2 * R / P;
    for (int k = 0; k < P; ++k)
      for (int i = 0; i < 16; ++i) {
        X[16 * k + i] = -R + h * (k + 0.5) + 0.5 * h * gx[i];
        W[16 * k + i] = 0.5 * h * gw[i];
      }
  }

  // column storage: integration slots get their own arrays, everything else a constant column
  std::vector<std::vector<double>> colbuf(D, std::vector<double>(n));
  std::vector<const double*> cols(D);
  for (int s = 0; s < D; ++s) {
    std::fill(colbuf[s].begin(), colbuf[s].end(), fixed[s]);
    cols[s] = colbuf[s].data();
  }
  std::vector<double> ph(n), ar(n, 0.0), ai(n, 0.0), work;
  std::vector<cplx> total(L, 0.0), row(L);
  OracleResult res;

  // the mollifier factorizes: exp(-eps s_outer^2) exp(-eps s_inner^2), inner factors tabulated
  std::vector<std::vector<double>> E(L, std::vector<double>(n, 1.0));
  if (!plain)
    for (int l = 0; l < L; ++l)
      for (int i = 0; i < n; ++i) E[l][i] = W[i] * std::exp(-levels[l] * X[i] * X[i]);
  std::vector<int> idx(d - 1, 0);
  const double R2 = R * R;
  while (true) {
    double s2 = 0, wout = 1;
    for (int k = 0; k < d - 1; ++k) {
      s2 += X[idx[k]] * X[idx[k]];
      wout *= W[idx[k]];
    }
    if (s2 <= R2) {
      double r = std::sqrt(R2 - s2);
      int lo = (int)(std::lower_bound(X.data(), X.data() + n, -r) - X.data());
      int hi = (int)(std::upper_bound(X.data(), X.data() + n, r) - X.data());
      int m = hi - lo;
      if (m > 0) {
        for (int j = 0; j < d; ++j) {
          double b = fixed[slots[j]];
          for (int k = 0; k < d - 1; ++k) b += A(j, k) * X[idx[k]];
          double a = A(j, d - 1);
          double* c = colbuf[slots[j]].data();
          for (int i = 0; i < m; ++i) c[i] = b + a * X[lo + i];
        }
        tphi.eval_batch(cols.data(), m, ph.data(), work);
        if (!re_zero) tre.eval_batch(cols.data(), m, ar.data(), work);
        if (!im_zero) tim.eval_batch(cols.data(), m, ai.data(), work);
        std::fill(row.begin(), row.end(), cplx(0));
        for (int i = 0; i < m; ++i) {
          double a_r = ar[i], a_i = ai[i];
          if (a_r == 0 && a_i == 0) continue;
          double f = ph[i];
          if (!std::isfinite(f) || !std::isfinite(a_r) || !std::isfinite(a_i)) {
            ++res.nonfinite;
            continue;
          }
          double c = std::cos(f), sn = std::sin(f);
          cplx v(c * a_r - sn * a_i, sn * a_r + c * a_i);
          if (plain)
            row[0] += W[lo + i] * v;
          else
            for (int l = 0; l < L; ++l) row[l] += E[l][lo + i] * v;
        }
        for (int l = 0; l < L; ++l) total[l] += (plain ? wout : wout * std::exp(-levels[l] * s2)) * row[l];
        res.evaluations += m;
      }
    }
    int k = d - 2;
    while (k >= 0 && ++idx[k] == n) idx[k--] = 0;
    if (k < 0) break;
  }
  for (auto& t : total) t *= jac;
  // constant arrays were overwritten for integration slots only; nothing to restore

  res.nodes = n;
  res.radius = R;
  res.jacobian = jac;
  for (int l = 0; l < L; ++l) res.epsilon_trace.push_back({levels[l], total[l]});
  if (plain) {
    res.value = total[0];
    return res;
  }
  std::vector<double> e1(spec.epsilons);
  std::vector<cplx> v1(total.begin(), total.begin() + e1.size());
  auto [val, err] = extrapolate(e1, v1, spec.order);
  res.value = val;
  res.error_estimate = err;
  // no significant digit left
  if (!(err < 0.25 * std::abs(val)) && std::abs(val) > 1e-14) res.inconclusive = true;
  if (spec.halving_check) {
    auto [v2, e2] = extrapolate(levels, total, spec.order);
    (void)e2;
    res.halving_change = std::abs(v2 - val);
    res.halving_ok = res.halving_change <= err;
  }
  return res;
}

OracleResult trace_kernel_value(const PhaseFunction& phi_xx, const Expression& a_re, const Expression& a_im,
                                int dim_m, const VectorXd& x, const VectorXd& xp, const MollifiedIntegralSpec& spec) {
  if (x.size() != phi_xx.base_dim() || xp.size() != (int)phi_xx.primed_slots.size())
    throw std::invalid_argument("kernel point has the wrong dimension");
  VectorXd z = VectorXd::Zero(phi_xx.layout->total_dim());
  for (int i = 0; i < x.size(); ++i) z[phi_xx.base_slots[i]] = x[i];
  for (int i = 0; i < xp.size(); ++i) z[phi_xx.primed_slots[i]] = xp[i];
  MollifiedIntegralSpec s = spec;
  s.hessian_normalize = false;
  auto r = oscillatory_integral(phi_xx.phi, a_re, a_im, phi_xx.theta_slots, z, s);
  double c = std::pow(2 * M_PI, -0.5 * (dim_m + phi_xx.n_theta));
  r.value *= c;
  r.error_estimate *= c;
  r.halving_change *= c;
  for (auto& [e, v] : r.epsilon_trace) v *= c;
  return r;
}

OracleResult amplitude_oracle(const AmplitudeEngine& engine, const VectorXd& w, const MollifiedIntegralSpec& spec,
                              int max_dim) {
  const auto& B = engine.big();
  const auto& sp = B.splitting();
  if (sp.e != 0 || !sp.Q.isIdentity(1e-14))
    throw std::invalid_argument("amplitude oracle needs the identity theta splitting");
  const auto& U = B.unknowns();
  int d = (int)U.size();
  if (d > max_dim)
    throw OracleTooLarge("amplitude oracle would integrate over " + std::to_string(d) + " dimensions (limit " +
                         std::to_string(max_dim) + ")");
  auto st = engine.find_stationary_point(w);
  if (st.degenerate) throw DegenerateHessian("stationary point is degenerate; the oracle needs an isolated one");
  double S = st.psi0 - st.critical_value;
  Expression phase = B.psi0().with_root(ex::sub(B.psi0().root(), ex::num(S)));
  int N = sp.n_theta();
  int nbar = d - N;
  double c = std::pow(2 * M_PI, -0.5 * (engine.dim_m() + N) - 0.5 * nbar);
  auto r = oscillatory_integral(phase, engine.amplitude_re(), engine.amplitude_im(), U, st.big, spec);
  r.value *= c;
  r.error_estimate *= c;
  r.halving_change *= c;
  for (auto& [e, v] : r.epsilon_trace) v *= c;
  return r;
}

WavepacketResult wavepacket_operator_check(const PhaseFunction& phi_xx, const Expression& a_re,
                                           const Expression& a_im, int dim_m, double x0, double p0, double sigma,
                                           double predicted_center, const std::vector<double>& xs,
                                           const MollifiedIntegralSpec& spec) {
  if (phi_xx.base_dim() != 1 || phi_xx.primed_slots.size() != 1)
    throw std::invalid_argument("wavepacket check needs dim X = 1");
  if (xs.size() < 3) throw std::invalid_argument("wavepacket grid too small");
  const auto& lay = phi_xx.layout;
  int sx = phi_xx.base_slots[0], sxp = phi_xx.primed_slots[0];
  using namespace ex;
  NodeP dx = sub(var(sxp), num(x0));
  NodeP g = fn(Op::Exp, neg(div(mul(dx, dx), num(2 * sigma * sigma))));
  Expression phase = phi_xx.phi.with_root(add(phi_xx.phi.root(), mul(num(p0), var(sxp))));
  Expression gre = a_re.with_root(mul(a_re.root(), g));
  Expression gim = a_im.with_root(mul(a_im.root(), g));
  std::vector<int> slots{sxp};
  for (int s : phi_xx.theta_slots) slots.push_back(s);
  std::vector<Expression> grad = gradient(phase, slots);
  double cst = std::pow(2 * M_PI, -0.5 * (dim_m + phi_xx.n_theta));

  WavepacketResult out;
  out.input_center = x0;
  out.predicted_center = predicted_center;
  out.input_mass = sigma * std::sqrt(M_PI);
  out.xs = xs;
  VectorXd prev;
  for (double x : xs) {
    std::vector<Expression> F = grad;
    F.push_back(Expression(sub(var(sx), num(x)), lay));
    ExprField field(F, lay);
    VectorXd z = VectorXd::Zero(lay->total_dim());
    z[sx] = x;
    z[sxp] = x0;
    z[phi_xx.theta_slots[0]] = p0;
    if (prev.size()) z = prev, z[sx] = x;
    auto gn = gauss_newton(field, z);
    VectorXd c = gn.x.allFinite() ? gn.x : z;
    if (!phi_xx.in_cone(c)) c = z;
    prev = c;
    auto r = oscillatory_integral(phase, gre, gim, slots, c, spec);
    out.density.push_back(std::norm(cst * r.value));
  }
  double m = 0, mx = 0;
  for (size_t i = 0; i < xs.size(); ++i) {
    double h = i == 0 ? xs[1] - xs[0] : i + 1 == xs.size() ? xs[i] - xs[i - 1] : 0.5 * (xs[i + 1] - xs[i - 1]);
    m += h * out.density[i];
    mx += h * xs[i] * out.density[i];
  }
  out.output_mass = m;
  out.output_center = m > 0 ? mx / m : std::nan("");
  return out;
}

}  // namespace ftr
