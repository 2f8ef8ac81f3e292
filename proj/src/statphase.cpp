#include "fiotrace/statphase.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace ftr {

// ---------------------------------------------------------------- charts

CanonicalChart make_chart(int k, std::vector<int> I, std::vector<int> Ip, std::optional<std::string> S_text,
                          const Params& params) {
  CanonicalChart C;
  C.k = k;
  auto check = [&](std::vector<int>& v, const char* name) {
    std::sort(v.begin(), v.end());
    std::set<int> seen;
    for (int i : v)
      if (i < 1 || i > k || !seen.insert(i).second)
        throw std::invalid_argument(std::string("bad chart index set ") + name + ": " + std::to_string(i));
  };
  check(I, "I");
  check(Ip, "I'");
  C.I = I;
  C.Ip = Ip;
  for (int i = 1; i <= k; ++i) {
    if (!std::count(I.begin(), I.end(), i)) C.Ibar.push_back(i);
    if (!std::count(Ip.begin(), Ip.end(), i)) C.Ipbar.push_back(i);
  }
  for (int i : C.I) C.w_from_z.push_back(i - 1), C.w_is_fiber.push_back(0);
  for (int i : C.Ibar) C.w_from_z.push_back(k + i - 1), C.w_is_fiber.push_back(1);
  for (int i : C.Ip) C.w_from_z.push_back(2 * k + i - 1), C.w_is_fiber.push_back(0);
  for (int i : C.Ipbar) C.w_from_z.push_back(3 * k + i - 1), C.w_is_fiber.push_back(1);
  C.w_layout = make_layout({{"w", 2 * k}});
  if (S_text) C.S = parse_expression(*S_text, C.w_layout, params);
  return C;
}

VectorXd chart_coords(const CanonicalChart& ch, const VectorXd& z) {
  VectorXd w(ch.w_dim());
  for (int j = 0; j < ch.w_dim(); ++j) w[j] = z[ch.w_from_z[j]];
  return w;
}

ChartFit fit_canonical_chart(const CanonicalChart& ch, const TracedLagrangian& tl) {
  ChartFit F;
  int k = ch.k;
  MatrixXd Sel = MatrixXd::Zero(2 * k, 4 * k);
  for (int j = 0; j < 2 * k; ++j) Sel(j, ch.w_from_z[j]) = 1;
  F.rank = 2 * k;
  for (auto& fr : tl.frames) F.rank = std::min(F.rank, numeric_rank(Sel * fr, 1e-6));
  if (F.rank < 2 * k)
    throw NotAChart("not a chart; choose different index sets (w-differential rank " + std::to_string(F.rank) +
                        ", need " + std::to_string(2 * k) + ")",
                    F.rank);
  if (!ch.S) return F;
  F.have_S = true;
  auto grad = gradient(*ch.S, [&] {
    std::vector<int> s(2 * k);
    for (int j = 0; j < 2 * k; ++j) s[j] = j;
    return s;
  }());
  for (auto& z : tl.points) {
    VectorXd w = chart_coords(ch, z);
    std::span<const double> ws(w.data(), w.size());
    bool ok = ch.S->singular_margin(ws) > 1e-8;
    for (auto& g : grad) ok = ok && g.singular_margin(ws) > 1e-8;
    if (!ok) continue;
    double S = ch.S->eval(ws), euler = 0;
    double scale = 1 + z.norm();
    for (int j = 0; j < 2 * k; ++j) {
      double d = grad[j].eval(ws);
      int zi = ch.w_from_z[j];
      double want;
      if (zi < k) want = d;                 // x_I: p_I = dS/dx_I
      else if (zi < 2 * k) want = -d;       // p_Ibar: x_Ibar = -dS/dp
      else if (zi < 3 * k) want = -d;       // x'_I': p'_I' = -dS/dx'
      else want = d;                        // p'_I'bar: x' = dS/dp'
      int partner = zi < k ? zi + k : zi < 2 * k ? zi - k : zi < 3 * k ? zi + k : zi - k;
      F.canonical_residual = std::max(F.canonical_residual, std::fabs(z[partner] - want) / scale);
      if (ch.w_is_fiber[j]) euler += w[j] * d;
    }
    F.euler_residual = std::max(F.euler_residual, std::fabs(euler - S) / (1 + std::fabs(S)));
    VectorXd w2 = w;
    for (int j = 0; j < 2 * k; ++j)
      if (ch.w_is_fiber[j]) w2[j] *= 2;
    double S2 = ch.S->eval(std::span<const double>(w2.data(), w2.size()));
    F.euler_residual = std::max(F.euler_residual, std::fabs(S2 - 2 * S) / (1 + std::fabs(2 * S)));
  }
  return F;
}

// ---------------------------------------------------------------- theta splitting

ThetaSplitting identity_splitting(int N) {
  ThetaSplitting T;
  T.Q = MatrixXd::Identity(N, N);
  T.e = 0;
  return T;
}

// Gram-Schmidt of the standard basis projected by P, at most `want` vectors
static MatrixXd projected_basis(const MatrixXd& P, int want) {
  int N = (int)P.rows();
  MatrixXd B(N, 0);
  for (int j = 0; j < N && B.cols() < want; ++j) {
    VectorXd v = P.col(j);
    for (int c = 0; c < B.cols(); ++c) v -= B.col(c).dot(v) * B.col(c);
    for (int c = 0; c < B.cols(); ++c) v -= B.col(c).dot(v) * B.col(c);
    if (v.norm() < 1e-8) continue;
    B.conservativeResize(N, B.cols() + 1);
    B.col(B.cols() - 1) = v.normalized();
  }
  return B;
}

ThetaSplitting compute_theta_splitting(const PhaseFunction& phi_xx, const CriticalManifold& crit_xx, int base_index,
                                       bool strict) {
  int N = phi_xx.n_theta;
  if (crit_xx.empty()) throw std::invalid_argument("theta splitting needs a non-empty critical set");
  int e = crit_xx.excess;
  ThetaSplitting T;
  T.e = e;
  T.base_point = crit_xx.points[base_index];
  if (e <= 0) {
    T.Q = MatrixXd::Identity(N, N);
    T.e = 0;
    return T;
  }
  const MatrixXd& K = crit_xx.fiber_frames[base_index];
  MatrixXd Kt(N, K.cols());
  for (int i = 0; i < N; ++i) Kt.row(i) = K.row(phi_xx.theta_slots[i]);
  MatrixXd B = orth(Kt);
  if (B.cols() != e)
    throw std::runtime_error("fiber frames not of constant rank: theta-projection has rank " +
                             std::to_string(B.cols()) + ", excess " + std::to_string(e));
  MatrixXd P = B * B.transpose();
  MatrixXd Bf = projected_basis(P, e);
  MatrixXd Bc = projected_basis(MatrixXd::Identity(N, N) - P, N - e);
  T.Q.resize(N, N);
  T.Q << Bc, Bf;
  T.min_theta_prime = std::numeric_limits<double>::infinity();
  for (auto& c : crit_xx.points) {
    VectorXd th(N);
    for (int i = 0; i < N; ++i) th[i] = c[phi_xx.theta_slots[i]];
    double r = (Bc.transpose() * th).norm() / th.norm();
    T.min_theta_prime = std::min(T.min_theta_prime, r);
  }
  if (strict && T.min_theta_prime < 1e-6)
    throw std::runtime_error("theta' vanishes on the critical set: neighbourhood too large, shrink the chart");
  return T;
}

// ---------------------------------------------------------------- big phase

BigPhase::BigPhase(const PhaseFunction& phi_xx, const CanonicalChart& chart, const ThetaSplitting& sp)
    : phi_xx_(phi_xx), chart_(chart), sp_(sp) {
  int k = chart.k, N = phi_xx.n_theta, e = sp.e;
  int nI = (int)chart.Ibar.size(), nIp = (int)chart.Ipbar.size();
  std::vector<Block> blocks{{"w", 2 * k}};
  if (nI) blocks.push_back({"xi", nI});
  if (nIp) blocks.push_back({"xpi", nIp});
  if (N - e) blocks.push_back({"u", N - e});
  if (e) blocks.push_back({"v", e});
  layout_ = make_layout(blocks);
  const auto& L = *layout_;
  for (int j = 1; j <= 2 * k; ++j) w_slots_.push_back(L.slot("w", j));
  for (int j = 1; j <= nI; ++j) xi_slots_.push_back(L.slot("xi", j));
  for (int j = 1; j <= nIp; ++j) xpi_slots_.push_back(L.slot("xpi", j));
  for (int j = 1; j <= N - e; ++j) theta_like_.push_back(L.slot("u", j));
  for (int j = 1; j <= e; ++j) v_slots_.push_back(L.slot("v", j));
  theta_like_.insert(theta_like_.end(), v_slots_.begin(), v_slots_.end());
  unknowns_ = xi_slots_;
  unknowns_.insert(unknowns_.end(), xpi_slots_.begin(), xpi_slots_.end());
  for (int j = 0; j < N - e; ++j) unknowns_.push_back(theta_like_[j]);

  const auto& R = *phi_xx.layout;
  map_.assign(R.total_dim(), nullptr);
  auto w_slot_of = [&](int zi) {
    for (int j = 0; j < 2 * k; ++j)
      if (chart.w_from_z[j] == zi) return w_slots_[j];
    return -1;
  };
  int a = 0, b = 0;
  for (int i = 1; i <= k; ++i) {
    int s = R.slot("x", i);
    int ws = w_slot_of(i - 1);
    map_[s] = ws >= 0 ? ex::var(ws) : ex::var(xi_slots_[a++]);
    int sp2 = R.slot("xp", i);
    int wp = w_slot_of(2 * k + i - 1);
    map_[sp2] = wp >= 0 ? ex::var(wp) : ex::var(xpi_slots_[b++]);
  }
  for (int j = 0; j < N; ++j) {
    NodeP t = ex::num(0);
    for (int l = 0; l < N; ++l) {
      double q = sp.Q(j, l);
      if (std::fabs(q) < 1e-14) continue;
      NodeP term = std::fabs(q - 1) < 1e-15 ? ex::var(theta_like_[l]) : ex::mul(ex::num(q), ex::var(theta_like_[l]));
      t = ex::add(t, term);
    }
    map_[phi_xx.theta_slots[j]] = t;
  }
  for (auto& m : map_) map_tapes_.emplace_back(Expression(m, layout_));
  NodeP psi = rebind(phi_xx.phi, layout_, map_).root();
  a = b = 0;
  for (int i : chart.Ibar) psi = ex::sub(psi, ex::mul(ex::var(w_slot_of(k + i - 1)), ex::var(xi_slots_[a++])));
  for (int i : chart.Ipbar) psi = ex::add(psi, ex::mul(ex::var(w_slot_of(3 * k + i - 1)), ex::var(xpi_slots_[b++])));
  psi0_ = Expression(psi, layout_, phi_xx.phi.params());
  grad_ = ExprField(ftr::gradient(psi0_, unknowns_), layout_);
}

Expression BigPhase::lift(const Expression& e) const { return rebind(e, layout_, map_); }

VectorXd BigPhase::to_restricted(const VectorXd& z) const {
  VectorXd c(map_tapes_.size());
  for (size_t s = 0; s < map_tapes_.size(); ++s) c[s] = map_tapes_[s].eval(z.data());
  return c;
}

VectorXd BigPhase::to_big(const VectorXd& c) const {
  const auto& R = *phi_xx_.layout;
  int k = chart_.k, N = phi_xx_.n_theta;
  VectorXd Z = VectorXd::Zero(layout_->total_dim());
  VectorXd g = gamma_field(phi_xx_).eval(c);
  VectorXd w = chart_coords(chart_, g);
  for (int j = 0; j < 2 * k; ++j) Z[w_slots_[j]] = w[j];
  for (size_t a = 0; a < chart_.Ibar.size(); ++a) Z[xi_slots_[a]] = c[R.slot("x", chart_.Ibar[a])];
  for (size_t b = 0; b < chart_.Ipbar.size(); ++b) Z[xpi_slots_[b]] = c[R.slot("xp", chart_.Ipbar[b])];
  VectorXd th(N);
  for (int i = 0; i < N; ++i) th[i] = c[phi_xx_.theta_slots[i]];
  VectorXd uv = sp_.Q.transpose() * th;
  for (int l = 0; l < N; ++l) Z[theta_like_[l]] = uv[l];
  return Z;
}

// ---------------------------------------------------------------- stationary points

int signature_of(const MatrixXd& H, double guard) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (H + H.transpose()));
  auto ev = es.eigenvalues();
  double mx = ev.cwiseAbs().maxCoeff();
  int s = 0;
  for (int i = 0; i < ev.size(); ++i) {
    if (std::fabs(ev[i]) < guard * mx) throw DegenerateHessian("hessian eigenvalue inside the guard band");
    s += ev[i] > 0 ? 1 : -1;
  }
  return s;
}

const char* prefactor_name(PrefactorMode m) { return m == PrefactorMode::Derived ? "derived" : "paper"; }

PrefactorMode parse_prefactor(const std::string& s) {
  if (s == "derived") return PrefactorMode::Derived;
  if (s == "paper") return PrefactorMode::Paper;
  throw std::invalid_argument("prefactor mode must be 'derived' or 'paper', got '" + s + "'");
}

double prefactor(PrefactorMode m, int dim_m, int N, int e) {
  double ex = m == PrefactorMode::Derived ? 0.5 * (dim_m + e) : 0.5 * (dim_m + N - e);
  return std::pow(2 * M_PI, -ex);
}

AmplitudeEngine::AmplitudeEngine(const PhaseFunction& phi_xx, const CanonicalChart& chart, const ThetaSplitting& sp,
                                 const Expression& a_re, const Expression& a_im, std::vector<VectorXd> seeds,
                                 int dim_m)
    : big_(phi_xx, chart, sp), seeds_(std::move(seeds)), dim_m_(dim_m), gamma_xx_(gamma_field(phi_xx)) {
  a_re_big_ = big_.lift(a_re);
  a_im_big_ = big_.lift(a_im);
  a_re_ = Tape(a_re_big_);
  a_im_ = Tape(a_im_big_);
  if (seeds_.empty()) throw std::invalid_argument("amplitude engine needs critical-point seeds");
}

cplx AmplitudeEngine::amp(const VectorXd& Z) const { return {a_re_.eval(Z.data()), a_im_.eval(Z.data())}; }

StationaryPointData AmplitudeEngine::solve(const VectorXd& start, double tol) const {
  const auto& G = big_.gradient();
  const auto& U = big_.unknowns();
  VectorXd Z = start;
  double scale = 1 + Z.norm();
  bool ok = false;
  StationaryPointData d;
  for (int it = 0; it < 60; ++it) {
    VectorXd g = G.eval(Z);
    d.gradient_norm = g.norm();
    if (!std::isfinite(d.gradient_norm)) break;
    if (d.gradient_norm < tol * scale) {
      ok = true;
      break;
    }
    MatrixXd J = G.jac(Z);
    MatrixXd Ju(J.rows(), U.size());
    for (size_t c = 0; c < U.size(); ++c) Ju.col(c) = J.col(U[c]);
    Eigen::JacobiSVD<MatrixXd> svd(Ju, Eigen::ComputeThinU | Eigen::ComputeThinV);
    svd.setThreshold(1e-13);
    VectorXd step = -svd.solve(g);
    double cap = 0.5 * (1 + Z.norm());
    if (step.norm() > cap) step *= cap / step.norm();
    for (size_t c = 0; c < U.size(); ++c) Z[U[c]] += step[c];
  }
  if (!ok) throw StationaryFailure("stationary-point Newton did not converge (|grad| = " +
                                   std::to_string(d.gradient_norm) + ")");
  d.big = Z;
  d.point = big_.to_restricted(Z);
  MatrixXd J = G.jac(Z);
  d.hessian.resize(U.size(), U.size());
  for (size_t c = 0; c < U.size(); ++c) d.hessian.col(c) = J.col(U[c]);
  d.hessian = 0.5 * (d.hessian + d.hessian.transpose()).eval();
  d.det = d.hessian.size() ? d.hessian.determinant() : 1.0;
  try {
    d.signature = d.hessian.size() ? signature_of(d.hessian) : 0;
  } catch (const DegenerateHessian&) {
    d.degenerate = true;
  }
  d.psi0 = big_.psi0().eval(std::span<const double>(Z.data(), Z.size()));
  if (big_.chart().S) {
    VectorXd w(big_.w_slots().size());
    for (int j = 0; j < (int)w.size(); ++j) w[j] = Z[big_.w_slots()[j]];
    d.critical_value = d.psi0 - big_.chart().S->eval(std::span<const double>(w.data(), w.size()));
  }
  return d;
}

bool AmplitudeEngine::valid(const StationaryPointData& d, const VectorXd& w) const {
  const auto& ph = big_.phi_xx();
  if (!d.point.allFinite()) return false;
  if (!ph.in_cone(d.point)) return false;
  std::span<const double> p(d.point.data(), d.point.size());
  if (ph.phi.singular_margin(p) < 1e-9) return false;
  if (a_re_big_.singular_margin(std::span<const double>(d.big.data(), d.big.size())) < 0) return false;
  VectorXd wc = chart_coords(big_.chart(), gamma_xx_.eval(d.point));
  return (wc - w).norm() < 1e-7 * (1 + w.norm());
}

VectorXd AmplitudeEngine::seed_for(const VectorXd& w) const {
  const auto& ch = big_.chart();
  const auto& ph = big_.phi_xx();
  double best = std::numeric_limits<double>::infinity();
  VectorXd pick;
  for (auto& c : seeds_) {
    VectorXd wc = chart_coords(ch, gamma_xx_.eval(c));
    double nf = 0, nt = 0;
    for (int j = 0; j < wc.size(); ++j)
      if (ch.w_is_fiber[j]) nf += wc[j] * wc[j], nt += w[j] * w[j];
    double lam = nf > 1e-24 ? std::sqrt(nt / nf) : 1.0;
    VectorXd ws = wc;
    for (int j = 0; j < wc.size(); ++j)
      if (ch.w_is_fiber[j]) ws[j] *= lam;
    double dist = (ws - w).norm();
    if (dist < best) {
      best = dist;
      pick = c;
      for (int s : ph.theta_slots) pick[s] *= lam;
    }
  }
  VectorXd Z = big_.to_big(pick);
  for (int j = 0; j < (int)big_.w_slots().size(); ++j) Z[big_.w_slots()[j]] = w[j];
  return Z;
}

StationaryPointData AmplitudeEngine::find_stationary_point(const VectorXd& w, const VectorXd& v) const {
  VectorXd Z = seed_for(w);
  for (size_t j = 0; j < big_.v_slots().size(); ++j) Z[big_.v_slots()[j]] = v[j];
  auto d = solve(Z, 1e-11);
  if (!valid(d, w)) throw StationaryFailure("stationary point is not on the fiber over w");
  return d;
}

StationaryPointData AmplitudeEngine::find_stationary_point(const VectorXd& w) const {
  auto d = solve(seed_for(w), 1e-11);
  if (!valid(d, w)) throw StationaryFailure("stationary point is not on the fiber over w");
  return d;
}

double AmplitudeEngine::generating_function_value(const VectorXd& w) const {
  auto d = find_stationary_point(w);
  if (big_.chart().S && std::fabs(d.critical_value) > 1e-8)
    throw std::runtime_error("generating function mismatch: critical value " + shortest(d.psi0) +
                             ", supplied S " + shortest(d.psi0 - d.critical_value));
  return d.psi0;
}

// ---------------------------------------------------------------- fiber

AmplitudeEngine::Fiber AmplitudeEngine::fiber_trace(const VectorXd& w, const AmplitudeOptions& opt) const {
  Fiber F;
  int e = big_.splitting().e;
  const auto& vs = big_.v_slots();
  auto d0 = find_stationary_point(w);
  if (e == 0) {
    F.nodes.push_back({VectorXd(0), 1.0, d0});
    F.center = VectorXd(0);
    return F;
  }
  if (e > 2) throw std::runtime_error("fiber integration supports excess up to 2, got " + std::to_string(e));
  double s = std::max(1.0, w.norm());
  double h = opt.step * s, cap = opt.cap * s;

  auto at = [&](const VectorXd& from, const VectorXd& v, StationaryPointData& out) {
    VectorXd Z = from;
    for (int j = 0; j < e; ++j) Z[vs[j]] = v[j];
    try {
      out = solve(Z, opt.newton_tol);
    } catch (const StationaryFailure&) {
      return false;
    }
    return valid(out, w);
  };
  // distance to the fiber boundary from center c along dir
  auto ray = [&](const StationaryPointData& c, const VectorXd& vc, const VectorXd& dir) {
    StationaryPointData cur = c, nxt;
    double r = 0;
    for (;;) {
      double rn = r + h;
      if (rn > cap)
        throw UnboundedFiber("unbounded fiber: continuation passed radius " + shortest(cap) +
                                 " without leaving the critical set (condition 2 violated upstream?)",
                             rn);
      if (at(cur.big, vc + rn * dir, nxt)) {
        cur = nxt;
        r = rn;
        continue;
      }
      double lo = r, hi = rn;
      for (int it = 0; it < 48; ++it) {
        double mid = 0.5 * (lo + hi);
        if (at(cur.big, vc + mid * dir, nxt)) {
          cur = nxt;
          lo = mid;
        } else {
          hi = mid;
        }
      }
      return lo;
    }
  };
  auto vpart = [&](const VectorXd& Z) {
    VectorXd v(e);
    for (int j = 0; j < e; ++j) v[j] = Z[vs[j]];
    return v;
  };

  VectorXd gx, gw;
  StationaryPointData center = d0;
  VectorXd vc = vpart(d0.big);
  if (e == 1) {
    VectorXd plus = VectorXd::Ones(1), minus = -VectorXd::Ones(1);
    double rp = ray(center, vc, plus), rm = ray(center, vc, minus);
    VectorXd mid = vc + VectorXd::Constant(1, 0.5 * (rp - rm));
    StationaryPointData c2;
    if (at(center.big, mid, c2)) {
      center = c2;
      vc = mid;
      rp = ray(center, vc, plus);
      rm = ray(center, vc, minus);
    }
    F.center = vc;
    F.diameter = rp + rm;
    F.boundary = {vc + rp * plus, vc - rm * plus};
    gauss_legendre(opt.radial_nodes, gx, gw);
    for (double sgn : {1.0, -1.0}) {
      double R = sgn > 0 ? rp : rm;
      StationaryPointData cur = center;
      for (int i = 0; i < gx.size(); ++i) {
        double r = 0.5 * R * (gx[i] + 1);
        StationaryPointData nd;
        VectorXd v = vc + VectorXd::Constant(1, sgn * r);
        if (!at(cur.big, v, nd)) throw std::runtime_error("fiber quadrature node left the critical set");
        cur = nd;
        F.nodes.push_back({v, 0.5 * R * gw[i], nd});
      }
    }
    return F;
  }

  int na = opt.angular_nodes;
  auto boundary_pass = [&](const StationaryPointData& c, const VectorXd& v0, std::vector<double>& radii) {
    radii.resize(na);
    for (int j = 0; j < na; ++j) {
      double a = 2 * M_PI * j / na;
      VectorXd dir(2);
      dir << std::cos(a), std::sin(a);
      radii[j] = ray(c, v0, dir);
    }
  };
  std::vector<double> radii;
  boundary_pass(center, vc, radii);
  VectorXd mean = VectorXd::Zero(2);
  for (int j = 0; j < na; ++j) {
    double a = 2 * M_PI * j / na;
    mean += vc + radii[j] * Eigen::Vector2d(std::cos(a), std::sin(a));
  }
  mean /= na;
  StationaryPointData c2;
  if ((mean - vc).norm() > 1e-9 * s && at(center.big, mean, c2)) {
    center = c2;
    vc = mean;
    boundary_pass(center, vc, radii);
  }
  F.center = vc;
  for (int j = 0; j < na; ++j) {
    double a = 2 * M_PI * j / na;
    F.boundary.push_back(vc + radii[j] * Eigen::Vector2d(std::cos(a), std::sin(a)));
  }
  for (auto& p : F.boundary)
    for (auto& q : F.boundary) F.diameter = std::max(F.diameter, (p - q).norm());
  gauss_legendre(opt.radial_nodes, gx, gw);
  for (int j = 0; j < na; ++j) {
    double a = 2 * M_PI * j / na;
    Eigen::Vector2d dir(std::cos(a), std::sin(a));
    double R = radii[j];
    StationaryPointData cur = center;
    for (int i = 0; i < gx.size(); ++i) {
      double r = 0.5 * R * (gx[i] + 1);
      VectorXd v = vc + r * dir;
      StationaryPointData nd;
      if (!at(cur.big, v, nd)) throw std::runtime_error("fiber quadrature node left the critical set");
      cur = nd;
      F.nodes.push_back({v, (2 * M_PI / na) * 0.5 * R * gw[i] * r, nd});
    }
  }
  return F;
}

LeadingAmplitude AmplitudeEngine::leading_amplitude(const VectorXd& w, PrefactorMode mode,
                                                    const AmplitudeOptions& opt) const {
  LeadingAmplitude A;
  A.mode = mode;
  auto F = fiber_trace(w, opt);
  int e = big_.splitting().e;
  const auto& ph = big_.phi_xx();
  cplx sum = 0;
  A.min_abs_det = std::numeric_limits<double>::infinity();
  bool first = true;
  for (auto& nd : F.nodes) {
    const auto& d = nd.sp;
    if (d.degenerate || std::fabs(d.det) < 1e-8)
      throw DegenerateHessian("degenerate hessian on the fiber (det " + shortest(d.det) + ")");
    if (first) A.signature = d.signature;
    else if (d.signature != A.signature) throw DegenerateHessian("hessian signature changes along the fiber");
    first = false;
    A.min_abs_det = std::min(A.min_abs_det, std::fabs(d.det));
    A.max_critical_value = std::max(A.max_critical_value, std::fabs(d.critical_value));
    sum += nd.weight * std::pow(std::fabs(d.det), -0.5) * amp(d.big);
  }
  sum *= std::polar(1.0, M_PI / 4 * A.signature);
  A.b0 = prefactor(mode, dim_m_, ph.n_theta, e) * sum;
  A.nodes = (int)F.nodes.size();
  A.fiber_diameter = F.diameter;
  // center data
  StationaryPointData c;
  if (e == 0) c = F.nodes[0].sp;
  else c = find_stationary_point(w, F.center);
  A.det_center = c.det;
  A.S = c.psi0;
  return A;
}

}  // namespace ftr
