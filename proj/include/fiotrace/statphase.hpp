#pragma once
// canonical charts, elimination of excess, stationary points and the leading amplitude

#include <complex>
#include <optional>

#include "fiotrace/trace.hpp"

namespace ftr {

using cplx = std::complex<double>;

// w = (x_I, p_Ibar; x'_I', p'_I'bar), index sets are 1-based
struct CanonicalChart {
  int k = 1;
  std::vector<int> I, Ip, Ibar, Ipbar;
  LayoutP w_layout;               // single block "w" of size 2k
  std::optional<Expression> S;    // user generating function over w_layout
  std::vector<int> w_from_z;      // position in (x, p, x', p') for each w slot
  std::vector<char> w_is_fiber;   // p-type coordinates
  int w_dim() const { return 2 * k; }
};

CanonicalChart make_chart(int k, std::vector<int> I, std::vector<int> Ip, std::optional<std::string> S_text = {},
                          const Params& params = {});
VectorXd chart_coords(const CanonicalChart& ch, const VectorXd& z);

struct NotAChart : std::runtime_error {
  int rank_found;
  NotAChart(const std::string& m, int r) : std::runtime_error(m), rank_found(r) {}
};

struct ChartFit {
  int rank = 0;
  double canonical_residual = 0;  // user S only
  double euler_residual = 0;
  bool have_S = false;
};
ChartFit fit_canonical_chart(const CanonicalChart& ch, const TracedLagrangian& tl);

struct ThetaSplitting {
  MatrixXd Q;  // N x N orthogonal, last e columns span the fiber directions
  int e = 0;
  VectorXd base_point;
  double min_theta_prime = 1;  // min |theta'| / |theta| over the critical samples
  int n_theta() const { return (int)Q.rows(); }
};
ThetaSplitting identity_splitting(int N);
// strict: throw when theta' vanishes on some sample (otherwise only recorded)
ThetaSplitting compute_theta_splitting(const PhaseFunction& phi_xx, const CriticalManifold& crit_xx, int base_index = 0,
                                       bool strict = true);

struct DegenerateHessian : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnboundedFiber : std::runtime_error {
  double radius;
  UnboundedFiber(const std::string& m, double r) : std::runtime_error(m), radius(r) {}
};
struct StationaryFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct StationaryPointData {
  VectorXd big;      // full point in the big layout
  VectorXd point;    // (x, x', theta) in the restricted layout
  MatrixXd hessian;  // in (x_Ibar, x'_I'bar, theta')
  double det = 0;
  int signature = 0;
  double psi0 = 0;            // phi_XX - p x + p' x' at the point: the critical-value S
  double critical_value = 0;  // psi0 - S(w) (zero by construction when S is not supplied)
  double gradient_norm = 0;
  bool degenerate = false;  // an eigenvalue inside the guard band
};

int signature_of(const MatrixXd& H, double guard = 1e-8);

// the big phase of the amplitude integral, over blocks w, xi, xpi, u (theta'), v (theta'')
class BigPhase {
 public:
  BigPhase(const PhaseFunction& phi_xx, const CanonicalChart& chart, const ThetaSplitting& sp);
  const LayoutP& layout() const { return layout_; }
  const Expression& psi0() const { return psi0_; }
  const std::vector<int>& unknowns() const { return unknowns_; }
  const std::vector<int>& w_slots() const { return w_slots_; }
  const std::vector<int>& v_slots() const { return v_slots_; }
  const std::vector<int>& theta_like() const { return theta_like_; }  // u then v
  const PhaseFunction& phi_xx() const { return phi_xx_; }
  const CanonicalChart& chart() const { return chart_; }
  const ThetaSplitting& splitting() const { return sp_; }
  // any expression over the restricted layout rewritten over the big layout
  Expression lift(const Expression& e) const;
  VectorXd to_big(const VectorXd& c) const;        // restricted point -> big point
  VectorXd to_restricted(const VectorXd& z) const;  // big point -> restricted point
  const ExprField& gradient() const { return grad_; }

 private:
  PhaseFunction phi_xx_;
  CanonicalChart chart_;
  ThetaSplitting sp_;
  LayoutP layout_;
  std::vector<NodeP> map_;
  std::vector<Tape> map_tapes_;
  Expression psi0_;
  ExprField grad_;
  std::vector<int> unknowns_, w_slots_, v_slots_, theta_like_, xi_slots_, xpi_slots_;
};

struct AmplitudeOptions {
  int radial_nodes = 24;
  int angular_nodes = 32;
  double step = 0.05;   // continuation step, relative to max(1, |w|)
  double cap = 50;      // unbounded-fiber radius, relative to max(1, |w|)
  double newton_tol = 1e-11;
};

enum class PrefactorMode { Derived, Paper };
const char* prefactor_name(PrefactorMode m);
PrefactorMode parse_prefactor(const std::string& s);
double prefactor(PrefactorMode m, int dim_m, int n_theta, int e);

struct LeadingAmplitude {
  cplx b0;
  double det_center = 0;
  int signature = 0;
  double fiber_diameter = 0;
  double min_abs_det = 0;
  double max_critical_value = 0;
  double S = 0;
  int nodes = 0;
  PrefactorMode mode = PrefactorMode::Derived;
};

class AmplitudeEngine {
 public:
  // seeds: critical points of phi_xx (restricted layout), amplitudes over the restricted layout
  AmplitudeEngine(const PhaseFunction& phi_xx, const CanonicalChart& chart, const ThetaSplitting& sp,
                  const Expression& a_re, const Expression& a_im, std::vector<VectorXd> seeds, int dim_m);
  const BigPhase& big() const { return big_; }
  const Expression& amplitude_re() const { return a_re_big_; }  // over the big layout
  const Expression& amplitude_im() const { return a_im_big_; }
  int dim_m() const { return dim_m_; }

  StationaryPointData find_stationary_point(const VectorXd& w, const VectorXd& v) const;
  StationaryPointData find_stationary_point(const VectorXd& w) const;  // v from the nearest seed
  // S(w) as the critical value
  double generating_function_value(const VectorXd& w) const;

  struct FiberNode {
    VectorXd v;
    double weight;
    StationaryPointData sp;
  };
  struct Fiber {
    std::vector<FiberNode> nodes;
    VectorXd center;
    double diameter = 0;
    std::vector<VectorXd> boundary;
  };
  Fiber fiber_trace(const VectorXd& w, const AmplitudeOptions& opt = {}) const;
  LeadingAmplitude leading_amplitude(const VectorXd& w, PrefactorMode mode = PrefactorMode::Derived,
                                     const AmplitudeOptions& opt = {}) const;

 private:
  StationaryPointData solve(const VectorXd& start, double tol) const;
  bool valid(const StationaryPointData& d, const VectorXd& w) const;
  VectorXd seed_for(const VectorXd& w) const;
  cplx amp(const VectorXd& big) const;

  BigPhase big_;
  Tape a_re_, a_im_;
  Expression a_re_big_, a_im_big_;
  std::vector<VectorXd> seeds_;
  int dim_m_;
  ExprField gamma_xx_;
};

}  // namespace ftr
