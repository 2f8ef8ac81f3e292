#pragma once
// mollified oscillatory quadrature: the brute-force oracle

#include "fiotrace/statphase.hpp"

namespace ftr {

struct MollifiedIntegralSpec {
  std::vector<double> epsilons{0.4, 0.2, 0.1, 0.05};  // strictly decreasing; {0} means plain quadrature
  int order = 3;               // polynomial extrapolation order in epsilon
  bool halving_check = true;   // also evaluate at eps_min / 2
  int nodes = 0;               // per dimension, 0: ceil16(kappa R^2)
  double kappa = 0.27;
  double radius = 0;           // ball radius in s, 0: 6 / sqrt(smallest eps)
  bool hessian_normalize = true;
  void validate() const;
};

struct OracleResult {
  cplx value;
  double error_estimate = 0;
  std::vector<std::pair<double, cplx>> epsilon_trace;
  bool halving_ok = true;
  double halving_change = 0;
  bool inconclusive = false;
  long long evaluations = 0;
  long long nonfinite = 0;  // skipped integrand values
  int nodes = 0;
  double radius = 0;
  double jacobian = 1;
};

// Neville extrapolation to eps = 0 through the last order+1 points; err = |T_order - T_{order-1}|
std::pair<cplx, double> extrapolate(const std::vector<double>& eps, const std::vector<cplx>& vals, int order);

// int e^{i phase} (a_re + i a_im) e^{-eps |s|^2} du over the integration slots, u = center + A s.
// A = V |Lambda|^{-1/2} from the finite-difference hessian of the phase at center (or identity).
// `fixed` supplies every non-integration coordinate (and the center of the integration coordinates).
OracleResult oscillatory_integral(const Expression& phase, const Expression& a_re, const Expression& a_im,
                                  const std::vector<int>& slots, const VectorXd& fixed,
                                  const MollifiedIntegralSpec& spec);

// (2pi)^{-(dim M + N)/2} int e^{i phi_XX(x, x', theta)} a_XX dtheta
OracleResult trace_kernel_value(const PhaseFunction& phi_xx, const Expression& a_re, const Expression& a_im,
                                int dim_m, const VectorXd& x, const VectorXd& xp, const MollifiedIntegralSpec& spec);

struct OracleTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// (2pi)^{-(dim M + N)/2 - (|Ibar| + |I'bar|)/2} int e^{i(psi0 - S(w))} a_XX over (x_Ibar, x'_I'bar, theta).
// engine must use the identity splitting; the integration is centered at its stationary point.
OracleResult amplitude_oracle(const AmplitudeEngine& engine, const VectorXd& w, const MollifiedIntegralSpec& spec,
                              int max_dim = 4);

struct WavepacketResult {
  double input_center = 0, predicted_center = 0, output_center = 0;
  double input_mass = 0, output_mass = 0;
  std::vector<double> xs, density;
};
// u(x) = int K(x, x') v(x') dx', v = exp(i p0 x') exp(-(x'-x0)^2 / (2 sigma^2)), on a grid of x
WavepacketResult wavepacket_operator_check(const PhaseFunction& phi_xx, const Expression& a_re,
                                           const Expression& a_im, int dim_m, double x0, double p0, double sigma,
                                           double predicted_center, const std::vector<double>& xs,
                                           const MollifiedIntegralSpec& spec);

}  // namespace ftr
