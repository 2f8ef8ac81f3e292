#pragma once
// restriction to X = {y = 0}, the trace Lagrangian and the two hypotheses

#include "fiotrace/phase.hpp"

namespace ftr {

struct EmbeddingChart {
  int dim_m = 2;
  int dim_x = 1;
  int nu() const { return dim_m - dim_x; }
  void validate() const;
};

// a conic Lagrangian in T*(M x M) given as the gamma-image of a constraint manifold.
// phase sources live in parameter space (x, y, x', y', theta); graph sources live in T*(M x M) itself.
struct LagrangianSource {
  std::string kind;  // "phase" or "graph"
  ConstraintSubmanifold lambda;
  ExprField gamma;
  std::vector<int> y_slots;  // y and y' inside the ambient layout
  int n = 0;                 // dim M
  int k = 0;                 // dim X
};

// phase layout blocks must be x, y, xp, yp, th
LagrangianSource source_from_phase(const PhaseFunction& ph, const CriticalManifold& crit, const EmbeddingChart& ch);

struct RestrictedPhase {
  PhaseFunction phi_xx;
  const PhaseFunction* parent = nullptr;
};

// substitution y = y' = 0 on the expression trees. amplitudes over the parent layout are restricted too.
RestrictedPhase restrict_phase(const PhaseFunction& ph, const EmbeddingChart& ch);
Expression restrict_expression(const Expression& e, const LayoutP& restricted_layout);
std::pair<RestrictedPhase, Expression> restrict_phase_and_amplitude(const PhaseFunction& ph, const Expression& amp,
                                                                   const EmbeddingChart& ch);
// parent point (y = y' = 0) of a point of the restricted layout
VectorXd embed_restricted(const PhaseFunction& parent, const PhaseFunction& phi_xx, const VectorXd& c);

struct LambdaXX {
  std::vector<VectorXd> params;  // ambient points of lambda cap {y = y' = 0}
  std::vector<VectorXd> points;  // gamma images
  bool empty = false;
  bool inconclusive = false;
  double best_residual = 0;
};

ConstraintSubmanifold xx_constraint(const LagrangianSource& src);
LambdaXX lambda_xx_samples(const LagrangianSource& src, int count, std::mt19937_64& rng,
                           const std::vector<VectorXd>& seeds = {}, SampleBox box = {-1, 1, 1, 1});

struct Condition1 {
  CleanReport clean;
  int dim_lambda_xx = -1;
  bool empty = false;
  bool inconclusive = false;
  bool pass() const { return empty || clean.clean(); }
};
Condition1 check_condition_clean(const LagrangianSource& src, const LambdaXX& lxx);

struct Condition2 {
  double g_min = 1;
  double delta = 1e-3;
  bool vacuous = false;
  VectorXd witness;        // T*(M x M) point attaining g_min
  VectorXd witness_param;  // ambient point
  bool pass() const { return vacuous || g_min >= delta; }
};
// |(p,p')| / |(p,q,p',q')| at a T*(M x M) chart point
double conormal_ratio(const VectorXd& g, int n, int k);
Condition2 check_condition_conormal(const LagrangianSource& src, const LambdaXX& lxx, double delta = 1e-3);

struct TracedLagrangian {
  std::vector<VectorXd> points;  // (x, p, x', p')
  std::vector<MatrixXd> frames;
  int dim = -1;
  bool immersive = true;
  double isotropy = 0;
  double min_covector_norm = 0;
  double min_one_sided = 0;  // smallest single covector norm, zero is admitted
};
TracedLagrangian trace_lagrangian(const LagrangianSource& src, const LambdaXX& lxx);

double trace_order(double order_phi, const EmbeddingChart& ch, int dim_lambda_xx);

struct SobolevWindow {
  double lo = 0, hi = 0;
  bool empty = true;
};
SobolevWindow check_sobolev_window(double order_phi, const EmbeddingChart& ch);

struct ParamCleanReport {
  bool pass = true;
  int tangent_gap = 0;
  int tangent_dim = -1;
  double max_residual = 0;  // |d_theta phi| at embedded points
  int witness = -1;
  int samples = 0;
};
ParamCleanReport verify_parameter_space_cleanness(const PhaseFunction& ph, const RestrictedPhase& r,
                                                  const CriticalManifold& crit_xx);
// max |gamma_xx(c) - pi_XX(gamma_phi(c, y = y' = 0))| over the samples
double diagram_residual(const PhaseFunction& ph, const RestrictedPhase& r, const CriticalManifold& crit_xx);

struct TraceReport {
  std::string scenario;
  std::string source_kind;
  unsigned long long seed = 0;
  Condition1 condition1;
  Condition2 condition2;
  int excess_e = -1;
  int dim_lambda_xx = -1;
  double order_phi = 0;
  double traced_order = 0;
  SobolevWindow sobolev;
  bool have_param_clean = false;
  ParamCleanReport param_clean;
  std::vector<std::string> notes;
  bool pass() const { return condition1.pass() && condition2.pass(); }
  bool smoothing() const { return condition1.empty; }
  std::string to_text() const;
  // rows: name,verdict,margin,witness
  std::string to_csv() const;
};

}  // namespace ftr
