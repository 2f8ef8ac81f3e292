#pragma once
// homogeneous canonical transformations, their graphs, and the corollary-level trace conditions

#include "fiotrace/trace.hpp"

namespace ftr {

// T*M chart with blocks x(k), y(nu), p(k), q(nu)
LayoutP cotangent_layout(const EmbeddingChart& ch);

struct CanonicalMap {
  EmbeddingChart chart;
  LayoutP layout;                    // cotangent_layout(chart)
  std::vector<Expression> forward;   // 2n components: base then covector
  std::vector<Expression> inverse;
  double symplectic_residual = -1;   // filled by validate_canonical
  double fiber_homogeneity_residual = -1;
  int n() const { return chart.dim_m; }
};

CanonicalMap make_canonical_map(const EmbeddingChart& ch, const std::vector<std::string>& forward,
                                const std::vector<std::string>& inverse, const Params& params = {});

struct NotInvertible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// g(m, xi) = (psi(m), dpsi(m)^{-T} xi), the inverse-transpose through the adjugate (dim M <= 3).
// psi and psi_inverse are texts over the base blocks x, y.
CanonicalMap lift_point_transformation(const EmbeddingChart& ch, const std::vector<std::string>& psi,
                                       const std::vector<std::string>& psi_inverse, const Params& params = {},
                                       std::mt19937_64* rng = nullptr);

struct CanonicalReport {
  bool pass = false;
  double symplectic_residual = 0;   // max |(dg^T Omega dg - Omega)_ij|
  double homogeneity_residual = 0;
  double inverse_residual = 0;
  bool zero_section_ok = true;
  VectorXd worst_sample;
  std::pair<int, int> worst_pair{-1, -1};  // coordinate frame pair with the largest pullback defect
  int samples = 0;
};
CanonicalReport validate_canonical(CanonicalMap& g, std::mt19937_64& rng, int samples = 100, double tol = 1e-8);

struct InconsistentSignConvention : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GraphLagrangian {
  LagrangianSource source;  // kind "graph": {z - g(z') = 0} in T*(M x M), gamma = identity
  double isotropy = 0;
  int dim = 0;
};
GraphLagrangian graph_lagrangian(const CanonicalMap& g, std::mt19937_64& rng, int samples = 40);
// a graph point (g(z'), z') for z' in T*M
VectorXd graph_point(const CanonicalMap& g, const VectorXd& zp);

struct GraphLemmaViolation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorollaryReport {
  // corollary level, inside T*M
  CleanReport cond1;
  bool cond1_empty = false;
  int cond1_dim = -1;
  double cond2_margin = 1;  // min |(p, p')| / |(p, q, p', q')| over T*M|_X cap g^{-1}(T*M|_X)
  double delta = 1e-3;
  VectorXd cond2_witness;   // w' attaining the margin
  // theorem level on the graph
  Condition1 theorem1;
  Condition2 theorem2;
  bool cond1_pass() const { return cond1_empty || cond1.clean(); }
  bool cond2_pass() const { return cond1_empty || cond2_margin >= delta; }
  bool agree() const {
    return cond1_pass() == theorem1.pass() && cond2_pass() == theorem2.pass();
  }
  bool pass() const { return cond1_pass() && cond2_pass(); }
};
CorollaryReport check_corollary_conditions(const CanonicalMap& g, std::mt19937_64& rng, int samples = 40,
                                           double delta = 1e-3, bool throw_on_disagreement = true);

struct OrderBound {
  bool pass = false;
  double order = 0, bound = 0;  // pass iff order < bound = -codim X
};
OrderBound check_order_bound(double order_phi, const EmbeddingChart& ch);

}  // namespace ftr
