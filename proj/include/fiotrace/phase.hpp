#pragma once
// phase functions, critical sets, the parametrization gamma_phi

#include <optional>

#include "fiotrace/geom.hpp"

namespace ftr {

struct PhaseFunction {
  Expression phi;
  LayoutP layout;
  int n_theta = 0;
  std::vector<int> base_slots;    // unprimed base coordinates, chart order
  std::vector<int> primed_slots;  // primed base coordinates
  std::vector<int> theta_slots;
  std::vector<Expression> cone;   // strict inequalities g > 0 defining the open cone
  bool homogeneity_checked = false;
  double euler_residual = 0;
  double gradient_margin = 0;

  int base_dim() const { return (int)base_slots.size(); }
  bool in_cone(const VectorXd& u) const;
};

// base_blocks / primed_blocks name the blocks of each factor in order, theta block is "th"
PhaseFunction make_phase(const Expression& phi, const std::vector<std::string>& base_blocks,
                         const std::vector<std::string>& primed_blocks, const std::vector<Expression>& cone = {});

struct PhaseValidation {
  bool pass = false;
  double euler_residual = 0;
  double gradient_margin = 0;  // min |d_{x,x',theta} phi| on unit-theta samples
  int samples = 0;
};
PhaseValidation validate_phase(PhaseFunction& ph, std::mt19937_64& rng, int samples = 100);

// d_theta phi and the gamma map as expression fields
ExprField theta_gradient(const PhaseFunction& ph);
ExprField gamma_field(const PhaseFunction& ph);

struct SeedSpec {
  double base_lo = -1, base_hi = 1;
  int theta_points = 24;
  int base_per_theta = 3;
  double tol_newton = 1e-12;
};

struct CriticalManifold {
  std::vector<VectorXd> points;
  std::vector<MatrixXd> tangent;       // ker of the jacobian of d_theta phi
  std::vector<MatrixXd> fiber_frames;  // ker(d gamma) inside the tangent
  int dim = -1;
  int rank = -1;
  int excess = -1;
  double rank_gap = 0;
  bool rank_constant = true;
  bool dim_constant = true;
  int cone_exits = 0;
  std::pair<int, int> rank_witness{-1, -1};
  bool empty() const { return points.empty(); }
};

struct NotCleanPhase : std::runtime_error {
  std::pair<int, int> witness;
  NotCleanPhase(const std::string& m, std::pair<int, int> w) : std::runtime_error(m), witness(w) {}
};
struct InconsistentExcess : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ZeroSectionHit : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<VectorXd> sphere_points(int dim, int count, std::mt19937_64& rng);

CriticalManifold solve_critical_set(const PhaseFunction& ph, const SeedSpec& seeds, std::mt19937_64& rng,
                                    const std::vector<VectorXd>& extra_seeds = {});
// recompute rank / dimension / frames for a given point list
CriticalManifold analyze_critical_points(const PhaseFunction& ph, std::vector<VectorXd> pts);

struct ExcessCertificate {
  int e = -1;
  int from_rank = -1;
  int from_dim = -1;
};
ExcessCertificate excess_of(const PhaseFunction& ph, const CriticalManifold& crit);

VectorXd parametrize(const PhaseFunction& ph, const VectorXd& crit_point);

struct LagrangianSampleSet {
  std::vector<VectorXd> points;
  std::vector<MatrixXd> frames;  // orthonormal tangent frames in the T* chart
  int dim = -1;
  int fiber_dim = -1;
  double isotropy = 0;
  double min_covector_norm = 0;
};
LagrangianSampleSet lagrangian_samples(const PhaseFunction& ph, const CriticalManifold& crit);

}  // namespace ftr
