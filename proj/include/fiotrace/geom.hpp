#pragma once
// linear algebra and symplectic primitives

#include <Eigen/Dense>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fiotrace/expr.hpp"

namespace ftr {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct RankInfo {
  int rank = 0;
  double gap = 0;        // sigma_r / sigma_{r+1}, inf when nothing was dropped
  bool marginal = false; // gap < 1e3
  std::vector<double> sv;
};

RankInfo rank_info(const MatrixXd& m, double tol_rel = 1e-8);
int numeric_rank(const MatrixXd& m, double tol_rel = 1e-8);
// orthonormal basis of ker(m), given the numeric rank
MatrixXd null_space(const MatrixXd& m, double tol_rel = 1e-8);
// orthonormal basis of the column span
MatrixXd orth(const MatrixXd& cols, double tol_rel = 1e-8);

// vector-valued expression with symbolic jacobian, compiled for repeated evaluation
class ExprField {
 public:
  ExprField() = default;
  ExprField(std::vector<Expression> f, LayoutP layout);
  int size() const { return (int)f_.size(); }
  int dim() const { return layout_ ? layout_->total_dim() : 0; }
  const LayoutP& layout() const { return layout_; }
  const std::vector<Expression>& exprs() const { return f_; }
  const Expression& jac_expr(int i, int j) const { return J_[i][j]; }
  VectorXd eval(const VectorXd& x) const;
  MatrixXd jac(const VectorXd& x) const;
  double margin(const VectorXd& x) const;  // singular-locus margin over f and J
  ExprField stacked(const ExprField& o) const;

 private:
  std::vector<Expression> f_;
  std::vector<std::vector<Expression>> J_;
  std::vector<Tape> ft_;
  std::vector<std::vector<Tape>> Jt_;
  std::vector<std::vector<char>> Jzero_;
  LayoutP layout_;
};

struct GNOptions {
  double tol = 1e-12;  // on |F|
  int max_iter = 100;
  double max_step = 0.5;  // relative step cap, times (1+|x|)
  int polish = 0;         // extra iterations after convergence, pushes degenerate roots closer
};

struct GNResult {
  VectorXd x;
  bool converged = false;
  bool stagnated = false;  // least-squares minimum with nonzero residual
  double residual = 0;
  int iterations = 0;
};

// minimum-norm Gauss-Newton on F(x) = 0
GNResult gauss_newton(const ExprField& F, VectorXd x0, const GNOptions& opt = {});

struct ConstraintSubmanifold {
  LayoutP layout;
  ExprField constraints;
  int expected_dim = 0;
  std::vector<int> conic_slots;          // fiber variables (empty: not conic)
  std::vector<Expression> domain;        // strict inequalities g > 0
  double tol_residual = 1e-9;

  int ambient_dim() const { return layout->total_dim(); }
  bool in_domain(const VectorXd& x, double margin = 0.0) const;
};

ConstraintSubmanifold make_submanifold(LayoutP layout, const std::vector<Expression>& cons, int expected_dim,
                                       std::vector<int> conic_slots = {}, std::vector<Expression> domain = {});

struct NotRegularPoint : std::runtime_error {
  int rank_found;
  NotRegularPoint(const std::string& m, int r) : std::runtime_error(m), rank_found(r) {}
};

MatrixXd tangent_basis(const ConstraintSubmanifold& sub, const VectorXd& point);

// local dimension of {F = 0} at c: push c along the columns of V, project back, count surviving directions
struct LocalDim {
  int dim = 0;
  std::vector<double> sv;  // singular values of the projected displacement (in V coordinates)
  double ambiguity = 0;    // max distance of any sv to {0,1}
};
LocalDim projected_dimension(const ExprField& F, const VectorXd& c, const MatrixXd& V, double h = 1e-4);

struct CleanReport {
  bool empty = false;
  bool is_manifold = true;
  int intersection_dim = -1;
  bool rank_constant = true;
  bool tangent_equality = true;
  int tangent_gap = 0;  // max over samples of dim(T_A cap T_B) - dim T(A cap B)
  int excess_over_transversal = 0;
  int samples_used = 0;
  double worst_gap = 0;  // smallest singular-value gap met in a rank decision
  bool marginal = false;
  int witness = -1;      // sample index where tangent equality failed
  bool clean() const { return !empty && is_manifold && rank_constant && tangent_equality; }
};

CleanReport clean_intersection_check(const ConstraintSubmanifold& A, const ConstraintSubmanifold& B,
                                     const std::vector<VectorXd>& samples, double tol = 1e-8);

// symplectic space descriptor: T*(M) (factors 1) or T*(M x M) (factors 2), n = dim of one base factor
struct SymplecticSpace {
  int n = 1;
  int factors = 2;
  int dim() const { return 2 * n * factors; }
};
double symplectic_form_value(const SymplecticSpace& sp, const VectorXd& u, const VectorXd& v);
double max_isotropy(const SymplecticSpace& sp, const MatrixXd& frames);

struct SamplerStarvation : std::runtime_error {
  double acceptance;
  SamplerStarvation(const std::string& m, double a) : std::runtime_error(m), acceptance(a) {}
};

struct SampleBox {
  double base_lo = -1, base_hi = 1;
  double r_min = 1, r_max = 1;
};

std::vector<VectorXd> sample_cone(const ConstraintSubmanifold& sub, int count, const SampleBox& box,
                                  std::mt19937_64& rng, int budget_factor = 50);

// points on A cap B by Gauss-Newton on the stacked constraints from random seeds
struct IntersectionSamples {
  std::vector<VectorXd> points;
  bool empty = false;         // every seed stagnated at a nonzero residual
  bool inconclusive = false;  // neither converged nor stagnated
  double best_residual = 0;
};
IntersectionSamples sample_intersection(const ConstraintSubmanifold& A, const ConstraintSubmanifold& B, int count,
                                        const SampleBox& box, std::mt19937_64& rng,
                                        const std::vector<VectorXd>& seeds = {});

// Gauss-Legendre rule on [-1, 1] (Golub-Welsch)
void gauss_legendre(int n, VectorXd& nodes, VectorXd& weights);

double uniform01(std::mt19937_64& rng);
double normal01(std::mt19937_64& rng);

}  // namespace ftr
