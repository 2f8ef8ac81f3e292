#pragma once
// scalar expressions over named variable blocks

#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftr {

struct Block {
  std::string name;
  int dim = 0;
};

class BlockLayout {
 public:
  BlockLayout() = default;
  explicit BlockLayout(std::vector<Block> blocks);

  int total_dim() const { return total_; }
  const std::vector<Block>& blocks() const { return blocks_; }
  bool has(const std::string& name) const;
  int offset(const std::string& name) const;
  int dim(const std::string& name) const;
  // 1-based index inside the block -> 0-based slot
  int slot(const std::string& name, int idx1) const;
  // slot -> (block position, 1-based index)
  std::pair<int, int> locate(int slot) const;
  std::string slot_name(int slot) const;
  bool operator==(const BlockLayout& o) const;

 private:
  std::vector<Block> blocks_;
  int total_ = 0;
};

using LayoutP = std::shared_ptr<const BlockLayout>;
LayoutP make_layout(std::vector<Block> blocks);

enum class Op { Num, Pi, Param, Var, Neg, Add, Sub, Mul, Div, Pow, Sin, Cos, Exp, Sqrt, Abs, Sgn, Norm };

struct Node;
using NodeP = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::Num;
  double num = 0.0;
  std::string name;   // parameter name
  int slot = -1;      // Var slot, Norm first slot
  int slot_hi = -1;   // Norm last slot (inclusive)
  NodeP a, b;
};

struct ParseError : std::runtime_error {
  int position;                        // 1-based
  std::vector<std::string> expected;
  ParseError(const std::string& msg, int pos, std::vector<std::string> exp);
};

struct SingularError : std::runtime_error {
  std::string subexpr;
  SingularError(const std::string& msg, std::string sub);
};

// node builders, with light simplification
namespace ex {
NodeP num(double v);
NodeP pi();
NodeP param(const std::string& n);
NodeP var(int slot);
NodeP norm(int lo, int hi);
NodeP neg(NodeP a);
NodeP add(NodeP a, NodeP b);
NodeP sub(NodeP a, NodeP b);
NodeP mul(NodeP a, NodeP b);
NodeP div(NodeP a, NodeP b);
NodeP pow(NodeP a, NodeP b);
NodeP fn(Op f, NodeP a);
bool is_num(const NodeP& n, double v);
bool has_var(const NodeP& n);
}  // namespace ex

using Params = std::map<std::string, double>;

// shortest round-trip decimal text
std::string shortest(double v);

class Expression {
 public:
  Expression() = default;
  Expression(NodeP root, LayoutP layout, Params params = {});

  const NodeP& root() const { return root_; }
  const LayoutP& layout() const { return layout_; }
  const Params& params() const { return params_; }
  Expression with_params(const Params& p) const;  // merge/override
  Expression with_root(NodeP r) const { return Expression(std::move(r), layout_, params_); }

  // checked evaluation; throws SingularError on declared singular loci
  double eval(std::span<const double> pt) const;
  double eval(std::span<const double> pt, const Params& extra) const;
  // smallest distance to a singular locus: |arg| of abs/sgn/norm, denominators,
  // sqrt arguments (signed). <= 0 means the point is on/behind a singular locus.
  double singular_margin(std::span<const double> pt) const;
  bool is_zero() const { return ex::is_num(root_, 0.0); }
  bool depends_on(int slot) const;

  std::string str() const;

 private:
  NodeP root_;
  LayoutP layout_;
  Params params_;
};

Expression parse_expression(const std::string& text, const LayoutP& layout, const Params& params = {});
Expression differentiate(const Expression& e, int slot);
std::vector<Expression> gradient(const Expression& e, const std::vector<int>& slots);
bool structurally_equal(const NodeP& a, const NodeP& b);
std::string to_string(const NodeP& n, const BlockLayout& layout);

// rewrite every variable slot through `map` (old slot -> replacement node over new layout)
// norm() nodes over ranges that do not map to a contiguous slot range are expanded to sqrt(sum of squares)
NodeP rebind(const NodeP& n, const std::vector<NodeP>& map);
Expression rebind(const Expression& e, LayoutP new_layout, const std::vector<NodeP>& map);

struct HomogeneityReport {
  bool pass = true;
  double worst_residual = 0.0;  // Euler residual / (1+|f|)
  double worst_scaling = 0.0;   // |f(l th) - l^d f(th)| / (1+|l^d f|)
  int worst_index = -1;
  int samples = 0;
};

HomogeneityReport check_homogeneity(const Expression& e, const std::string& block, double degree,
                                    const std::vector<std::vector<double>>& samples, double tol);

// flat instruction tape for fast repeated evaluation (no singularity checks)
class Tape {
 public:
  Tape() = default;
  explicit Tape(const Expression& e);
  double eval(const double* pt) const;
  // columns: cols[slot][i], i < n. out[i]. work is scratch.
  void eval_batch(const double* const* cols, int n, double* out, std::vector<double>& work) const;
  int size() const { return (int)code_.size(); }

 private:
  struct Ins {
    Op op;
    int dst, a, b;
    double c;
    int lo, hi;
  };
  std::vector<Ins> code_;
  int nreg_ = 0;
  int out_ = 0;
};

}  // namespace ftr
