#include "fiotrace/expr.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <cmath>
#include <limits>
#include <set>

namespace ftr {

// ---------------------------------------------------------------- layout

BlockLayout::BlockLayout(std::vector<Block> blocks) : blocks_(std::move(blocks)) {
  std::set<std::string> seen;
  for (auto& b : blocks_) {
    if (b.dim < 0) throw std::invalid_argument("block '" + b.name + "' has negative dimension");
    if (!seen.insert(b.name).second) throw std::invalid_argument("duplicate block name '" + b.name + "'");
    total_ += b.dim;
  }
}

bool BlockLayout::has(const std::string& name) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.name == name; });
}

int BlockLayout::offset(const std::string& name) const {
  int off = 0;
  for (auto& b : blocks_) {
    if (b.name == name) return off;
    off += b.dim;
  }
  throw std::out_of_range("no block named '" + name + "'");
}

int BlockLayout::dim(const std::string& name) const {
  for (auto& b : blocks_)
    if (b.name == name) return b.dim;
  throw std::out_of_range("no block named '" + name + "'");
}

int BlockLayout::slot(const std::string& name, int idx1) const {
  int d = dim(name);
  if (idx1 < 1 || idx1 > d)
    throw std::out_of_range("index " + std::to_string(idx1) + " out of range for block " + name + " (dim " +
                            std::to_string(d) + ")");
  return offset(name) + idx1 - 1;
}

std::pair<int, int> BlockLayout::locate(int slot) const {
  int off = 0;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    if (slot < off + blocks_[i].dim) return {(int)i, slot - off + 1};
    off += blocks_[i].dim;
  }
  throw std::out_of_range("slot " + std::to_string(slot) + " outside layout");
}

std::string BlockLayout::slot_name(int slot) const {
  auto [bi, k] = locate(slot);
  return blocks_[bi].name + "[" + std::to_string(k) + "]";
}

bool BlockLayout::operator==(const BlockLayout& o) const {
  if (blocks_.size() != o.blocks_.size()) return false;
  for (size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name != o.blocks_[i].name || blocks_[i].dim != o.blocks_[i].dim) return false;
  return true;
}

LayoutP make_layout(std::vector<Block> blocks) { return std::make_shared<const BlockLayout>(std::move(blocks)); }

ParseError::ParseError(const std::string& msg, int pos, std::vector<std::string> exp)
    : std::runtime_error(msg), position(pos), expected(std::move(exp)) {}

SingularError::SingularError(const std::string& msg, std::string sub)
    : std::runtime_error(msg), subexpr(std::move(sub)) {}

// ---------------------------------------------------------------- builders

namespace ex {

static NodeP mk(Op op, NodeP a = nullptr, NodeP b = nullptr) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

NodeP num(double v) {
  auto n = std::make_shared<Node>();
  n->op = Op::Num;
  n->num = v;
  return n;
}
NodeP pi() { return mk(Op::Pi); }
NodeP param(const std::string& nm) {
  auto n = std::make_shared<Node>();
  n->op = Op::Param;
  n->name = nm;
  return n;
}
NodeP var(int slot) {
  auto n = std::make_shared<Node>();
  n->op = Op::Var;
  n->slot = slot;
  return n;
}
NodeP norm(int lo, int hi) {
  auto n = std::make_shared<Node>();
  n->op = Op::Norm;
  n->slot = lo;
  n->slot_hi = hi;
  return n;
}

bool is_num(const NodeP& n, double v) { return n && n->op == Op::Num && n->num == v; }
static bool isn(const NodeP& n) { return n->op == Op::Num; }

bool has_var(const NodeP& n) {
  if (!n) return false;
  if (n->op == Op::Var || n->op == Op::Norm) return true;
  return has_var(n->a) || has_var(n->b);
}

NodeP neg(NodeP a) {
  if (isn(a)) return num(-a->num);
  if (a->op == Op::Neg) return a->a;
  return mk(Op::Neg, std::move(a));
}
NodeP add(NodeP a, NodeP b) {
  if (isn(a) && isn(b)) return num(a->num + b->num);
  if (is_num(a, 0)) return b;
  if (is_num(b, 0)) return a;
  return mk(Op::Add, std::move(a), std::move(b));
}
NodeP sub(NodeP a, NodeP b) {
  if (isn(a) && isn(b)) return num(a->num - b->num);
  if (is_num(b, 0)) return a;
  if (is_num(a, 0)) return neg(std::move(b));
  return mk(Op::Sub, std::move(a), std::move(b));
}
NodeP mul(NodeP a, NodeP b) {
  if (isn(a) && isn(b)) return num(a->num * b->num);
  if (is_num(a, 0) || is_num(b, 0)) return num(0);
  if (is_num(a, 1)) return b;
  if (is_num(b, 1)) return a;
  if (is_num(a, -1)) return neg(std::move(b));
  if (is_num(b, -1)) return neg(std::move(a));
  return mk(Op::Mul, std::move(a), std::move(b));
}
NodeP div(NodeP a, NodeP b) {
  if (isn(a) && isn(b) && b->num != 0) return num(a->num / b->num);
  if (is_num(a, 0) && !is_num(b, 0)) return num(0);
  if (is_num(b, 1)) return a;
  return mk(Op::Div, std::move(a), std::move(b));
}
NodeP pow(NodeP a, NodeP b) {
  if (is_num(b, 1)) return a;
  if (is_num(b, 0)) return num(1);
  if (isn(a) && isn(b)) {
    double r = std::pow(a->num, b->num);
    if (std::isfinite(r)) return num(r);
  }
  return mk(Op::Pow, std::move(a), std::move(b));
}
NodeP fn(Op f, NodeP a) {
  if (isn(a)) {
    double v = a->num;
    switch (f) {
      case Op::Sin: return num(std::sin(v));
      case Op::Cos: return num(std::cos(v));
      case Op::Exp: return num(std::exp(v));
      case Op::Sqrt:
        if (v >= 0) return num(std::sqrt(v));
        break;
      case Op::Abs: return num(std::fabs(v));
      case Op::Sgn:
        if (v != 0) return num(v > 0 ? 1.0 : -1.0);
        break;
      default: break;
    }
  }
  if (f == Op::Sgn && a->op == Op::Sgn) return a;
  return mk(f, std::move(a));
}

}  // namespace ex

// ---------------------------------------------------------------- printing

std::string shortest(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

static std::string fmt_num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, std::fabs(v));
  std::string s(buf, r.ptr);
  if (std::signbit(v)) return "(-" + s + ")";
  return s;
}

static const char* fn_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::Sgn: return "sgn";
    default: return "?";
  }
}

std::string to_string(const NodeP& n, const BlockLayout& L) {
  switch (n->op) {
    case Op::Num: return fmt_num(n->num);
    case Op::Pi: return "pi";
    case Op::Param: return "$" + n->name;
    case Op::Var: return L.slot_name(n->slot);
    case Op::Norm: {
      auto [bi, k0] = L.locate(n->slot);
      auto [bj, k1] = L.locate(n->slot_hi);
      const auto& B = L.blocks()[bi];
      if (bi == bj && k0 == 1 && k1 == B.dim) return "norm(" + B.name + ")";
      return "norm(" + B.name + "[" + std::to_string(k0) + ".." + std::to_string(k1) + "])";
    }
    case Op::Neg: return "(-" + to_string(n->a, L) + ")";
    case Op::Add: return "(" + to_string(n->a, L) + "+" + to_string(n->b, L) + ")";
    case Op::Sub: return "(" + to_string(n->a, L) + "-" + to_string(n->b, L) + ")";
    case Op::Mul: return "(" + to_string(n->a, L) + "*" + to_string(n->b, L) + ")";
    case Op::Div: return "(" + to_string(n->a, L) + "/" + to_string(n->b, L) + ")";
    case Op::Pow: return "(" + to_string(n->a, L) + "^" + to_string(n->b, L) + ")";
    default: return std::string(fn_name(n->op)) + "(" + to_string(n->a, L) + ")";
  }
}

bool structurally_equal(const NodeP& a, const NodeP& b) {
  if (!a || !b) return !a && !b;
  if (a->op != b->op) return false;
  switch (a->op) {
    case Op::Num: return a->num == b->num;
    case Op::Param: return a->name == b->name;
    case Op::Var: return a->slot == b->slot;
    case Op::Norm: return a->slot == b->slot && a->slot_hi == b->slot_hi;
    default: return structurally_equal(a->a, b->a) && structurally_equal(a->b, b->b);
  }
}

// ---------------------------------------------------------------- parser

namespace {

const std::vector<std::string> kPrimary = {"number", "variable", "$parameter", "pi", "function", "(", "-"};

struct Parser {
  const std::string& s;
  const BlockLayout& L;
  size_t i = 0;

  void ws() {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\n' || s[i] == '\r')) ++i;
  }
  int pos() const { return (int)i + 1; }
  bool peek(char c) {
    ws();
    return i < s.size() && s[i] == c;
  }
  [[noreturn]] void fail(const std::vector<std::string>& exp) {
    std::string got = i < s.size() ? std::string("'") + s[i] + "'" : "end of input";
    std::string msg = "syntax error at position " + std::to_string(pos()) + ": unexpected " + got + ", expected one of {";
    for (size_t k = 0; k < exp.size(); ++k) msg += (k ? ", " : "") + exp[k];
    msg += "}";
    throw ParseError(msg, pos(), exp);
  }
  void expect(char c) {
    ws();
    if (i < s.size() && s[i] == c) {
      ++i;
      return;
    }
    fail({std::string(1, c)});
  }

  NodeP expr() {
    NodeP l = term();
    for (;;) {
      ws();
      if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        char c = s[i++];
        NodeP r = term();
        l = c == '+' ? ex::add(l, r) : ex::sub(l, r);
      } else
        return l;
    }
  }
  NodeP term() {
    NodeP l = unary();
    for (;;) {
      ws();
      if (i < s.size() && (s[i] == '*' || s[i] == '/')) {
        char c = s[i++];
        NodeP r = unary();
        l = c == '*' ? ex::mul(l, r) : ex::div(l, r);
      } else
        return l;
    }
  }
  NodeP unary() {
    ws();
    if (i < s.size() && s[i] == '-') {
      ++i;
      return ex::neg(unary());
    }
    if (i < s.size() && s[i] == '+') {
      ++i;
      return unary();
    }
    return power();
  }
  NodeP power() {
    NodeP b = primary();
    ws();
    if (i < s.size() && s[i] == '^') {
      ++i;
      ws();
      int p0 = pos();
      NodeP e = unary();
      if (ex::has_var(e)) throw ParseError("exponent must be constant (position " + std::to_string(p0) + ")", p0, {});
      return ex::pow(b, e);
    }
    return b;
  }
  int integer() {
    ws();
    size_t j = i;
    while (j < s.size() && std::isdigit((unsigned char)s[j])) ++j;
    if (j == i) fail({"integer"});
    int v = std::stoi(s.substr(i, j - i));
    i = j;
    return v;
  }
  std::string ident() {
    size_t j = i;
    while (j < s.size() && (std::isalnum((unsigned char)s[j]) || s[j] == '_')) ++j;
    std::string id = s.substr(i, j - i);
    i = j;
    return id;
  }
  int checked_slot(const std::string& blk, int k, int p0) {
    if (!L.has(blk)) throw ParseError("unknown identifier '" + blk + "' at position " + std::to_string(p0), p0, {});
    if (k < 1 || k > L.dim(blk))
      throw ParseError("index " + std::to_string(k) + " out of range for block " + blk + " (dim " +
                           std::to_string(L.dim(blk)) + ") at position " + std::to_string(p0),
                       p0, {});
    return L.slot(blk, k);
  }
  NodeP primary() {
    ws();
    if (i >= s.size()) fail(kPrimary);
    char c = s[i];
    if (c == '(') {
      ++i;
      NodeP e = expr();
      expect(')');
      return e;
    }
    if (std::isdigit((unsigned char)c) || c == '.') {
      // digits [. digits] [e[+-]digits]
      size_t j = i;
      while (j < s.size() && std::isdigit((unsigned char)s[j])) ++j;
      if (j < s.size() && s[j] == '.') {
        ++j;
        while (j < s.size() && std::isdigit((unsigned char)s[j])) ++j;
      }
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        size_t k = j + 1;
        if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
        if (k < s.size() && std::isdigit((unsigned char)s[k])) {
          while (k < s.size() && std::isdigit((unsigned char)s[k])) ++k;
          j = k;
        }
      }
      double v = 0;
      auto r = std::from_chars(s.data() + i, s.data() + j, v);
      if (r.ec != std::errc() || r.ptr != s.data() + j) fail({"number"});
      i = j;
      return ex::num(v);
    }
    if (c == '$') {
      ++i;
      if (i >= s.size() || !(std::isalpha((unsigned char)s[i]) || s[i] == '_')) fail({"parameter name"});
      return ex::param(ident());
    }
    if (std::isalpha((unsigned char)c) || c == '_') {
      int p0 = pos();
      std::string id = ident();
      if (id == "pi") return ex::pi();
      static const std::map<std::string, Op> fns = {{"sin", Op::Sin},   {"cos", Op::Cos}, {"exp", Op::Exp},
                                                    {"sqrt", Op::Sqrt}, {"abs", Op::Abs}, {"sgn", Op::Sgn}};
      if (id == "norm") {
        expect('(');
        ws();
        int pb = pos();
        std::string blk = ident();
        if (blk.empty()) fail({"block name"});
        if (!L.has(blk)) throw ParseError("unknown identifier '" + blk + "' at position " + std::to_string(pb), pb, {});
        int lo = 1, hi = L.dim(blk);
        if (peek('[')) {
          ++i;
          int pl = pos();
          lo = integer();
          ws();
          if (s.compare(i, 2, "..") != 0) fail({".."});
          i += 2;
          hi = integer();
          expect(']');
          checked_slot(blk, lo, pl);
          checked_slot(blk, hi, pl);
          if (hi < lo) throw ParseError("empty norm range at position " + std::to_string(pl), pl, {});
        }
        if (hi < lo) throw ParseError("norm over empty block at position " + std::to_string(pb), pb, {});
        expect(')');
        return ex::norm(L.slot(blk, lo), L.slot(blk, hi));
      }
      auto f = fns.find(id);
      if (f != fns.end()) {
        expect('(');
        NodeP a = expr();
        expect(')');
        return ex::fn(f->second, a);
      }
      if (!L.has(id)) throw ParseError("unknown identifier '" + id + "' at position " + std::to_string(p0), p0, {});
      expect('[');
      int pk = pos();
      int k = integer();
      expect(']');
      return ex::var(checked_slot(id, k, pk));
    }
    fail(kPrimary);
  }
};

}  // namespace

Expression parse_expression(const std::string& text, const LayoutP& layout, const Params& params) {
  if (!layout || layout->total_dim() == 0) throw std::invalid_argument("empty layout");
  Parser p{text, *layout};
  NodeP r = p.expr();
  p.ws();
  if (p.i != text.size()) p.fail({"operator", "end of input"});
  return Expression(r, layout, params);
}

// ---------------------------------------------------------------- expression

Expression::Expression(NodeP root, LayoutP layout, Params params)
    : root_(std::move(root)), layout_(std::move(layout)), params_(std::move(params)) {}

Expression Expression::with_params(const Params& p) const {
  Params q = params_;
  for (auto& [k, v] : p) q[k] = v;
  return Expression(root_, layout_, q);
}

namespace {

struct Evaluator {
  std::span<const double> pt;
  const Params& P;
  const Params* extra;
  const BlockLayout& L;
  bool checked;
  double margin = std::numeric_limits<double>::infinity();

  [[noreturn]] void sing(const Node& n, const std::string& what) {
    auto sp = std::shared_ptr<const Node>(std::shared_ptr<const Node>{}, &n);
    std::string sub = to_string(sp, L);
    throw SingularError("singular locus: " + what + " in " + sub, sub);
  }
  void mark(const Node& n, double m, const char* what) {
    margin = std::min(margin, m);
    if (checked && m <= 0) sing(n, what);
  }

  double ev(const Node& n) {
    switch (n.op) {
      case Op::Num: return n.num;
      case Op::Pi: return M_PI;
      case Op::Param: {
        if (extra) {
          auto it = extra->find(n.name);
          if (it != extra->end()) return it->second;
        }
        auto it = P.find(n.name);
        if (it == P.end()) throw std::runtime_error("unbound parameter $" + n.name);
        return it->second;
      }
      case Op::Var: return pt[n.slot];
      case Op::Norm: {
        double s = 0;
        for (int k = n.slot; k <= n.slot_hi; ++k) s += pt[k] * pt[k];
        double r = std::sqrt(s);
        mark(n, r, "norm argument is 0");
        return r;
      }
      case Op::Neg: return -ev(*n.a);
      case Op::Add: return ev(*n.a) + ev(*n.b);
      case Op::Sub: return ev(*n.a) - ev(*n.b);
      case Op::Mul: return ev(*n.a) * ev(*n.b);
      case Op::Div: {
        double a = ev(*n.a), b = ev(*n.b);
        mark(n, std::fabs(b), "division by 0");
        return a / b;
      }
      case Op::Pow: {
        double a = ev(*n.a), b = ev(*n.b);
        bool integral = b == std::floor(b);
        if (!integral) mark(n, a, "non-positive base of fractional power");
        else if (b < 0) mark(n, std::fabs(a), "0 to a negative power");
        return std::pow(a, b);
      }
      case Op::Sin: return std::sin(ev(*n.a));
      case Op::Cos: return std::cos(ev(*n.a));
      case Op::Exp: return std::exp(ev(*n.a));
      case Op::Sqrt: {
        double a = ev(*n.a);
        margin = std::min(margin, a);
        if (checked && a < 0) sing(n, "negative sqrt argument");
        return std::sqrt(std::max(a, 0.0));
      }
      case Op::Abs: {
        double a = ev(*n.a);
        mark(n, std::fabs(a), "abs argument is 0");
        return std::fabs(a);
      }
      case Op::Sgn: {
        double a = ev(*n.a);
        mark(n, std::fabs(a), "sgn argument is 0");
        return a > 0 ? 1.0 : (a < 0 ? -1.0 : 0.0);
      }
    }
    return 0;
  }
};

}  // namespace

double Expression::eval(std::span<const double> pt) const {
  if ((int)pt.size() != layout_->total_dim())
    throw std::invalid_argument("point has " + std::to_string(pt.size()) + " coordinates, layout needs " +
                                std::to_string(layout_->total_dim()));
  Evaluator E{pt, params_, nullptr, *layout_, true};
  return E.ev(*root_);
}

double Expression::eval(std::span<const double> pt, const Params& extra) const {
  if ((int)pt.size() != layout_->total_dim()) throw std::invalid_argument("point dimension mismatch");
  Evaluator E{pt, params_, &extra, *layout_, true};
  return E.ev(*root_);
}

double Expression::singular_margin(std::span<const double> pt) const {
  Evaluator E{pt, params_, nullptr, *layout_, false};
  double v = E.ev(*root_);
  if (!std::isfinite(v)) return 0.0;
  return E.margin;
}

static bool dep(const NodeP& n, int slot) {
  if (!n) return false;
  if (n->op == Op::Var) return n->slot == slot;
  if (n->op == Op::Norm) return slot >= n->slot && slot <= n->slot_hi;
  return dep(n->a, slot) || dep(n->b, slot);
}
bool Expression::depends_on(int slot) const { return dep(root_, slot); }

std::string Expression::str() const { return to_string(root_, *layout_); }

// ---------------------------------------------------------------- derivatives

static NodeP d(const NodeP& n, int v) {
  using namespace ex;
  switch (n->op) {
    case Op::Num:
    case Op::Pi:
    case Op::Param: return num(0);
    case Op::Var: return num(n->slot == v ? 1.0 : 0.0);
    case Op::Norm: return (v >= n->slot && v <= n->slot_hi) ? div(var(v), n) : num(0);
    case Op::Neg: return neg(d(n->a, v));
    case Op::Add: return add(d(n->a, v), d(n->b, v));
    case Op::Sub: return sub(d(n->a, v), d(n->b, v));
    case Op::Mul: return add(mul(d(n->a, v), n->b), mul(n->a, d(n->b, v)));
    case Op::Div: {
      NodeP da = d(n->a, v), db = d(n->b, v);
      return sub(div(da, n->b), div(mul(n->a, db), mul(n->b, n->b)));
    }
    case Op::Pow: {
      NodeP da = d(n->a, v);
      if (is_num(da, 0)) return num(0);
      return mul(mul(n->b, pow(n->a, sub(n->b, num(1)))), da);
    }
    case Op::Sin: return mul(fn(Op::Cos, n->a), d(n->a, v));
    case Op::Cos: return neg(mul(fn(Op::Sin, n->a), d(n->a, v)));
    case Op::Exp: return mul(n, d(n->a, v));
    case Op::Sqrt: return div(d(n->a, v), mul(num(2), n));
    case Op::Abs: return mul(fn(Op::Sgn, n->a), d(n->a, v));
    case Op::Sgn: return num(0);
  }
  return num(0);
}

Expression differentiate(const Expression& e, int slot) {
  if (slot < 0 || slot >= e.layout()->total_dim()) throw std::out_of_range("differentiation slot out of range");
  return e.with_root(d(e.root(), slot));
}

std::vector<Expression> gradient(const Expression& e, const std::vector<int>& slots) {
  std::vector<Expression> g;
  g.reserve(slots.size());
  for (int s : slots) g.push_back(differentiate(e, s));
  return g;
}

// ---------------------------------------------------------------- rebind

NodeP rebind(const NodeP& n, const std::vector<NodeP>& map) {
  using namespace ex;
  switch (n->op) {
    case Op::Num:
    case Op::Pi:
    case Op::Param: return n;
    case Op::Var: return map.at(n->slot);
    case Op::Norm: {
      bool contiguous = true;
      int s0 = -1;
      for (int k = n->slot; k <= n->slot_hi; ++k) {
        const NodeP& m = map.at(k);
        if (m->op != Op::Var) {
          contiguous = false;
          break;
        }
        if (k == n->slot) s0 = m->slot;
        else if (m->slot != s0 + (k - n->slot)) contiguous = false;
      }
      if (contiguous) return norm(s0, s0 + (n->slot_hi - n->slot));
      NodeP sum = num(0);
      for (int k = n->slot; k <= n->slot_hi; ++k) sum = add(sum, mul(map[k], map[k]));
      return fn(Op::Sqrt, sum);
    }
    case Op::Neg: return neg(rebind(n->a, map));
    case Op::Add: return add(rebind(n->a, map), rebind(n->b, map));
    case Op::Sub: return sub(rebind(n->a, map), rebind(n->b, map));
    case Op::Mul: return mul(rebind(n->a, map), rebind(n->b, map));
    case Op::Div: return div(rebind(n->a, map), rebind(n->b, map));
    case Op::Pow: return pow(rebind(n->a, map), n->b);
    default: return fn(n->op, rebind(n->a, map));
  }
}

static NodeP split_norms(const NodeP& n, const BlockLayout& L) {
  using namespace ex;
  if (!n) return n;
  switch (n->op) {
    case Op::Num:
    case Op::Pi:
    case Op::Param:
    case Op::Var: return n;
    case Op::Norm: {
      if (L.locate(n->slot).first == L.locate(n->slot_hi).first) return n;
      NodeP sum = num(0);
      for (int k = n->slot; k <= n->slot_hi; ++k) sum = add(sum, mul(var(k), var(k)));
      return fn(Op::Sqrt, sum);
    }
    case Op::Neg: return neg(split_norms(n->a, L));
    case Op::Add: return add(split_norms(n->a, L), split_norms(n->b, L));
    case Op::Sub: return sub(split_norms(n->a, L), split_norms(n->b, L));
    case Op::Mul: return mul(split_norms(n->a, L), split_norms(n->b, L));
    case Op::Div: return div(split_norms(n->a, L), split_norms(n->b, L));
    case Op::Pow: return pow(split_norms(n->a, L), n->b);
    default: return fn(n->op, split_norms(n->a, L));
  }
}

Expression rebind(const Expression& e, LayoutP new_layout, const std::vector<NodeP>& map) {
  if ((int)map.size() != e.layout()->total_dim()) throw std::invalid_argument("rebind map size mismatch");
  // a contiguous norm range may straddle blocks of the new layout; expand those
  NodeP r = split_norms(rebind(e.root(), map), *new_layout);
  return Expression(r, std::move(new_layout), e.params());
}

// ---------------------------------------------------------------- homogeneity

HomogeneityReport check_homogeneity(const Expression& e, const std::string& block, double degree,
                                    const std::vector<std::vector<double>>& samples, double tol) {
  const auto& L = *e.layout();
  int off = L.offset(block), dim = L.dim(block);
  std::vector<Expression> g;
  for (int k = 0; k < dim; ++k) g.push_back(differentiate(e, off + k));
  HomogeneityReport R;
  for (size_t si = 0; si < samples.size(); ++si) {
    const auto& pt = samples[si];
    double f = e.eval(pt);
    double euler = 0;
    for (int k = 0; k < dim; ++k) euler += pt[off + k] * g[k].eval(pt);
    double res = std::fabs(euler - degree * f) / (1 + std::fabs(f));
    double sc = 0;
    for (double lam : {0.5, 2.0, 10.0}) {
      auto q = pt;
      for (int k = 0; k < dim; ++k) q[off + k] *= lam;
      double fl = e.eval(q), want = std::pow(lam, degree) * f;
      sc = std::max(sc, std::fabs(fl - want) / (1 + std::fabs(want)));
    }
    double worst = std::max(res, sc);
    if (worst > std::max(R.worst_residual, R.worst_scaling) || R.worst_index < 0) R.worst_index = (int)si;
    R.worst_residual = std::max(R.worst_residual, res);
    R.worst_scaling = std::max(R.worst_scaling, sc);
    ++R.samples;
  }
  R.pass = R.worst_residual <= tol && R.worst_scaling <= std::max(tol, 1e-12);
  return R;
}

// ---------------------------------------------------------------- tape

Tape::Tape(const Expression& e) {
  std::function<int(const Node&)> emit = [&](const Node& n) -> int {
    Ins I{n.op, nreg_++, -1, -1, 0.0, -1, -1};
    switch (n.op) {
      case Op::Num: I.c = n.num; break;
      case Op::Pi: I.op = Op::Num; I.c = M_PI; break;
      case Op::Param: {
        auto it = e.params().find(n.name);
        if (it == e.params().end()) throw std::runtime_error("unbound parameter $" + n.name);
        I.op = Op::Num;
        I.c = it->second;
        break;
      }
      case Op::Var: I.lo = n.slot; break;
      case Op::Norm: I.lo = n.slot; I.hi = n.slot_hi; break;
      default:
        I.a = emit(*n.a);
        if (n.b) I.b = emit(*n.b);
        if (n.op == Op::Pow && n.b->op != Op::Num) {
          // constant exponent: fold now
          Expression ce(n.b, e.layout(), e.params());
          std::vector<double> z(e.layout()->total_dim(), 0.0);
          I.c = ce.eval(z);
        } else if (n.op == Op::Pow)
          I.c = n.b->num;
        break;
    }
    code_.push_back(I);
    return I.dst;
  };
  out_ = emit(*e.root());
}

static inline double apply(Op op, double a, double b, double c) {
  switch (op) {
    case Op::Neg: return -a;
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div: return a / b;
    case Op::Pow: return c == 2.0 ? a * a : std::pow(a, c);
    case Op::Sin: return std::sin(a);
    case Op::Cos: return std::cos(a);
    case Op::Exp: return std::exp(a);
    case Op::Sqrt: return std::sqrt(a);
    case Op::Abs: return std::fabs(a);
    case Op::Sgn: return a > 0 ? 1.0 : (a < 0 ? -1.0 : 0.0);
    default: return 0;
  }
}

double Tape::eval(const double* pt) const {
  double stackbuf[256];
  std::vector<double> heap;
  double* r = stackbuf;
  if (nreg_ > 256) {
    heap.resize(nreg_);
    r = heap.data();
  }
  for (const auto& I : code_) {
    switch (I.op) {
      case Op::Num: r[I.dst] = I.c; break;
      case Op::Var: r[I.dst] = pt[I.lo]; break;
      case Op::Norm: {
        double s = 0;
        for (int k = I.lo; k <= I.hi; ++k) s += pt[k] * pt[k];
        r[I.dst] = std::sqrt(s);
        break;
      }
      default: r[I.dst] = apply(I.op, r[I.a], I.b >= 0 ? r[I.b] : 0.0, I.c); break;
    }
  }
  return r[out_];
}

void Tape::eval_batch(const double* const* cols, int n, double* out, std::vector<double>& work) const {
  if ((int)work.size() < nreg_ * n) work.resize((size_t)nreg_ * n);
  std::vector<const double*> ptr(nreg_);
  for (const auto& I : code_) {
    double* dst = work.data() + (size_t)I.dst * n;
    switch (I.op) {
      case Op::Num:
        for (int i = 0; i < n; ++i) dst[i] = I.c;
        ptr[I.dst] = dst;
        break;
      case Op::Var: ptr[I.dst] = cols[I.lo]; break;
      case Op::Norm: {
        for (int i = 0; i < n; ++i) dst[i] = 0;
        for (int k = I.lo; k <= I.hi; ++k) {
          const double* c = cols[k];
          for (int i = 0; i < n; ++i) dst[i] += c[i] * c[i];
        }
        for (int i = 0; i < n; ++i) dst[i] = std::sqrt(dst[i]);
        ptr[I.dst] = dst;
        break;
      }
      default: {
        const double* a = ptr[I.a];
        const double* b = I.b >= 0 ? ptr[I.b] : nullptr;
        switch (I.op) {
          case Op::Neg: for (int i = 0; i < n; ++i) dst[i] = -a[i]; break;
          case Op::Add: for (int i = 0; i < n; ++i) dst[i] = a[i] + b[i]; break;
          case Op::Sub: for (int i = 0; i < n; ++i) dst[i] = a[i] - b[i]; break;
          case Op::Mul: for (int i = 0; i < n; ++i) dst[i] = a[i] * b[i]; break;
          case Op::Div: for (int i = 0; i < n; ++i) dst[i] = a[i] / b[i]; break;
          case Op::Pow:
            if (I.c == 2.0)
              for (int i = 0; i < n; ++i) dst[i] = a[i] * a[i];
            else
              for (int i = 0; i < n; ++i) dst[i] = std::pow(a[i], I.c);
            break;
          default:
            for (int i = 0; i < n; ++i) dst[i] = apply(I.op, a[i], 0.0, I.c);
            break;
        }
        ptr[I.dst] = dst;
      }
    }
  }
  const double* r = ptr[out_];
  std::copy(r, r + n, out);
}

}  // namespace ftr
