#include "fiotrace/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace ftr {

ConfigError::ConfigError(const std::string& sec, int ln, const std::string& msg)
    : std::runtime_error((sec.empty() ? std::string() : "[" + sec + "] ") +
                         (ln > 0 ? "line " + std::to_string(ln) + ": " : std::string()) + msg),
      section(sec),
      line(ln) {}

// ---------------------------------------------------------------- small text helpers

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n"), b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

std::string unquote(const std::string& s0) {
  std::string s = trim(s0);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  bool q = false;
  int depth = 0;
  for (char c : s) {
    if (c == '"') q = !q;
    if (!q && (c == '(' || c == '[')) ++depth;
    if (!q && (c == ')' || c == ']')) --depth;
    if (c == sep && !q && depth == 0) {
      out.push_back(unquote(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(unquote(cur));
  return out;
}

double eval_number(const std::string& text, const Params& params) {
  // numbers may not reference variables; the dummy block only keeps the layout nonempty
  static const LayoutP none = make_layout({{"_", 1}});
  auto e = parse_expression(text, none, params);
  if (ex::has_var(e.root())) throw std::invalid_argument("'" + text + "' must not reference variables");
  double zero = 0;
  double v = e.eval(std::span<const double>(&zero, 1));
  if (!std::isfinite(v)) throw std::invalid_argument("'" + text + "' is not a finite number");
  return v;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

std::string join_quoted(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + quote(v[i]);
  return s;
}

template <class T>
std::string join_num(const std::vector<T>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ", ";
    if constexpr (std::is_floating_point_v<T>) s += shortest(v[i]);
    else s += std::to_string(v[i]);
  }
  return s;
}

LayoutP full_layout(const ScenarioConfig& c) {
  int k = c.space.dim_x, nu = c.space.nu();
  return make_layout({{"x", k}, {"y", nu}, {"xp", k}, {"yp", nu}, {"th", c.n_theta_effective()}});
}

using LineOf = std::function<int(const std::string&, const std::string&)>;

void check_expr(const std::string& text, const LayoutP& L, const Params& p, const std::string& sec,
                const std::string& key, const LineOf& line_of) {
  try {
    parse_expression(text, L, p);
  } catch (const ParseError& e) {
    throw ConfigError(sec, line_of(sec, key),
                      key + ": parse error at position " + std::to_string(e.position) + " in '" + text +
                          "': " + e.what());
  } catch (const std::exception& e) {
    throw ConfigError(sec, line_of(sec, key), key + ": " + e.what());
  }
}

void validate_with_lines(const ScenarioConfig& c, const LineOf& line_of) {
  try {
    c.space.validate();
  } catch (const std::exception& e) {
    throw ConfigError("space", line_of("space", "dim_x"), e.what());
  }
  if (c.have_phase && c.have_canonical)
    throw ConfigError("canonical", line_of("canonical", ""),
                      "ambiguous Lagrangian source: both [phase] and [canonical] are given");
  if (!c.have_phase && !c.have_canonical)
    throw ConfigError("", 0, "no Lagrangian source: give a [phase] or a [canonical] section");
  int k = c.space.dim_x, n = c.space.dim_m;
  if (c.have_phase) {
    if (c.n_theta < 1) throw ConfigError("phase", line_of("phase", "n_theta"), "th block must have size >= 1");
    auto L = full_layout(c);
    check_expr(c.phase, L, c.params, "phase", "phi", line_of);
    for (auto& s : c.cone) check_expr(s, L, c.params, "phase", "cone", line_of);
  }
  if (c.have_canonical) {
    bool lift = !c.psi.empty() || !c.psi_inverse.empty();
    bool map = !c.forward.empty() || !c.inverse.empty();
    if (lift == map)
      throw ConfigError("canonical", line_of("canonical", ""),
                        "give either psi/psi_inverse (a point transformation) or forward/inverse (a map)");
    try {
      if (lift) lift_point_transformation(c.space, c.psi, c.psi_inverse, c.params);
      else make_canonical_map(c.space, c.forward, c.inverse, c.params);
    } catch (const std::exception& e) {
      throw ConfigError("canonical", line_of("canonical", lift ? "psi" : "forward"), e.what());
    }
  }
  {
    auto L = full_layout(c);
    check_expr(c.amp_re, L, c.params, "amplitude", "re", line_of);
    check_expr(c.amp_im, L, c.params, "amplitude", "im", line_of);
  }
  for (int i : c.I)
    if (i < 1 || i > k) throw ConfigError("chart", line_of("chart", "I"), "index out of range 1.." + std::to_string(k));
  for (int i : c.Ip)
    if (i < 1 || i > k) throw ConfigError("chart", line_of("chart", "Ip"), "index out of range 1.." + std::to_string(k));
  try {
    make_chart(k, c.I, c.Ip, c.S, c.params);
  } catch (const std::exception& e) {
    throw ConfigError("chart", line_of("chart", "S"), e.what());
  }
  try {
    c.quad.validate();
  } catch (const std::exception& e) {
    throw ConfigError("quadrature", line_of("quadrature", "epsilons"), e.what());
  }
  try {
    c.kernel_quad.validate();
  } catch (const std::exception& e) {
    throw ConfigError("quadrature", line_of("quadrature", "kernel_epsilons"), e.what());
  }
  if (!c.direction.empty() && (int)c.direction.size() != 2 * k)
    throw ConfigError("oracle", line_of("oracle", "direction"), "direction needs " + std::to_string(2 * k) + " entries");
  for (auto& d : c.direction) {
    try {
      eval_number(d, c.params);
    } catch (const std::exception& e) {
      throw ConfigError("oracle", line_of("oracle", "direction"), e.what());
    }
  }
  if (c.lambda_samples < 4) throw ConfigError("solver", line_of("solver", "lambda_samples"), "need at least 4 samples");
  if (!(c.delta > 0)) throw ConfigError("solver", line_of("solver", "delta"), "delta must be positive");
  (void)n;
}

}  // namespace

void validate_config(const ScenarioConfig& cfg) {
  validate_with_lines(cfg, [](const std::string&, const std::string&) { return 0; });
}

// ---------------------------------------------------------------- INI reader

ScenarioConfig parse_config(const std::string& text, const std::string& origin) {
  struct Entry {
    std::string value;
    int line;
  };
  std::map<std::string, std::map<std::string, std::vector<Entry>>> sec;
  std::map<std::string, int> sec_line;
  std::istringstream in(text);
  std::string raw, cur;
  int ln = 0;
  static const std::set<std::string> known{"scenario", "space",  "params", "phase",      "canonical",
                                           "amplitude", "chart", "solver", "quadrature", "oracle"};
  while (std::getline(in, raw)) {
    ++ln;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s[0] == '[') {
      if (s.back() != ']') throw ConfigError("", ln, origin + ": malformed section header");
      cur = trim(s.substr(1, s.size() - 2));
      if (!known.count(cur)) throw ConfigError(cur, ln, origin + ": unknown section");
      if (sec_line.count(cur)) throw ConfigError(cur, ln, origin + ": section given twice");
      sec_line[cur] = ln;
      sec[cur];
      continue;
    }
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(cur, ln, origin + ": expected key = value");
    if (cur.empty()) throw ConfigError("", ln, origin + ": key outside of any section");
    std::string key = trim(s.substr(0, eq));
    std::string val = trim(s.substr(eq + 1));
    auto& slot = sec[cur][key];
    if (!slot.empty() && !(cur == "phase" && key == "cone"))
      throw ConfigError(cur, ln, origin + ": duplicate key '" + key + "'");
    slot.push_back({val, ln});
  }
  auto line_of = [&](const std::string& s, const std::string& k) {
    auto it = sec.find(s);
    if (it == sec.end()) return 0;
    auto jt = it->second.find(k);
    if (jt == it->second.end() || jt->second.empty()) return sec_line.count(s) ? sec_line[s] : 0;
    return jt->second.front().line;
  };

  ScenarioConfig c;
  std::set<std::string> used;
  auto get = [&](const std::string& s, const std::string& k) -> const Entry* {
    auto it = sec.find(s);
    if (it == sec.end()) return nullptr;
    auto jt = it->second.find(k);
    if (jt == it->second.end()) return nullptr;
    used.insert(s + "." + k);
    return &jt->second.front();
  };
  auto num = [&](const std::string& s, const std::string& k, double& out) {
    if (auto e = get(s, k)) {
      try {
        out = eval_number(unquote(e->value), c.params);
      } catch (const std::exception& ex) {
        throw ConfigError(s, e->line, k + ": " + ex.what());
      }
    }
  };
  auto integer = [&](const std::string& s, const std::string& k, int& out) {
    double v = out;
    num(s, k, v);
    if (v != std::floor(v)) throw ConfigError(s, line_of(s, k), k + ": expected an integer");
    out = (int)v;
  };
  auto str = [&](const std::string& s, const std::string& k, std::string& out) {
    if (auto e = get(s, k)) out = unquote(e->value);
  };
  auto list = [&](const std::string& s, const std::string& k, std::vector<std::string>& out) {
    if (auto e = get(s, k)) out = split_list(e->value);
  };
  auto ints = [&](const std::string& s, const std::string& k, std::vector<int>& out) {
    if (auto e = get(s, k)) {
      out.clear();
      for (auto& t : split_list(unquote(e->value))) {
        if (t.empty()) continue;
        try {
          size_t pos;
          out.push_back(std::stoi(t, &pos));
          if (pos != t.size()) throw std::invalid_argument(t);
        } catch (const std::exception&) {
          throw ConfigError(s, e->line, k + ": '" + t + "' is not an integer");
        }
      }
    }
  };
  auto reals = [&](const std::string& s, const std::string& k, std::vector<double>& out) {
    if (auto e = get(s, k)) {
      out.clear();
      for (auto& t : split_list(unquote(e->value))) {
        try {
          out.push_back(eval_number(t, c.params));
        } catch (const std::exception& ex) {
          throw ConfigError(s, e->line, k + ": " + ex.what());
        }
      }
    }
  };
  auto boolean = [&](const std::string& s, const std::string& k, bool& out) {
    if (auto e = get(s, k)) {
      std::string v = unquote(e->value);
      if (v == "true" || v == "1" || v == "yes") out = true;
      else if (v == "false" || v == "0" || v == "no") out = false;
      else throw ConfigError(s, e->line, k + ": expected true or false");
    }
  };

  // params first: other numbers may use them
  if (sec.count("params"))
    for (auto& [k, v] : sec["params"]) {
      used.insert("params." + k);
      try {
        c.params[k] = eval_number(unquote(v.front().value), c.params);
      } catch (const std::exception& ex) {
        throw ConfigError("params", v.front().line, k + ": " + ex.what());
      }
    }
  str("scenario", "name", c.name);
  str("scenario", "description", c.description);
  integer("space", "dim_m", c.space.dim_m);
  integer("space", "dim_x", c.space.dim_x);
  if (sec.count("phase")) {
    c.have_phase = true;
    if (!get("phase", "phi")) throw ConfigError("phase", sec_line["phase"], "missing key 'phi'");
    str("phase", "phi", c.phase);
    if (!get("phase", "n_theta")) throw ConfigError("phase", sec_line["phase"], "missing key 'n_theta'");
    integer("phase", "n_theta", c.n_theta);
    if (auto it = sec["phase"].find("cone"); it != sec["phase"].end()) {
      used.insert("phase.cone");
      for (auto& e : it->second) c.cone.push_back(unquote(e.value));
    }
  }
  if (sec.count("canonical")) {
    c.have_canonical = true;
    list("canonical", "forward", c.forward);
    list("canonical", "inverse", c.inverse);
    list("canonical", "psi", c.psi);
    list("canonical", "psi_inverse", c.psi_inverse);
  }
  str("amplitude", "re", c.amp_re);
  str("amplitude", "im", c.amp_im);
  num("amplitude", "order", c.amp_order);
  ints("chart", "I", c.I);
  ints("chart", "Ip", c.Ip);
  if (auto e = get("chart", "S")) c.S = unquote(e->value);
  integer("solver", "theta_points", c.seeds.theta_points);
  integer("solver", "base_per_theta", c.seeds.base_per_theta);
  integer("solver", "lambda_samples", c.lambda_samples);
  integer("solver", "property_samples", c.property_samples);
  num("solver", "delta", c.delta);
  reals("quadrature", "epsilons", c.quad.epsilons);
  integer("quadrature", "order", c.quad.order);
  integer("quadrature", "nodes", c.quad.nodes);
  num("quadrature", "kappa", c.quad.kappa);
  boolean("quadrature", "halving", c.quad.halving_check);
  reals("quadrature", "kernel_epsilons", c.kernel_quad.epsilons);
  integer("quadrature", "kernel_nodes", c.kernel_quad.nodes);
  list("oracle", "direction", c.direction);
  num("oracle", "packet_sigma", c.packet_sigma);

  for (auto& [s, keys] : sec)
    for (auto& [k, v] : keys)
      if (!used.count(s + "." + k)) throw ConfigError(s, v.front().line, origin + ": unknown key '" + k + "'");
  validate_with_lines(c, line_of);
  return c;
}

ScenarioConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("", 0, "cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

std::string to_ini(const ScenarioConfig& c) {
  std::ostringstream o;
  o << "[scenario]\nname = " << quote(c.name) << "\n";
  if (!c.description.empty()) o << "description = " << quote(c.description) << "\n";
  o << "\n[space]\ndim_m = " << c.space.dim_m << "\ndim_x = " << c.space.dim_x << "\n";
  if (!c.params.empty()) {
    o << "\n[params]\n";
    for (auto& [k, v] : c.params) o << k << " = " << shortest(v) << "\n";
  }
  if (c.have_phase) {
    o << "\n[phase]\nphi = " << quote(c.phase) << "\nn_theta = " << c.n_theta << "\n";
    for (auto& s : c.cone) o << "cone = " << quote(s) << "\n";
  }
  if (c.have_canonical) {
    o << "\n[canonical]\n";
    if (!c.psi.empty()) o << "psi = " << join_quoted(c.psi) << "\npsi_inverse = " << join_quoted(c.psi_inverse) << "\n";
    else o << "forward = " << join_quoted(c.forward) << "\ninverse = " << join_quoted(c.inverse) << "\n";
  }
  o << "\n[amplitude]\nre = " << quote(c.amp_re) << "\nim = " << quote(c.amp_im) << "\norder = " << shortest(c.amp_order)
    << "\n";
  o << "\n[chart]\nI = " << quote(join_num(c.I)) << "\nIp = " << quote(join_num(c.Ip)) << "\n";
  if (c.S) o << "S = " << quote(*c.S) << "\n";
  o << "\n[solver]\ntheta_points = " << c.seeds.theta_points << "\nbase_per_theta = " << c.seeds.base_per_theta
    << "\nlambda_samples = " << c.lambda_samples << "\nproperty_samples = " << c.property_samples
    << "\ndelta = " << shortest(c.delta) << "\n";
  o << "\n[quadrature]\nepsilons = " << join_num(c.quad.epsilons) << "\norder = " << c.quad.order
    << "\nnodes = " << c.quad.nodes << "\nkappa = " << shortest(c.quad.kappa)
    << "\nhalving = " << (c.quad.halving_check ? "true" : "false")
    << "\nkernel_epsilons = " << join_num(c.kernel_quad.epsilons) << "\nkernel_nodes = " << c.kernel_quad.nodes
    << "\n";
  o << "\n[oracle]\n";
  if (!c.direction.empty()) o << "direction = " << join_quoted(c.direction) << "\n";
  o << "packet_sigma = " << shortest(c.packet_sigma) << "\n";
  return o.str();
}

void apply_params(ScenarioConfig& cfg, const std::vector<std::string>& assignments) {
  for (auto& a : assignments) {
    auto eq = a.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--param expects k=v, got '" + a + "'");
    std::string k = trim(a.substr(0, eq));
    if (!cfg.params.count(k)) {
      std::string known;
      for (auto& [n, v] : cfg.params) known += (known.empty() ? "" : ", ") + n;
      throw std::invalid_argument("unknown parameter '" + k + "' (known: " + (known.empty() ? "none" : known) + ")");
    }
    cfg.params[k] = eval_number(trim(a.substr(eq + 1)), cfg.params);
  }
  validate_config(cfg);
}

// ---------------------------------------------------------------- builtins

std::vector<std::string> builtin_names() {
  return {"rotation", "halfwave", "fiberpair", "shift_along_x", "parabola_tangency", "pdo_conormal"};
}

namespace {

ScenarioConfig phase_config(const std::string& name, const std::string& desc, const std::string& phi, int N,
                            Params p) {
  ScenarioConfig c;
  c.name = name;
  c.description = desc;
  c.have_phase = true;
  c.phase = phi;
  c.n_theta = N;
  c.params = std::move(p);
  return c;
}

ScenarioConfig lift_config(const std::string& name, std::vector<std::string> psi, std::vector<std::string> inv,
                           Params p) {
  ScenarioConfig c;
  c.name = name;
  c.have_canonical = true;
  c.psi = std::move(psi);
  c.psi_inverse = std::move(inv);
  c.params = std::move(p);
  return c;
}

}  // namespace

BuiltinScenario builtin_scenario(const std::string& name) {
  BuiltinScenario B;
  B.name = name;
  B.expected = "pass";
  if (name == "rotation") {
    B.description = "trace of the plane rotation by a on the line y = 0";
    B.config = phase_config(name, B.description,
                            "(x[1]-xp[1]*cos($a)+yp[1]*sin($a))*th[1] + (y[1]-xp[1]*sin($a)-yp[1]*cos($a))*th[2]", 2,
                            {{"a", M_PI / 4}});
    B.config.S = "0";
    B.config.direction = {"1", "cos($a)"};
    B.config.quad.epsilons = {0.4, 0.3, 0.2, 0.1};
    B.config.packet_sigma = 0.1;
    B.canonical = lift_config(name, {"x[1]*cos($a) - y[1]*sin($a)", "x[1]*sin($a) + y[1]*cos($a)"},
                              {"x[1]*cos($a) + y[1]*sin($a)", "-x[1]*sin($a) + y[1]*cos($a)"}, {{"a", M_PI / 4}});
  } else if (name == "halfwave") {
    B.description = "half-wave propagator exp(-i t |D|) on the plane, traced on y = 0";
    B.config = phase_config(name, B.description, "(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2] + $t*norm(th)", 2,
                            {{"t", 1.0}});
    B.config.Ip = {1};
    B.config.S = "-w[2]*w[1] + $t*abs(w[1])";
    B.config.direction = {"1", "0"};
    B.config.packet_sigma = 0.5;
    // geodesic flow backwards in time
    std::string r = "sqrt(p[1]^2+q[1]^2)";
    ScenarioConfig g;
    g.name = name;
    g.have_canonical = true;
    g.forward = {"x[1] - $t*p[1]/" + r, "y[1] - $t*q[1]/" + r, "p[1]", "q[1]"};
    g.inverse = {"x[1] + $t*p[1]/" + r, "y[1] + $t*q[1]/" + r, "p[1]", "q[1]"};
    g.params = {{"t", 1.0}};
    B.canonical = g;
  } else if (name == "fiberpair") {
    B.description = "pair of point evaluations with a conic bump in the normal covectors (excess 2)";
    B.config = phase_config(name, B.description, "x[1]*th[1] + y[1]*th[2] - xp[1]*th[3] - yp[1]*th[4]", 4,
                            {{"c", 0.8}});
    B.config.cone = {"$c^2*(th[1]^2+th[3]^2) - th[2]^2 - th[4]^2"};
    std::string v = "(1 - (th[2]^2+th[4]^2)/($c^2*(th[1]^2+th[3]^2)))";
    B.config.amp_re = "((" + v + " + abs(" + v + "))/2)^2";
    B.config.S = "0";
    B.config.direction = {"1", "1"};
  } else if (name == "shift_along_x") {
    B.description = "translation by (a, b); with b = 0 it preserves the conormal bundle of X";
    B.expected = "condition2";
    B.config = phase_config(name, B.description, "(x[1]-xp[1]-$a)*th[1] + (y[1]-yp[1]-$b)*th[2]", 2,
                            {{"a", 1.0}, {"b", 0.0}});
    B.config.I = {1};
    B.config.direction = {"0.3", "1"};
    B.canonical = lift_config(name, {"x[1] + $a", "y[1] + $b"}, {"x[1] - $a", "y[1] - $b"}, {{"a", 1.0}, {"b", 0.0}});
  } else if (name == "parabola_tangency") {
    B.description = "lift of (x, y + x^2): the image of X is tangent to X at the origin";
    B.expected = "condition1";
    B.config = phase_config(name, B.description, "(x[1]-xp[1])*th[1] + (y[1]-yp[1]-xp[1]^2)*th[2]", 2, {});
    B.config.I = {1};
    B.config.direction = {"0.3", "1"};
    B.canonical = lift_config(name, {"x[1]", "y[1] + x[1]^2"}, {"x[1]", "y[1] - x[1]^2"}, {});
  } else if (name == "pdo_conormal") {
    B.description = "pseudodifferential operator (identity relation): traced relation is conormal";
    B.expected = "condition2";
    B.config = phase_config(name, B.description, "(x[1]-xp[1])*th[1] + (y[1]-yp[1])*th[2]", 2, {});
    B.config.I = {1};
    B.config.direction = {"0.3", "1"};
    B.canonical = lift_config(name, {"x[1]", "y[1]"}, {"x[1]", "y[1]"}, {});
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "'");
  }
  validate_config(B.config);
  if (B.canonical) {
    B.canonical->description = B.description;
    validate_config(*B.canonical);
  }
  return B;
}

std::string lift_phase_text(const ScenarioConfig& c) {
  if (!c.is_lift()) throw std::invalid_argument("not a point-transformation config");
  int k = c.space.dim_x, n = c.space.dim_m;
  // psi is written over x, y; move it to x', y'
  auto rename = [&](std::string s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
      bool start = i == 0 || !(std::isalnum((unsigned char)s[i - 1]) || s[i - 1] == '_' || s[i - 1] == '$');
      if (start && (s[i] == 'x' || s[i] == 'y') && i + 1 < s.size() && s[i + 1] == '[') {
        out += s[i];
        out += "p";
      } else {
        out += s[i];
      }
    }
    return out;
  };
  std::string phi;
  for (int i = 0; i < n; ++i) {
    std::string m = i < k ? "x[" + std::to_string(i + 1) + "]" : "y[" + std::to_string(i - k + 1) + "]";
    phi += (i ? " + " : "") + std::string("(") + m + " - (" + rename(c.psi[i]) + "))*th[" + std::to_string(i + 1) + "]";
  }
  return phi;
}

// ---------------------------------------------------------------- check pipeline

std::vector<double> Prepared::direction() const {
  std::vector<double> d;
  for (auto& s : cfg.direction) d.push_back(eval_number(s, cfg.params));
  return d;
}

static CanonicalMap canonical_of(const ScenarioConfig& c) {
  if (c.is_lift()) return lift_point_transformation(c.space, c.psi, c.psi_inverse, c.params);
  return make_canonical_map(c.space, c.forward, c.inverse, c.params);
}

std::unique_ptr<Prepared> run_check(const ScenarioConfig& cfg, unsigned long long seed) {
  validate_config(cfg);
  auto P = std::make_unique<Prepared>();
  P->cfg = cfg;
  P->seed = seed;
  P->rng.seed(seed);
  auto& R = P->report;
  R.scenario = cfg.name;
  R.seed = seed;
  const auto& ch = cfg.space;
  auto L = full_layout(cfg);
  int N = cfg.n_theta_effective();
  P->order_phi = cfg.have_phase || cfg.is_lift() ? cfg.amp_order + 0.5 * N - 0.5 * ch.dim_m : cfg.amp_order;
  R.order_phi = P->order_phi;

  if (cfg.have_canonical) {
    P->canonical = canonical_of(cfg);
    auto v = validate_canonical(*P->canonical, P->rng, cfg.property_samples);
    if (!v.pass) {
      R.notes.push_back("canonical map fails validation: symplectic residual " + shortest(v.symplectic_residual) +
                        ", homogeneity residual " + shortest(v.homogeneity_residual));
      R.source_kind = "graph";
      R.condition1.inconclusive = true;
      P->exit_code = 2;
      return P;
    }
    P->corollary = check_corollary_conditions(*P->canonical, P->rng, cfg.lambda_samples, cfg.delta, false);
    const auto& C = *P->corollary;
    R.notes.push_back(std::string("corollary.condition1 = ") + (C.cond1_pass() ? "pass" : "fail"));
    R.notes.push_back(std::string("corollary.condition2 = ") + (C.cond2_pass() ? "pass" : "fail") +
                      " (margin " + shortest(C.cond2_margin) + ")");
    R.notes.push_back(std::string("graph_lemma_agreement = ") + (C.agree() ? "true" : "false"));
    auto ob = check_order_bound(P->order_phi, ch);
    R.notes.push_back(std::string("order_bound = ") + (ob.pass ? "pass" : "fail") + " (informational)");
  }

  if (cfg.have_phase || cfg.is_lift()) {
    P->have_phase = true;
    std::string text = cfg.have_phase ? cfg.phase : lift_phase_text(cfg);
    std::vector<Expression> cone;
    for (auto& s : cfg.cone) cone.push_back(parse_expression(s, L, cfg.params));
    P->ph = make_phase(parse_expression(text, L, cfg.params), {"x", "y"}, {"xp", "yp"}, cone);
    P->amp_re = parse_expression(cfg.amp_re, L, cfg.params);
    P->amp_im = parse_expression(cfg.amp_im, L, cfg.params);
    R.source_kind = cfg.have_phase ? "phase" : "phase (lifted)";
    P->validation = validate_phase(P->ph, P->rng, cfg.property_samples);
    if (!P->validation.pass) {
      R.notes.push_back("phase validation failed: euler residual " + shortest(P->validation.euler_residual) +
                        ", gradient margin " + shortest(P->validation.gradient_margin));
      P->exit_code = 2;
      return P;
    }
    P->crit = solve_critical_set(P->ph, cfg.seeds, P->rng);
    try {
      auto ex = excess_of(P->ph, P->crit);
      R.notes.push_back("phase excess = " + std::to_string(ex.e));
    } catch (const std::exception& e) {
      R.notes.push_back(std::string("phase excess: ") + e.what());
    }
    P->r = restrict_phase(P->ph, ch);
    P->r.parent = &P->ph;
    P->a_re_xx = restrict_expression(P->amp_re, P->r.phi_xx.layout);
    P->a_im_xx = restrict_expression(P->amp_im, P->r.phi_xx.layout);
    P->crit_xx = solve_critical_set(P->r.phi_xx, cfg.seeds, P->rng);
    P->src = source_from_phase(P->ph, P->crit, ch);
    std::vector<VectorXd> seeds;
    for (auto& c : P->crit_xx.points) seeds.push_back(embed_restricted(P->ph, P->r.phi_xx, c));
    auto ys = P->src.y_slots;
    for (auto u : P->crit.points) {
      for (int s : ys) u[s] = 0;
      seeds.push_back(u);
    }
    P->lxx = lambda_xx_samples(P->src, cfg.lambda_samples, P->rng, seeds);
    R.condition1 = check_condition_clean(P->src, P->lxx);
    R.condition2 = check_condition_conormal(P->src, P->lxx, cfg.delta);
    if (!P->crit_xx.empty()) {
      try {
        R.excess_e = excess_of(P->r.phi_xx, P->crit_xx).e;
      } catch (const std::exception& e) {
        R.notes.push_back(std::string("restricted excess: ") + e.what());
      }
      R.have_param_clean = true;
      R.param_clean = verify_parameter_space_cleanness(P->ph, P->r, P->crit_xx);
    }
    if (!P->lxx.params.empty()) P->traced = trace_lagrangian(P->src, P->lxx);
  } else {
    // graph constraints only
    R.source_kind = "graph";
    R.condition1 = P->corollary->theorem1;
    R.condition2 = P->corollary->theorem2;
  }
  R.dim_lambda_xx = R.condition1.dim_lambda_xx;
  if (R.dim_lambda_xx >= 0) R.traced_order = trace_order(P->order_phi, ch, R.dim_lambda_xx);
  R.sobolev = check_sobolev_window(P->order_phi, ch);
  if (R.smoothing()) R.notes.push_back("empty intersection: the trace is smoothing");
  P->inconclusive = R.condition1.inconclusive || R.condition1.clean.marginal;
  if (P->corollary && !P->corollary->agree()) P->inconclusive = true;
  P->exit_code = !R.pass() ? 2 : P->inconclusive ? 3 : 0;
  return P;
}

// ---------------------------------------------------------------- tables and grids

std::string Table::to_csv() const {
  auto field = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  std::string o;
  for (size_t i = 0; i < header.size(); ++i) o += (i ? "," : "") + field(header[i]);
  o += "\n";
  for (auto& r : rows) {
    for (size_t i = 0; i < r.size(); ++i) o += (i ? "," : "") + field(r[i]);
    o += "\n";
  }
  return o;
}

static std::vector<double> parse_reals(const std::string& s) {
  std::vector<double> v;
  for (auto& t : split_list(s)) v.push_back(eval_number(t, {}));
  return v;
}

static VectorXd to_vec(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), (Eigen::Index)v.size());
}

std::vector<VectorXd> parse_w_grid(const std::string& spec, int dim) {
  std::vector<VectorXd> out;
  auto need = [&](const std::vector<double>& v) {
    if ((int)v.size() != dim)
      throw std::invalid_argument("w-grid: expected " + std::to_string(dim) + " coordinates, got " +
                                  std::to_string(v.size()));
    return to_vec(v);
  };
  if (spec.rfind("ray:", 0) == 0) {
    auto parts = split_list(spec.substr(4), ':');
    if (parts.size() != 2) throw std::invalid_argument("w-grid: ray:DIR:LAMBDAS");
    VectorXd d = need(parse_reals(parts[0]));
    for (double l : parse_reals(parts[1])) out.push_back(l * d);
  } else if (spec.rfind("line:", 0) == 0) {
    auto parts = split_list(spec.substr(5), ':');
    if (parts.size() != 3) throw std::invalid_argument("w-grid: line:START:END:COUNT");
    VectorXd a = need(parse_reals(parts[0])), b = need(parse_reals(parts[1]));
    int n = std::stoi(parts[2]);
    if (n < 1) throw std::invalid_argument("w-grid: count must be positive");
    for (int i = 0; i < n; ++i) out.push_back(n == 1 ? a : VectorXd(a + (b - a) * (double(i) / (n - 1))));
  } else {
    for (auto& p : split_list(spec, ';'))
      if (!trim(p).empty()) out.push_back(need(parse_reals(p)));
  }
  if (out.empty()) throw std::invalid_argument("w-grid is empty");
  return out;
}

static std::vector<std::string> w_header(int dim) {
  std::vector<std::string> h;
  for (int i = 1; i <= dim; ++i) h.push_back("w" + std::to_string(i));
  return h;
}

// ---------------------------------------------------------------- amplitude

std::unique_ptr<AmplitudeEngine> make_amplitude_engine(Prepared& P, bool strict, bool identity) {
  if (!P.have_phase) throw std::runtime_error("amplitudes need a phase function (or a point transformation)");
  if (P.crit_xx.empty()) throw std::runtime_error("restricted critical set is empty: the trace is smoothing");
  const auto& c = P.cfg;
  auto chart = make_chart(c.space.dim_x, c.I, c.Ip, c.S, c.params);
  if (!P.traced.points.empty()) fit_canonical_chart(chart, P.traced);
  ThetaSplitting sp = identity ? identity_splitting(P.r.phi_xx.n_theta)
                               : compute_theta_splitting(P.r.phi_xx, P.crit_xx, 0, strict);
  return std::make_unique<AmplitudeEngine>(P.r.phi_xx, chart, sp, P.a_re_xx, P.a_im_xx, P.crit_xx.points,
                                           c.space.dim_m);
}

namespace {

struct EngineBuild {
  std::unique_ptr<AmplitudeEngine> engine;
  std::string error;
};

EngineBuild build_engine(Prepared& P, bool force, bool identity) {
  EngineBuild E;
  try {
    E.engine = make_amplitude_engine(P, !force, identity);
  } catch (const NotAChart& e) {
    E.error = std::string("NotAChart: ") + e.what();
  } catch (const std::exception& e) {
    E.error = e.what();
  }
  return E;
}

std::string error_name(const std::exception& e) {
  if (dynamic_cast<const UnboundedFiber*>(&e)) return "UnboundedFiber";
  if (dynamic_cast<const DegenerateHessian*>(&e)) return "DegenerateHessian";
  if (dynamic_cast<const StationaryFailure*>(&e)) return "StationaryFailure";
  if (dynamic_cast<const OracleTooLarge*>(&e)) return "OracleTooLarge";
  return "Error";
}

}  // namespace

AmplitudeRun run_amplitude(Prepared& P, const std::vector<VectorXd>& grid, PrefactorMode mode, bool force) {
  AmplitudeRun A;
  A.mode = mode;
  A.certified = P.exit_code == 0;
  if (!A.certified && !force) {
    A.exit_code = P.exit_code;
    return A;
  }
  auto E = build_engine(P, force, false);
  bool any_bad = false;
  for (auto& w : grid) {
    AmplitudeRow r;
    r.w = w;
    if (!E.engine) {
      r.status = E.error;
    } else {
      try {
        r.b = E.engine->leading_amplitude(w, mode);
        r.ok = true;
      } catch (const std::exception& e) {
        r.status = error_name(e) + ": " + e.what();
      }
    }
    any_bad |= !r.ok;
    A.rows.push_back(std::move(r));
  }
  A.exit_code = P.exit_code != 0 ? P.exit_code : any_bad ? 3 : 0;
  return A;
}

Table AmplitudeRun::table() const {
  Table T;
  int dim = rows.empty() ? 0 : (int)rows[0].w.size();
  T.header = w_header(dim);
  for (auto h : {"b0_re", "b0_im", "b0_abs", "b0_arg", "det_center", "signature", "fiber_diameter", "S",
                 "prefactor_mode", "certified", "status"})
    T.header.push_back(h);
  for (auto& r : rows) {
    std::vector<std::string> row;
    for (int i = 0; i < r.w.size(); ++i) row.push_back(shortest(r.w[i]));
    if (r.ok) {
      for (double v : {r.b.b0.real(), r.b.b0.imag(), std::abs(r.b.b0), std::arg(r.b.b0), r.b.det_center})
        row.push_back(shortest(v));
      row.push_back(std::to_string(r.b.signature));
      row.push_back(shortest(r.b.fiber_diameter));
      row.push_back(shortest(r.b.S));
    } else {
      for (int i = 0; i < 8; ++i) row.push_back("");
    }
    row.push_back(prefactor_name(mode));
    row.push_back(certified ? "certified" : "non-certified");
    row.push_back(r.status);
    T.rows.push_back(std::move(row));
  }
  return T;
}

// ---------------------------------------------------------------- oracle

namespace {

// x where the traced relation sends (x0, p0) under x' = x0, p' = p0
std::optional<double> predicted_center(Prepared& P, double x0, double p0) {
  const auto& ph = P.r.phi_xx;
  const auto& L = ph.layout;
  int sx = ph.base_slots[0], sxp = ph.primed_slots[0];
  std::vector<Expression> F = gradient(ph.phi, ph.theta_slots);
  F.push_back(Expression(ex::sub(ex::var(sxp), ex::num(x0)), L));
  Expression dxp = differentiate(ph.phi, sxp);
  F.push_back(dxp.with_root(ex::add(dxp.root(), ex::num(p0))));  // -d_x' phi = p0
  ExprField G(F, L);
  ExprField gam = gamma_field(ph);
  for (auto c : P.crit_xx.points) {
    double pp = gam.eval(c)[3];
    if (!(pp * p0 > 0)) continue;
    VectorXd z = c;
    for (int s : ph.theta_slots) z[s] *= p0 / pp;
    z[sxp] = x0;
    GNOptions o;
    o.tol = 1e-12;
    auto g = gauss_newton(G, z, o);
    if (g.converged && ph.in_cone(g.x)) return g.x[sx];
  }
  return std::nullopt;
}

}  // namespace

OracleRun run_oracle(Prepared& P, const std::string& quantity, const std::string& sweep, PrefactorMode mode,
                     bool force) {
  OracleRun O;
  O.quantity = quantity;
  O.certified = P.exit_code == 0;
  if (!O.certified && !force) {
    O.exit_code = P.exit_code;
    return O;
  }
  if (!P.have_phase) throw std::invalid_argument("oracles need a phase function");
  const auto& c = P.cfg;
  int k = c.space.dim_x;
  bool any_fail = false, any_inconclusive = false;
  if (quantity == "amplitude") {
    std::vector<VectorXd> ws;
    std::vector<double> lams;
    if (sweep.rfind("ray:", 0) == 0) {
      ws = parse_w_grid(sweep, 2 * k);
    } else {
      auto d = P.direction();
      if (d.empty()) throw std::invalid_argument("config has no oracle direction; use ray:DIR:LAMBDAS");
      for (double l : parse_reals(sweep)) ws.push_back(l * to_vec(d));
    }
    auto id = build_engine(P, force, true);
    auto lead = build_engine(P, force, false);
    for (auto& w : ws) {
      OracleRow r;
      r.inputs.assign(w.data(), w.data() + w.size());
      try {
        if (!id.engine) throw std::runtime_error(id.error);
        r.oracle = amplitude_oracle(*id.engine, w, c.quad);
        if (lead.engine) {
          r.derived = lead.engine->leading_amplitude(w, PrefactorMode::Derived).b0;
          r.paper = lead.engine->leading_amplitude(w, PrefactorMode::Paper).b0;
        }
        auto close = [&](const std::optional<cplx>& b) {
          return b && std::abs(*b) > 0 && std::abs(r.oracle.value / *b - 1.0) < 0.05;
        };
        bool d = close(r.derived), p = close(r.paper);
        if (std::abs(r.oracle.value) < 1e-12 && r.derived && std::abs(*r.derived) < 1e-12) r.verdict = "zero";
        else r.verdict = d && p ? "both" : d ? "derived" : p ? "paper" : "none";
        if (r.oracle.inconclusive) r.status = "inconclusive";
        else if (!r.oracle.halving_ok) r.status = "halving-check-failed";
      } catch (const std::exception& e) {
        r.status = error_name(e) + ": " + e.what();
        r.verdict = "skipped";
      }
      if (r.verdict == "none" || r.verdict == "both") any_fail = true;
      if (r.status != "ok") any_inconclusive = true;
      O.rows.push_back(std::move(r));
    }
    if (!O.rows.empty()) {
      auto v = O.rows.back().verdict;
      O.confirmed_mode = v == "derived" || v == "paper" ? v : "";
    }
    (void)mode;
  } else if (quantity == "trace_kernel") {
    for (auto& p : split_list(sweep, ';')) {
      if (trim(p).empty()) continue;
      auto v = parse_reals(p);
      if ((int)v.size() != 2 * k) throw std::invalid_argument("trace_kernel sweep: x,x' per point");
      OracleRow r;
      r.inputs = v;
      VectorXd x = to_vec(v).head(k), xp = to_vec(v).tail(k);
      try {
        r.oracle = trace_kernel_value(P.r.phi_xx, P.a_re_xx, P.a_im_xx, c.space.dim_m, x, xp, c.kernel_quad);
        r.verdict = "n/a";
        if (r.oracle.inconclusive) r.status = "inconclusive";
      } catch (const std::exception& e) {
        r.status = error_name(e) + ": " + e.what();
        r.verdict = "skipped";
      }
      if (r.status != "ok") any_inconclusive = true;
      O.rows.push_back(std::move(r));
    }
  } else if (quantity == "wavepacket") {
    if (k != 1) throw std::invalid_argument("wavepacket oracle needs dim X = 1");
    auto spec = c.quad;
    spec.halving_check = false;
    for (auto& p : split_list(sweep, ';')) {
      if (trim(p).empty()) continue;
      auto v = parse_reals(p);
      if (v.size() < 2 || v.size() > 3) throw std::invalid_argument("wavepacket sweep: x0,p0[,sigma] per packet");
      double x0 = v[0], p0 = v[1], sg = v.size() == 3 ? v[2] : c.packet_sigma;
      OracleRow r;
      r.inputs = {x0, p0, sg};
      try {
        auto pc = predicted_center(P, x0, p0);
        double mid = pc ? *pc : x0;
        std::vector<double> xs;
        for (int i = 0; i <= 30; ++i) xs.push_back(mid - 3 * sg + 6 * sg * i / 30.0);
        r.packet = wavepacket_operator_check(P.r.phi_xx, P.a_re_xx, P.a_im_xx, c.space.dim_m, x0, p0, sg,
                                             pc ? *pc : std::nan(""), xs, spec);
        if (pc) r.verdict = std::fabs(r.packet->output_center - *pc) < 0.05 ? "pass" : "fail";
        else r.verdict = r.packet->output_mass < 1e-3 * r.packet->input_mass ? "no-propagation" : "fail";
      } catch (const std::exception& e) {
        r.status = error_name(e) + ": " + e.what();
        r.verdict = "skipped";
      }
      if (r.verdict == "fail") any_fail = true;
      if (r.status != "ok") any_inconclusive = true;
      O.rows.push_back(std::move(r));
    }
  } else {
    throw std::invalid_argument("unknown oracle quantity '" + quantity + "' (amplitude, trace_kernel, wavepacket)");
  }
  O.exit_code = P.exit_code != 0 ? P.exit_code : any_fail ? 2 : any_inconclusive ? 3 : 0;
  return O;
}

Table OracleRun::table() const {
  Table T;
  auto cert = certified ? "certified" : "non-certified";
  auto cs = [](const std::optional<cplx>& z, std::vector<std::string>& row) {
    row.push_back(z ? shortest(z->real()) : "");
    row.push_back(z ? shortest(z->imag()) : "");
  };
  if (quantity == "amplitude") {
    int dim = rows.empty() ? 0 : (int)rows[0].inputs.size();
    T.header = w_header(dim);
    for (auto h : {"oracle_re", "oracle_im", "error_estimate", "halving_change", "derived_re", "derived_im",
                   "ratio_derived", "paper_re", "paper_im", "ratio_paper", "phase_diff", "verdict", "certified",
                   "status"})
      T.header.push_back(h);
    for (auto& r : rows) {
      std::vector<std::string> row;
      for (double v : r.inputs) row.push_back(shortest(v));
      bool have = r.verdict != "skipped";
      cs(have ? std::optional<cplx>(r.oracle.value) : std::nullopt, row);
      row.push_back(have ? shortest(r.oracle.error_estimate) : "");
      row.push_back(have ? shortest(r.oracle.halving_change) : "");
      auto ratio = [&](const std::optional<cplx>& b) {
        return have && b && std::abs(*b) > 0 ? shortest(std::abs(r.oracle.value / *b)) : std::string();
      };
      cs(r.derived, row);
      row.push_back(ratio(r.derived));
      cs(r.paper, row);
      row.push_back(ratio(r.paper));
      row.push_back(have && r.derived && std::abs(*r.derived) > 0 ? shortest(std::arg(r.oracle.value / *r.derived))
                                                                  : "");
      row.push_back(r.verdict);
      row.push_back(cert);
      row.push_back(r.status);
      T.rows.push_back(std::move(row));
    }
  } else if (quantity == "trace_kernel") {
    int k = rows.empty() ? 1 : (int)rows[0].inputs.size() / 2;
    for (int i = 1; i <= k; ++i) T.header.push_back("x" + std::to_string(i));
    for (int i = 1; i <= k; ++i) T.header.push_back("xp" + std::to_string(i));
    for (auto h : {"kernel_re", "kernel_im", "error_estimate", "eps_min", "kernel_eps_min_re", "kernel_eps_min_im",
                   "verdict", "certified", "status"})
      T.header.push_back(h);
    for (auto& r : rows) {
      std::vector<std::string> row;
      for (double v : r.inputs) row.push_back(shortest(v));
      bool have = r.verdict != "skipped";
      cs(have ? std::optional<cplx>(r.oracle.value) : std::nullopt, row);
      row.push_back(have ? shortest(r.oracle.error_estimate) : "");
      if (have && !r.oracle.epsilon_trace.empty()) {
        auto& [e, v] = r.oracle.epsilon_trace.back();
        row.push_back(shortest(e));
        cs(v, row);
      } else {
        row.insert(row.end(), 3, "");
      }
      row.push_back(r.verdict);
      row.push_back(cert);
      row.push_back(r.status);
      T.rows.push_back(std::move(row));
    }
  } else {
    T.header = {"x0", "p0", "sigma", "predicted_center", "output_center", "displacement", "input_mass",
                "output_mass", "verdict", "certified", "status"};
    for (auto& r : rows) {
      std::vector<std::string> row;
      for (double v : r.inputs) row.push_back(shortest(v));
      if (r.packet) {
        auto& W = *r.packet;
        row.push_back(std::isnan(W.predicted_center) ? "" : shortest(W.predicted_center));
        row.push_back(shortest(W.output_center));
        row.push_back(shortest(W.output_center - r.inputs[0]));
        row.push_back(shortest(W.input_mass));
        row.push_back(shortest(W.output_mass));
      } else {
        row.insert(row.end(), 5, "");
      }
      row.push_back(r.verdict);
      row.push_back(cert);
      row.push_back(r.status);
      T.rows.push_back(std::move(row));
    }
  }
  return T;
}

Table traced_table(const Prepared& P) {
  Table T;
  int k = P.cfg.space.dim_x;
  for (auto b : {"x", "p", "xp", "pp"})
    for (int i = 1; i <= k; ++i) T.header.push_back(std::string(b) + std::to_string(i));
  for (auto& z : P.traced.points) {
    std::vector<std::string> row;
    for (int i = 0; i < z.size(); ++i) row.push_back(shortest(z[i]));
    T.rows.push_back(std::move(row));
  }
  return T;
}

}  // namespace ftr
