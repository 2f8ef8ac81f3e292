#pragma once
// scenario configs, builtins, and the check / amplitude / oracle pipelines

#include <memory>

#include "fiotrace/canonmod.hpp"
#include "fiotrace/oscquad.hpp"

namespace ftr {

struct ConfigError : std::runtime_error {
  std::string section;
  int line;
  ConfigError(const std::string& sec, int ln, const std::string& msg);
};

struct ScenarioConfig {
  std::string name = "custom";
  std::string description;
  EmbeddingChart space{2, 1};
  Params params;
  // exactly one Lagrangian source
  bool have_phase = false;
  std::string phase;  // over x, y, xp, yp, th
  int n_theta = 0;
  std::vector<std::string> cone;
  bool have_canonical = false;
  std::vector<std::string> forward, inverse;  // explicit map on T*M (x, y, p, q)
  std::vector<std::string> psi, psi_inverse;  // or a point transformation to lift
  // amplitude, symbol order
  std::string amp_re = "1", amp_im = "0";
  double amp_order = 0;
  // canonical chart on the trace
  std::vector<int> I, Ip;
  std::optional<std::string> S;
  // solver
  SeedSpec seeds;
  int lambda_samples = 40;
  double delta = 1e-3;
  int property_samples = 100;
  // quadrature
  MollifiedIntegralSpec quad;
  MollifiedIntegralSpec kernel_quad{{0.016, 0.008, 0.004, 0.002}, 3, false, 1024};
  // oracle defaults
  std::vector<std::string> direction;  // w direction for amplitude sweeps (expressions in the params)
  double packet_sigma = 0.5;

  int n_theta_effective() const { return have_phase ? n_theta : space.dim_m; }
  bool is_lift() const { return have_canonical && !psi.empty(); }
};

// parse and validate; every expression is parsed eagerly
ScenarioConfig load_config(const std::string& path);
ScenarioConfig parse_config(const std::string& text, const std::string& origin = "<string>");
void validate_config(const ScenarioConfig& cfg);
std::string to_ini(const ScenarioConfig& cfg);
// k=v overrides; unknown names are rejected
void apply_params(ScenarioConfig& cfg, const std::vector<std::string>& assignments);

struct BuiltinScenario {
  std::string name;
  std::string description;
  std::string expected;  // "pass" or the failing condition
  ScenarioConfig config;
  std::optional<ScenarioConfig> canonical;  // the same operator as a canonical map, when it is one
};
std::vector<std::string> builtin_names();
BuiltinScenario builtin_scenario(const std::string& name);

// the phase text generated for a lifted point transformation: sum (m_i - psi_i(m')) th_i
std::string lift_phase_text(const ScenarioConfig& cfg);

struct Prepared {
  ScenarioConfig cfg;
  unsigned long long seed = 0;
  std::mt19937_64 rng;
  bool have_phase = false;
  PhaseFunction ph;
  Expression amp_re, amp_im;
  PhaseValidation validation;
  CriticalManifold crit;
  RestrictedPhase r;
  Expression a_re_xx, a_im_xx;
  CriticalManifold crit_xx;
  LagrangianSource src;
  LambdaXX lxx;
  TracedLagrangian traced;
  std::optional<CanonicalMap> canonical;
  std::optional<CorollaryReport> corollary;
  double order_phi = 0;
  TraceReport report;
  bool inconclusive = false;
  int exit_code = 0;
  std::vector<double> direction() const;
};

// phase validation, critical sets, Lambda_XX, conditions 1-2, excess, order, window.
// exit codes: 0 pass, 2 condition failure, 3 inconclusive
std::unique_ptr<Prepared> run_check(const ScenarioConfig& cfg, unsigned long long seed);

// engine over the restricted phase and amplitude. identity: no theta splitting (the oracle form).
// strict: a vanishing theta' throws. throws NotAChart and friends.
std::unique_ptr<AmplitudeEngine> make_amplitude_engine(Prepared& P, bool strict = true, bool identity = false);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string to_csv() const;
};

std::vector<VectorXd> parse_w_grid(const std::string& spec, int dim);

struct AmplitudeRow {
  VectorXd w;
  LeadingAmplitude b;
  bool ok = false;
  std::string status = "ok";
};
struct AmplitudeRun {
  std::vector<AmplitudeRow> rows;
  bool certified = true;
  PrefactorMode mode = PrefactorMode::Derived;
  int exit_code = 0;
  Table table() const;
};
// requires a passing check unless force; per-point failures are recorded in the row
AmplitudeRun run_amplitude(Prepared& P, const std::vector<VectorXd>& grid, PrefactorMode mode, bool force);

struct OracleRow {
  std::vector<double> inputs;
  OracleResult oracle;
  std::optional<cplx> derived, paper;  // amplitude predictions
  std::optional<WavepacketResult> packet;
  std::string verdict;
  std::string status = "ok";
};
struct OracleRun {
  std::string quantity;
  std::vector<OracleRow> rows;
  std::string confirmed_mode;  // amplitude sweeps: the prefactor the last row selects
  bool certified = true;
  int exit_code = 0;
  Table table() const;
};
// quantity: amplitude (sweep: lambdas along the config direction, or ray:DIR:LAMBDAS),
// trace_kernel (sweep: x,x';...), wavepacket (sweep: x0,p0[,sigma];...)
OracleRun run_oracle(Prepared& P, const std::string& quantity, const std::string& sweep, PrefactorMode mode,
                     bool force);

// the traced Lagrangian samples (x, p, x', p')
Table traced_table(const Prepared& P);

}  // namespace ftr
