// fiotrace: check / trace / amplitude / oracle / list-scenarios
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "fiotrace/scenario.hpp"

using namespace ftr;
namespace fs = std::filesystem;

namespace {

struct Source {
  std::string config, scenario;
  std::vector<std::string> params;
  bool canonical = false;
};

void add_source(CLI::App* sub, Source& s) {
  auto* c = sub->add_option("--config", s.config, "scenario config file (INI)");
  auto* n = sub->add_option("--scenario", s.scenario, "builtin scenario name");
  c->excludes(n);
  sub->add_option("--param", s.params, "parameter override k=v (repeatable)");
  sub->add_flag("--canonical", s.canonical, "use the builtin's canonical-map form");
}

ScenarioConfig resolve(const Source& s) {
  ScenarioConfig c;
  if (!s.config.empty()) {
    c = load_config(s.config);
  } else if (!s.scenario.empty()) {
    auto B = builtin_scenario(s.scenario);
    if (s.canonical) {
      if (!B.canonical) throw std::invalid_argument("scenario '" + s.scenario + "' has no canonical form");
      c = *B.canonical;
    } else {
      c = B.config;
    }
  } else {
    throw std::invalid_argument("give --config FILE or --scenario NAME");
  }
  if (!s.params.empty()) apply_params(c, s.params);
  return c;
}

void emit(const std::string& out_dir, const std::string& file, const std::string& text) {
  if (out_dir.empty()) {
    std::cout << text;
    return;
  }
  fs::create_directories(out_dir);
  auto p = fs::path(out_dir) / file;
  std::ofstream f(p, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + p.string());
  std::cerr << "wrote " << p.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"traces of Fourier integral operators on submanifolds"};
  app.require_subcommand(1);
  app.fallthrough();
  unsigned long long seed = 1;
  bool force = false;
  std::string out, prefactor = "derived";
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_flag("--force", force, "compute amplitudes / oracles even when the check fails (non-certified)");
  app.add_option("--out", out, "output directory for CSV files (default: stdout)");
  app.add_option("--prefactor", prefactor, "prefactor convention")
      ->check(CLI::IsMember({"derived", "paper"}))
      ->capture_default_str();

  Source src;
  auto* check = app.add_subcommand("check", "verify the trace hypotheses");
  add_source(check, src);
  auto* trace = app.add_subcommand("trace", "sample the traced Lagrangian");
  add_source(trace, src);
  std::string wgrid;
  auto* amp = app.add_subcommand("amplitude", "leading amplitude on a grid of chart points");
  add_source(amp, src);
  amp->add_option("--w-grid", wgrid, "'a1,a2;b1,b2', 'ray:DIR:L1,L2,..' or 'line:A:B:N'")->required();
  std::string quantity, sweep;
  auto* orc = app.add_subcommand("oracle", "brute-force quadrature cross-check");
  add_source(orc, src);
  orc->add_option("--quantity", quantity, "amplitude | trace_kernel | wavepacket")
      ->required()
      ->check(CLI::IsMember({"amplitude", "trace_kernel", "wavepacket"}));
  orc->add_option("--sweep", sweep, "amplitude: L1,L2,..; trace_kernel: x,x';..; wavepacket: x0,p0[,sigma];..")
      ->required();
  auto* list = app.add_subcommand("list-scenarios", "list the builtin scenarios");
  bool show_ini = false;
  list->add_flag("--ini", show_ini, "print each builtin as a config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    auto mode = parse_prefactor(prefactor);
    if (list->parsed()) {
      for (auto& n : builtin_names()) {
        auto B = builtin_scenario(n);
        if (show_ini) {
          std::cout << "# " << n << "\n" << to_ini(B.config) << "\n";
          continue;
        }
        std::cout << n << "\t" << B.expected << (B.canonical ? "\tcanonical" : "") << "\t" << B.description << "\n";
      }
      return 0;
    }
    auto cfg = resolve(src);
    auto P = run_check(cfg, seed);
    std::cerr << P->report.to_text();
    if (check->parsed()) {
      if (!out.empty()) emit(out, "check.csv", P->report.to_csv());
      return P->exit_code;
    }
    if (trace->parsed()) {
      if (P->exit_code != 0 && !force) return P->exit_code;
      emit(out, "traced.csv", traced_table(*P).to_csv());
      return P->exit_code;
    }
    if (amp->parsed()) {
      auto grid = parse_w_grid(wgrid, 2 * cfg.space.dim_x);
      auto A = run_amplitude(*P, grid, mode, force);
      if (!A.rows.empty()) emit(out, "amplitude.csv", A.table().to_csv());
      else std::cerr << "check failed; no amplitudes computed (use --force for non-certified values)\n";
      return A.exit_code;
    }
    if (orc->parsed()) {
      auto O = run_oracle(*P, quantity, sweep, mode, force);
      if (!O.rows.empty()) emit(out, "oracle_" + quantity + ".csv", O.table().to_csv());
      else std::cerr << "check failed; oracle not run (use --force for non-certified values)\n";
      if (!O.confirmed_mode.empty()) std::cerr << "oracle confirms prefactor: " << O.confirmed_mode << "\n";
      return O.exit_code;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
