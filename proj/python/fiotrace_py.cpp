#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fiotrace/scenario.hpp"

namespace py = pybind11;
using namespace ftr;

namespace {

std::vector<std::string> assignments(const std::map<std::string, double>& params) {
  std::vector<std::string> a;
  for (auto& [k, v] : params) a.push_back(k + "=" + shortest(v));
  return a;
}

ScenarioConfig builtin(const std::string& name, bool canonical) {
  auto B = builtin_scenario(name);
  if (!canonical) return B.config;
  if (!B.canonical) throw std::invalid_argument("scenario '" + name + "' has no canonical form");
  return *B.canonical;
}

std::shared_ptr<Prepared> check_cfg(ScenarioConfig c, const std::map<std::string, double>& params,
                                    unsigned long long seed) {
  if (!params.empty()) apply_params(c, assignments(params));
  py::gil_scoped_release nogil;
  return std::shared_ptr<Prepared>(run_check(c, seed));
}

}  // namespace

PYBIND11_MODULE(_fiotrace, m) {
  m.doc() = "traces of Fourier integral operators on submanifolds";
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("builtin_names", &builtin_names);
  m.def(
      "scenario_ini", [](const std::string& n, bool canonical) { return to_ini(builtin(n, canonical)); },
      py::arg("name"), py::arg("canonical") = false);
  m.def("normalize_ini", [](const std::string& text) { return to_ini(parse_config(text)); });

  py::class_<Prepared, std::shared_ptr<Prepared>>(m, "Check")
      .def_readonly("exit_code", &Prepared::exit_code)
      .def_readonly("inconclusive", &Prepared::inconclusive)
      .def_property_readonly("passed", [](const Prepared& P) { return P.report.pass(); })
      .def_property_readonly("condition1", [](const Prepared& P) { return P.report.condition1.pass(); })
      .def_property_readonly("condition2", [](const Prepared& P) { return P.report.condition2.pass(); })
      .def_property_readonly("g_min", [](const Prepared& P) { return P.report.condition2.g_min; })
      .def_property_readonly("tangent_gap", [](const Prepared& P) { return P.report.condition1.clean.tangent_gap; })
      .def_property_readonly("dim_lambda_xx", [](const Prepared& P) { return P.report.dim_lambda_xx; })
      .def_property_readonly("excess", [](const Prepared& P) { return P.report.excess_e; })
      .def_property_readonly("order", [](const Prepared& P) { return P.report.order_phi; })
      .def_property_readonly("traced_order", [](const Prepared& P) { return P.report.traced_order; })
      .def_property_readonly("notes", [](const Prepared& P) { return P.report.notes; })
      .def_property_readonly("report", [](const Prepared& P) { return P.report.to_text(); })
      .def_property_readonly("csv", [](const Prepared& P) { return P.report.to_csv(); })
      .def_property_readonly("traced_points", [](const Prepared& P) { return P.traced.points; })
      .def(
          "amplitude",
          [](Prepared& P, const std::vector<Eigen::VectorXd>& ws, const std::string& prefactor, bool force) {
            std::vector<std::optional<cplx>> out;
            auto A = run_amplitude(P, ws, parse_prefactor(prefactor), force);
            if (A.rows.empty()) throw std::runtime_error("check failed; pass force=True for non-certified values");
            for (auto& r : A.rows) out.push_back(r.ok ? std::optional<cplx>(r.b.b0) : std::nullopt);
            return out;
          },
          py::arg("w"), py::arg("prefactor") = "derived", py::arg("force") = false,
          "leading amplitude b0 at chart points w; None where a point fails")
      .def(
          "amplitude_csv",
          [](Prepared& P, const std::string& grid, const std::string& prefactor, bool force) {
            auto A = run_amplitude(P, parse_w_grid(grid, 2 * P.cfg.space.dim_x), parse_prefactor(prefactor), force);
            return py::make_tuple(A.exit_code, A.table().to_csv());
          },
          py::arg("grid"), py::arg("prefactor") = "derived", py::arg("force") = false)
      .def(
          "oracle",
          [](Prepared& P, const std::string& quantity, const std::string& sweep, bool force) {
            OracleRun O;
            {
              py::gil_scoped_release nogil;
              O = run_oracle(P, quantity, sweep, PrefactorMode::Derived, force);
            }
            py::dict d;
            d["exit_code"] = O.exit_code;
            d["confirmed_mode"] = O.confirmed_mode;
            d["csv"] = O.table().to_csv();
            py::list vals;
            for (auto& r : O.rows) vals.append(r.oracle.value);
            d["values"] = vals;
            return d;
          },
          py::arg("quantity"), py::arg("sweep"), py::arg("force") = false);

  m.def(
      "check_scenario",
      [](const std::string& name, unsigned long long seed, const std::map<std::string, double>& params,
         bool canonical) { return check_cfg(builtin(name, canonical), params, seed); },
      py::arg("name"), py::arg("seed") = 1, py::arg("params") = std::map<std::string, double>{},
      py::arg("canonical") = false);
  m.def(
      "check_config",
      [](const std::string& text, unsigned long long seed, const std::map<std::string, double>& params) {
        return check_cfg(parse_config(text), params, seed);
      },
      py::arg("text"), py::arg("seed") = 1, py::arg("params") = std::map<std::string, double>{});
}
