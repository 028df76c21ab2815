#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fbsde/errors.hpp"
#include "fbsde/experiment.hpp"
#include "fbsde/lp_lab.hpp"
#include "fbsde/table_io.hpp"

namespace py = pybind11;
using namespace fbsde;

PYBIND11_MODULE(_core, m) {
  m.doc() = "fully coupled FBSDE numerical lab";
  m.attr("ARTIFACT_VERSION") = std::string(kArtifactVersion);

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base.ptr());
  py::register_exception<PicardDivergence>(m, "PicardDivergence", numerical.ptr());
  py::register_exception<NonFiniteState>(m, "NonFiniteState", numerical.ptr());
  py::register_exception<CoefficientEvaluationError>(m, "CoefficientEvaluationError", numerical.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());

  // Documents cross the boundary as JSON text; the package wraps them.
  m.def("canonical_config", [](const std::string& doc) { return emit_config(parse_config(doc)); },
        py::arg("document"), "Validated config with every default filled in, as JSON text.");

  m.def(
      "run_experiment",
      [](const std::string& doc, const std::optional<std::string>& output_dir) {
        auto cfg = parse_config(doc);
        if (output_dir) cfg.output_dir = *output_dir;
        RunReport rep;
        {
          py::gil_scoped_release release;
          rep = run_experiment(cfg);
        }
        return rep.document.dump();
      },
      py::arg("document"), py::arg("output_dir") = py::none(), "Runs an experiment; returns report.json text.");

  m.def(
      "read_table",
      [](const std::string& path) {
        const auto t = fbsde::read_table(path);
        return py::make_tuple(t.header, t.rows);
      },
      py::arg("path"));

  m.def(
      "compute_kp",
      [](double p, std::optional<double> bdg_upper, std::optional<double> bdg_lower) {
        auto in = KpInputs::with_default_constants(p);
        if (bdg_upper) in.bdg_upper = *bdg_upper;
        if (bdg_lower) in.bdg_lower = *bdg_lower;
        return compute_kp(in);
      },
      py::arg("p"), py::arg("bdg_upper") = py::none(), py::arg("bdg_lower") = py::none());

  m.def(
      "smallness_gates",
      [](double K_p, double L_sigma, double K, std::optional<double> sqrt_C1) {
        const auto g = fbsde::smallness_gates(K_p, L_sigma, K, sqrt_C1);
        py::dict d;
        d["h51_product"] = g.h51_product;
        d["h51"] = g.h51;
        d["theorem51_product"] = g.theorem51_product;
        d["theorem51"] = g.theorem51;
        return d;
      },
      py::arg("K_p"), py::arg("L_sigma"), py::arg("K"), py::arg("sqrt_C1") = py::none());

  m.def(
      "audit_constant_growth",
      [](double C1, double p, int k) {
        const auto a = fbsde::audit_constant_growth(C1, p, k);
        return py::make_tuple(a.value, a.saturated);
      },
      py::arg("C1"), py::arg("p"), py::arg("k"));
}
