#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "scone/config.hpp"
#include "scone/errors.hpp"
#include "scone/eval.hpp"
#include "scone/experiment.hpp"
#include "scone/gradcheck.hpp"
#include "scone/model.hpp"
#include "scone/objective.hpp"
#include "scone/propcheck.hpp"

namespace py = pybind11;
using namespace scone;

namespace {

RunConfig config_from(const py::dict& settings, std::optional<std::string> kind) {
  Settings s;
  for (const auto& [k, v] : settings) {
    std::string value;
    if (py::isinstance<py::bool_>(v)) value = v.cast<bool>() ? "true" : "false";
    else if (py::isinstance<py::list>(v) || py::isinstance<py::tuple>(v)) {
      for (const auto& e : v) value += (value.empty() ? "" : ",") + py::str(e).cast<std::string>();
    } else value = py::str(v).cast<std::string>();
    s.emplace_back(py::str(k).cast<std::string>(), value);
  }
  std::optional<RunKind> k;
  if (kind) k = parse_run_kind(*kind);
  return build_config(s, k);
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["id_acc"] = r.id_acc;
  d["ood_acc"] = r.ood_acc;
  d["fpr95"] = r.fpr95;
  d["auroc"] = r.auroc;
  d["out_frac"] = r.out_frac;
  d["threshold"] = r.threshold;
  return d;
}

}  // namespace

PYBIND11_MODULE(_scone, m) {
  m.doc() = "Margin-constrained joint OOD generalization and detection";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ArithmeticError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

  py::class_<MlpModel>(m, "MlpModel")
      .def_readonly("layer_dims", &MlpModel::layer_dims)
      .def_readwrite("ood_scale", &MlpModel::ood_scale)
      .def_property_readonly("activation", [](const MlpModel& x) { return std::string(activation_name(x.activation)); })
      .def("parameter_count", &MlpModel::parameter_count)
      .def("flat_parameters", &MlpModel::flat_parameters)
      .def("set_flat_parameters", [](MlpModel& x, const std::vector<double>& p) { x.set_flat_parameters(p); })
      .def("logits", [](const MlpModel& x, const Vector& v) { return logits(x, v); })
      .def("energy", [](const MlpModel& x, const Vector& v) { return energy(logits(x, v)); })
      .def("predict", [](const MlpModel& x, const Vector& v) { return predict(logits(x, v)); })
      .def("save", [](const MlpModel& x, const std::string& path) { save_model(path, x); })
      .def("dumps", [](const MlpModel& x) { std::ostringstream s; save_model(s, x); return s.str(); })
      .def(py::self == py::self);

  m.def("init_model", [](std::vector<std::size_t> dims, const std::string& act, std::uint64_t seed) {
        return init_model(std::move(dims), parse_activation(act), seed);
      }, py::arg("layer_dims"), py::arg("activation") = "tanh", py::arg("seed") = 0);
  m.def("load_model", py::overload_cast<const std::string&>(&load_model), py::arg("path"));

  m.def("energy", [](const std::vector<double>& f) { return energy(f); }, py::arg("logits"));
  m.def("detect", [](double e, double t) { return detect(e, {t}) == Decision::Out ? "out" : "in"; },
        py::arg("energy"), py::arg("threshold") = 0.0);
  m.def("loss_cls", [](const std::vector<double>& f, std::size_t y) { return loss_cls(f, y); }, py::arg("logits"),
        py::arg("label"));

  m.def("auroc", [](const std::vector<double>& a, const std::vector<double>& b) { return auroc(a, b); },
        py::arg("id_energies"), py::arg("ood_energies"));
  m.def("fpr_at_tpr", [](const std::vector<double>& a, const std::vector<double>& b, double tpr) {
        return fpr_at_tpr(a, b, tpr);
      }, py::arg("id_energies"), py::arg("ood_energies"), py::arg("tpr") = 0.95);
  m.def("select_margin", [](const std::vector<double>& etas, const std::vector<double>& out) {
        return select_margin(MarginGrid{etas, out});
      }, py::arg("etas"), py::arg("out_fracs"));

  m.def("gen_synthetic", [](std::size_t n_per_class, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.n_per_class = n_per_class;
        const SyntheticData d = gen_synthetic(spec, seed);
        py::dict out;
        out["id_x"] = d.id.xs;
        out["id_y"] = d.id.ys;
        out["cov_x"] = d.cov.xs;
        out["cov_y"] = d.cov.ys;
        out["sem_x"] = d.sem;
        return out;
      }, py::arg("n_per_class") = 500, py::arg("seed") = 0);

  m.def("config_echo", [](const py::dict& settings, std::optional<std::string> kind) {
        return echo_config(config_from(settings, kind));
      }, py::arg("settings") = py::dict(), py::arg("kind") = py::none());

  m.def("train", [](const py::dict& settings, std::optional<double> eta) {
        const RunConfig cfg = config_from(settings, std::nullopt);
        const ExperimentData data = prepare_data(cfg);
        RunOutcome r;
        {
          py::gil_scoped_release release;
          r = run_training(cfg, data, eta.value_or(cfg.constraints.eta), cfg.seed);
        }
        py::dict out;
        out["eta"] = r.eta;
        out["diverged"] = r.diverged;
        out["error"] = r.error;
        out["metrics"] = report_dict(r.report);
        out["tau"] = r.history.tau;
        out["model"] = r.model ? py::cast(*r.model) : py::none();
        return out;
      }, py::arg("settings") = py::dict(), py::arg("eta") = py::none(),
      "Trains one model on the configured data and returns metrics and the model.");

  m.def("run", [](const py::dict& settings, const std::string& kind) {
        const RunConfig cfg = config_from(settings, kind);
        std::filesystem::path dir;
        ExitCode code;
        {
          py::gil_scoped_release release;
          switch (cfg.kind) {
            case RunKind::MarginSweep: code = execute_sweep(cfg, &dir); break;
            case RunKind::Propcheck: code = execute_propcheck(cfg, &dir); break;
            case RunKind::Gradcheck: code = execute_gradcheck(cfg, &dir); break;
            default: code = execute_run(cfg, &dir);
          }
        }
        return py::make_tuple(static_cast<int>(code), dir);
      }, py::arg("settings") = py::dict(), py::arg("kind") = "synth",
      "Runs like the CLI and returns (exit_code, run_dir).");

  m.def("gradcheck", [](std::uint64_t seed, std::size_t models) { return run_gradcheck(seed, models).max_rel_error(); },
        py::arg("seed") = 0, py::arg("models") = 20);

  m.def("two_class_energy", &prop::two_class_energy, py::arg("fbar"));
  m.def("eta_bound", &prop::eta_bound, py::arg("lipschitz"), py::arg("delta"));
  m.def("check_linear_case", [](double L, double delta, double eta) {
        return prop::to_json(prop::verify_proposition(linear_case(L, delta, eta)));
      }, py::arg("lipschitz") = 1.0, py::arg("delta") = 0.2, py::arg("eta") = -1.0,
      "Proposition report for the analytic linear case, as JSON.");
}
