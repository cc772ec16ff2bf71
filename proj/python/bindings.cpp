#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "repairlab/config.hpp"
#include "repairlab/jsonl.hpp"
#include "repairlab/metrics.hpp"
#include "repairlab/pipeline.hpp"
#include "repairlab/reward.hpp"
#include "repairlab/rllf.hpp"
#include "repairlab/toy_family.hpp"
#include "repairlab/verifier.hpp"

namespace py = pybind11;
using namespace repairlab;

namespace {

// JSON crosses the boundary as text through the json module.
py::object to_py(const Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
Json from_py(const py::handle& o) { return Json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

py::object verify(const py::dict& task, const std::string& candidate, const std::string& toyexpr) {
  const Verifier v(toy_verifier_config(toyexpr.empty() ? default_toyexpr_path() : toyexpr));
  return to_py(to_json(v.validate(task_from_json(from_py(task)), candidate)));
}

class PyPipeline {
 public:
  PyPipeline(const std::filesystem::path& config_path, const py::dict& overrides) {
    Json j = Json::parse(read_file(config_path));
    j.merge_patch(from_py(overrides));
    pipeline_ = std::make_unique<Pipeline>(config_from_json(j, config_path.parent_path()));
  }

  bool run_stage(const std::string& name) {
    py::gil_scoped_release release;
    return pipeline_->run_stage(parse_stage(name));
  }
  void run_all() {
    py::gil_scoped_release release;
    pipeline_->run_all();
  }
  py::object manifest() const { return to_py(pipeline_->manifest().to_json()); }
  py::object metrics() const { return to_py(Json::parse(read_file(pipeline_->artifact("metrics.json")))); }
  std::filesystem::path output_dir() const { return pipeline_->config().output_dir; }
  std::uint64_t teacher_calls() const { return pipeline_->teacher_calls(); }

 private:
  std::unique_ptr<Pipeline> pipeline_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Teacher-guided program-repair training pipeline (C++ core).";

  static py::exception<Error> base_error(m, "RepairlabError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      base_error(e.what());
    }
  });

  m.def("pass_at_k", &pass_at_k, py::arg("n"), py::arg("c"), py::arg("k"));
  m.def("bleu", &bleu, py::arg("candidate"), py::arg("references"), py::arg("max_n") = 4);
  m.def(
      "performance_gap",
      [](const std::string& metric, const std::vector<double>& a, const std::vector<double>& b) {
        return to_py(performance_gap(metric, a, b).to_json());
      },
      py::arg("metric_name"), py::arg("scores_a"), py::arg("scores_b"));

  m.def(
      "td_errors",
      [](const std::vector<double>& r, const std::vector<double>& v, double gamma) { return td_errors(r, v, gamma); },
      py::arg("rewards"), py::arg("values"), py::arg("gamma"));
  m.def(
      "gae", [](const std::vector<double>& d, double gamma, double lambda) { return gae(d, gamma, lambda); },
      py::arg("deltas"), py::arg("gamma"), py::arg("lam"));
  m.def(
      "ppo_clip_objective",
      [](const std::vector<double>& r, const std::vector<double>& a, double eps) { return ppo_clip_objective(r, a, eps); },
      py::arg("ratios"), py::arg("advantages"), py::arg("epsilon") = 0.2);
  m.def(
      "kl_estimate",
      [](const std::vector<double>& lp, const std::vector<double>& lq) { return kl_estimate(lp, lq); },
      py::arg("logp_theta"), py::arg("logp_ref"));
  m.def("pref_prob", &pref_prob, py::arg("score_a"), py::arg("score_b"));

  m.def(
      "toy_tasks",
      [] {
        py::list out;
        for (const auto& t : make_toy_tasks()) out.append(to_py(to_json(t)));
        return out;
      },
      "The bundled 20-task toy repair family.");
  m.def("verify", &verify, py::arg("task"), py::arg("candidate"), py::arg("toyexpr") = "",
        "Runs a candidate against a toy task's tests and returns the verification report.");

  py::class_<PyPipeline>(m, "Pipeline")
      .def(py::init<const std::filesystem::path&, const py::dict&>(), py::arg("config"),
           py::arg("overrides") = py::dict())
      .def("run_stage", &PyPipeline::run_stage, py::arg("name"))
      .def("run_all", &PyPipeline::run_all)
      .def("manifest", &PyPipeline::manifest)
      .def("metrics", &PyPipeline::metrics)
      .def_property_readonly("output_dir", &PyPipeline::output_dir)
      .def_property_readonly("teacher_calls", &PyPipeline::teacher_calls);
}
