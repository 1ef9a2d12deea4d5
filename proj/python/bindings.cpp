#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "csrec/distill.hpp"
#include "csrec/error.hpp"
#include "csrec/metrics.hpp"
#include "csrec/runner.hpp"
#include "csrec/synthbench.hpp"
#include "csrec/teacher.hpp"

namespace py = pybind11;
using namespace csrec;

namespace {

runner::ExperimentConfig parse_config(const std::string& text) {
  return runner::ExperimentConfig::from_json(runner::Json::parse(text));
}

std::vector<metrics::RankResult> results_from(const std::vector<int>& ranks,
                                              const std::optional<std::vector<double>>& ratings) {
  if (ratings && ratings->size() != ranks.size())
    throw Error(ErrorKind::Shape, "ranks and ratings differ in length");
  std::vector<metrics::RankResult> out(ranks.size());
  for (std::size_t k = 0; k < ranks.size(); ++k) {
    out[k].rank = ranks[k];
    if (ratings) out[k].target_rating = (*ratings)[k];
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_csrec, m) {
  m.doc() = "Sequential recommendation with denoising teachers and soft-label distillation";

  static py::exception<Error> error(m, "CsrecError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const std::string message = std::string(to_string(e.kind())) + ": " + e.what();
      py::object instance = py::handle(error.ptr())(message);
      instance.attr("kind") = to_string(e.kind());
      instance.attr("exit_code") = exit_code_for(e.kind());
      PyErr_SetObject(error.ptr(), instance.ptr());
    }
  });

  m.def("soft_labels", &distill::make_soft_labels, py::arg("teacher_logits"), py::arg("target"),
        py::arg("temperature"), "Half teacher softmax at the temperature, half one-hot at the 1-based target.");
  m.def(
      "student_loss",
      [](const RowVector& logits, ItemId target, const RowVector& soft_label, double beta) {
        return distill::student_loss(logits, target, soft_label, beta);
      },
      py::arg("student_logits"), py::arg("target"), py::arg("soft_label"), py::arg("beta"));
  m.def("kl_divergence", &teacher::kl_divergence, py::arg("p"), py::arg("q"));

  m.def(
      "recall_at_n", [](const std::vector<int>& ranks, int n) { return metrics::recall_at_n(results_from(ranks, {}), n); },
      py::arg("ranks"), py::arg("n"));
  m.def(
      "ndcg_at_n", [](const std::vector<int>& ranks, int n) { return metrics::ndcg_at_n(results_from(ranks, {}), n); },
      py::arg("ranks"), py::arg("n"));
  m.def(
      "filtered_metrics",
      [](const std::vector<int>& ranks, const std::vector<double>& ratings, int n, double delta) {
        const auto f = metrics::filtered_metrics(results_from(ranks, ratings), n, delta);
        return py::make_tuple(f.recall, f.ndcg, f.qualifying);
      },
      py::arg("ranks"), py::arg("ratings"), py::arg("n"), py::arg("delta") = 4.0);
  m.def(
      "report_csv", [](const std::string& report_json) { return metrics::report_csv(metrics::report_from_json(report_json)); },
      py::arg("report_json"), "Flat CSV mirror of a report JSON document.");

  m.def(
      "generate_log",
      [](const std::string& spec_json) { return synthbench::generate(synthbench::spec_from_json(spec_json)).log_text; },
      py::arg("spec_json"), "Tab-separated interaction log of a synthetic world.");

  // Experiment stages take the configuration as JSON text.
  m.def(
      "normalize_config", [](const std::string& text) { return parse_config(text).to_json().dump(); },
      py::arg("config_json"));
  m.def(
      "prepare", [](const std::string& text) { return runner::cmd_prepare(parse_config(text)).stats.dump(); },
      py::arg("config_json"));
  m.def(
      "train",
      [](const std::string& text) {
        const auto summary = runner::cmd_train(parse_config(text));
        const auto rows = [](const std::vector<runner::StageRun>& runs) {
          py::list out;
          for (const auto& r : runs) {
            py::dict d;
            d["seed"] = r.seed;
            d["dir"] = r.dir.string();
            d["skipped"] = r.skipped;
            d["fits"] = r.fits;
            out.append(d);
          }
          return out;
        };
        py::dict d;
        d["teachers"] = rows(summary.teachers);
        d["students"] = rows(summary.students);
        return d;
      },
      py::arg("config_json"));
  m.def(
      "evaluate",
      [](const std::string& text) {
        const auto summary = runner::cmd_evaluate(parse_config(text));
        return py::make_tuple(summary.dir.string(), metrics::report_json(summary.report));
      },
      py::arg("config_json"), "Returns the report directory and the aggregated report JSON.");
  m.def(
      "ablate",
      [](const std::string& text, const std::string& sweep, std::vector<std::string> values) {
        const auto summary = runner::cmd_ablate(parse_config(text), runner::sweep_from_string(sweep), std::move(values));
        py::list failures;
        for (const auto& [value, message] : summary.failures) failures.append(py::make_tuple(value, message));
        return py::make_tuple(summary.csv_path.string(), failures);
      },
      py::arg("config_json"), py::arg("sweep"), py::arg("values") = std::vector<std::string>{});
  m.def(
      "report_table", [](const std::string& text) { return runner::cmd_report(parse_config(text)); },
      py::arg("config_json"));
}
