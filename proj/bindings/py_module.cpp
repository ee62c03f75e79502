#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "metacal/consistency.hpp"
#include "metacal/corpus.hpp"
#include "metacal/errors.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/metrics.hpp"
#include "metacal/pipeline.hpp"
#include "metacal/stats.hpp"
#include "metacal/targets.hpp"

namespace py = pybind11;
using namespace metacal;

namespace {

py::object json_to_py(const Json& value) {
    return py::module_::import("json").attr("loads")(to_jsonl_line(value));
}

MetricSelector<ConfidenceReport> selector_for(const std::string& name, std::size_t bins) {
    if (name == "ece") {
        return [bins](const std::vector<ConfidenceReport>& r) { return ece(r, bins); };
    }
    if (name == "auc") {
        return [](const std::vector<ConfidenceReport>& r) { return auc(r); };
    }
    if (name == "accuracy") {
        return [](const std::vector<ConfidenceReport>& r) { return accuracy(r); };
    }
    throw ConfigError("unknown metric '" + name + "'; expected ece, auc, or accuracy");
}

std::vector<PairedSample<ConfidenceReport>> pair_reports(
    const std::vector<ConfidenceReport>& before, const std::vector<ConfidenceReport>& after) {
    std::unordered_map<std::string, const ConfidenceReport*> after_by_id;
    for (const ConfidenceReport& report : after) after_by_id[report.question_id] = &report;
    if (after_by_id.size() != after.size()) {
        throw ConfigError("after reports carry duplicate question ids");
    }
    std::vector<PairedSample<ConfidenceReport>> samples;
    samples.reserve(before.size());
    for (const ConfidenceReport& report : before) {
        const auto it = after_by_id.find(report.question_id);
        if (it == after_by_id.end()) {
            throw ConfigError("question '" + report.question_id +
                              "' is missing from the after condition");
        }
        samples.push_back({report.question_id, report, *it->second});
    }
    if (samples.size() != after.size()) {
        throw ConfigError("before and after conditions cover different question sets");
    }
    return samples;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Verbalized-confidence calibration toolkit (C++ core)";
    m.attr("__version__") = METACAL_VERSION;

    // Most-derived classes are registered last so their translators run
    // first and Python sees the precise type.
    py::register_exception<Error>(m, "Error");
    py::register_exception<ConfigError>(m, "ConfigError");
    py::register_exception<CorpusError>(m, "CorpusError");
    py::register_exception<DependencyError>(m, "DependencyError");
    py::register_exception<BackendError>(m, "BackendError");
    py::register_exception<MetricUndefinedError>(m, "MetricUndefinedError");

    py::class_<ConfidenceReport>(m, "ConfidenceReport")
        .def(py::init([](std::string question_id, double confidence, bool correct,
                         std::string answer) {
                 return ConfidenceReport{std::move(question_id), confidence, correct,
                                         std::move(answer)};
             }),
             py::arg("question_id"), py::arg("confidence"), py::arg("correct"),
             py::arg("answer") = std::string())
        .def_readwrite("question_id", &ConfidenceReport::question_id)
        .def_readwrite("confidence", &ConfidenceReport::confidence)
        .def_readwrite("correct", &ConfidenceReport::correct)
        .def_readwrite("answer", &ConfidenceReport::answer)
        .def("__repr__", [](const ConfidenceReport& r) {
            return "ConfidenceReport(question_id='" + r.question_id + "', confidence=" +
                   std::to_string(r.confidence) + ", correct=" + (r.correct ? "True" : "False") +
                   ")";
        });

    py::class_<ComparisonOutcome>(m, "ComparisonOutcome")
        .def(py::init([](std::string q1_id, std::string q2_id, const std::string& choice,
                         double s1, double s2, bool correct_q1, bool correct_q2) {
                 return ComparisonOutcome{std::move(q1_id),  std::move(q2_id),
                                          pair_choice_from_string(choice),
                                          s1,               s2,
                                          correct_q1,       correct_q2};
             }),
             py::arg("q1_id"), py::arg("q2_id"), py::arg("choice"), py::arg("s1"), py::arg("s2"),
             py::arg("correct_q1"), py::arg("correct_q2"))
        .def_readwrite("q1_id", &ComparisonOutcome::q1_id)
        .def_readwrite("q2_id", &ComparisonOutcome::q2_id)
        .def_property(
            "choice",
            [](const ComparisonOutcome& o) { return std::string(to_string(o.model_choice)); },
            [](ComparisonOutcome& o, const std::string& v) {
                o.model_choice = pair_choice_from_string(v);
            })
        .def_readwrite("s1", &ComparisonOutcome::s1)
        .def_readwrite("s2", &ComparisonOutcome::s2)
        .def_readwrite("correct_q1", &ComparisonOutcome::correct_q1)
        .def_readwrite("correct_q2", &ComparisonOutcome::correct_q2);

    m.def("accuracy", &accuracy, py::arg("reports"));
    m.def(
        "ece",
        [](const std::vector<ConfidenceReport>& reports, std::size_t bins) {
            return ece(reports, bins);
        },
        py::arg("reports"), py::arg("bins") = 11,
        "Expected calibration error over equal-width bins plus a singleton top bin.");
    m.def("auc", &auc, py::arg("reports"),
          "Probability a correct answer outranks an incorrect one (ties count half).");
    m.def("auc_c", &auc_c, py::arg("outcomes"),
          "Fraction of unequal-consistency pairs whose stated choice names the higher-s "
          "question.");
    m.def("auc_a", &auc_a, py::arg("outcomes"),
          "Fraction of exactly-one-correct pairs whose stated choice names the correct "
          "question.");
    m.def(
        "reliability_diagram",
        [](const std::vector<ConfidenceReport>& reports, std::size_t bins) {
            py::list rows;
            for (const DiagramRow& row : reliability_diagram(reports, bins)) {
                py::dict entry;
                entry["range"] = row.range;
                entry["count"] = row.count;
                entry["proportion"] = row.proportion;
                entry["accuracy"] = row.accuracy ? py::object(py::float_(*row.accuracy))
                                                 : py::object(py::none());
                entry["mean_confidence"] = row.mean_confidence
                                               ? py::object(py::float_(*row.mean_confidence))
                                               : py::object(py::none());
                rows.append(std::move(entry));
            }
            return rows;
        },
        py::arg("reports"), py::arg("bins") = 11);
    m.def(
        "metrics_report",
        [](const std::vector<ConfidenceReport>& reports,
           const std::vector<ComparisonOutcome>& outcomes, std::size_t bins) {
            return json_to_py(metrics_report_json(reports, outcomes, bins));
        },
        py::arg("reports"), py::arg("outcomes") = std::vector<ComparisonOutcome>{},
        py::arg("bins") = 11);

    m.def(
        "normalize_answer",
        [](const std::string& raw, const std::string& format) {
            return normalize_answer(raw, answer_format_from_string(format));
        },
        py::arg("raw"), py::arg("format"),
        "Canonical answer form for 'multiple_choice', 'numeric', or 'short_answer'.");
    m.def("format_single_target", &format_single_target, py::arg("answer"), py::arg("confidence"),
          "Renders the single-question SFT target sentence.");
    m.def("parse_single_target", &parse_single_target, py::arg("text"),
          "Inverse of format_single_target; returns (answer, confidence).");

    m.def(
        "paired_bootstrap",
        [](const std::vector<ConfidenceReport>& before,
           const std::vector<ConfidenceReport>& after, const std::string& metric,
           int resamples, double alpha, std::uint64_t seed, std::size_t bins) {
            const auto samples = pair_reports(before, after);
            const auto result = paired_bootstrap(samples, metric, selector_for(metric, bins),
                                                 resamples, alpha, seed);
            return json_to_py(bootstrap_result_to_json(result));
        },
        py::arg("before"), py::arg("after"), py::arg("metric") = "ece",
        py::arg("resamples") = 1000, py::arg("alpha") = 0.05, py::arg("seed") = 0,
        py::arg("bins") = 11,
        "Percentile-CI paired bootstrap of an ece/auc/accuracy difference, aligned on "
        "question_id.");

    m.def(
        "run_stage",
        [](const std::string& config_path, const std::string& stage,
           const std::optional<std::string>& out_dir, const std::optional<std::uint64_t>& seed,
           const std::optional<int>& parallelism, const std::optional<std::string>& backend) {
            RunConfig config = RunConfig::load(config_path);
            if (backend) config.backend = backend_kind_from_string(*backend);
            if (seed) config.seeds = derive_seeds(*seed);
            if (parallelism) config.parallelism = *parallelism;
            if (out_dir) config.out_dir = *out_dir;
            const Json manifest = run_stage(config, stage_from_string(stage));
            return json_to_py(manifest);
        },
        py::arg("config_path"), py::arg("stage"), py::arg("out_dir") = py::none(),
        py::arg("seed") = py::none(), py::arg("parallelism") = py::none(),
        py::arg("backend") = py::none(),
        "Runs one pipeline stage against a run config file and returns the updated manifest.");
    m.def("stage_names", [] {
        std::vector<std::string> names;
        for (Stage stage : all_stages()) names.emplace_back(to_string(stage));
        return names;
    });
}
