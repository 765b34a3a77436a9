#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "json.hpp"

#include "gpuvm/experiment.hpp"

namespace py = pybind11;
using namespace gpuvm;

namespace {

ExperimentConfig config_from_json(const std::string& text) {
    Settings s = default_settings();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    merge_json_settings(s, j);
    return config_from_settings(s);
}

std::vector<MetricsReport> reports_from_json(const std::string& text) {
    std::vector<MetricsReport> out;
    for (const auto& r : nlohmann::ordered_json::parse(text)) out.push_back(report_from_json(r));
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Discrete-event simulator for GPU-driven paging over RDMA";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<StallError>(m, "StallError", PyExc_RuntimeError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);

    m.attr("SCHEMA_VERSION") = kSchemaVersion;

    m.def("config_keys", &config_keys);
    m.def("default_settings", &default_settings);
    m.def(
        "resolve_config", [](const std::string& cfg) { return config_echo(config_from_json(cfg)).dump(); },
        py::arg("config_json"));
    m.def(
        "run_json",
        [](const std::string& cfg) {
            auto c = config_from_json(cfg);
            py::gil_scoped_release release;
            return emit_report(run_experiment(c), Format::JSON);
        },
        py::arg("config_json"));
    m.def(
        "sweep_json",
        [](const std::string& cfg, const std::string& axis, const std::vector<double>& values, unsigned threads) {
            auto c = config_from_json(cfg);
            auto a = parse_axis(axis);
            py::gil_scoped_release release;
            return emit_report(sweep(c, a, values, threads), Format::JSON);
        },
        py::arg("config_json"), py::arg("axis"), py::arg("values"), py::arg("threads") = 0);
    m.def(
        "report_csv", [](const std::string& reports) { return emit_report(reports_from_json(reports), Format::CSV); },
        py::arg("reports_json"));
    m.def(
        "compare_json",
        [](const std::string& reports, const std::string& baseline) {
            nlohmann::ordered_json out = nlohmann::ordered_json::array();
            for (const auto& row : compare(reports_from_json(reports), baseline))
                out.push_back({{"mode", row.mode},
                               {"workload", row.workload},
                               {"kernel_time_ns", row.kernel_time_ns},
                               {"setup_time_ns", row.setup_time_ns},
                               {"speedup", row.speedup}});
            return out.dump();
        },
        py::arg("reports_json"), py::arg("baseline") = "uvm");
    m.def(
        "replay_check",
        [](const std::string& cfg, std::uint64_t seed, int runs) {
            auto c = config_from_json(cfg);
            py::gil_scoped_release release;
            return replay_check(c, seed, runs);
        },
        py::arg("config_json"), py::arg("seed"), py::arg("runs") = 2);
    m.def(
        "little_law_queue_depth",
        [](double latency_us, double target_bw, std::uint64_t page_size) {
            return little_law_queue_depth(Duration::from_us(latency_us), target_bw, page_size);
        },
        py::arg("latency_us"), py::arg("target_bw"), py::arg("page_size"));
    m.def(
        "uvm_fault_service_time",
        [](std::uint64_t batch_bytes) {
            auto t = uvm_fault_service_time(batch_bytes, UvmConfig{});
            return std::make_pair(t.os.us(), t.transfer.us());
        },
        py::arg("batch_bytes"));
    m.def(
        "oversubscription_level", &oversubscription_level, py::arg("workload_bytes"), py::arg("gpu_bytes"));
    m.def("gpu_bytes_for_level", &gpu_bytes_for_level, py::arg("workload_bytes"), py::arg("level"));
}
