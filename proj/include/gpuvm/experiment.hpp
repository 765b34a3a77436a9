#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpuvm/rnic.hpp"
#include "gpuvm/runtime.hpp"
#include "gpuvm/uvm.hpp"
#include "gpuvm/workload.hpp"

namespace gpuvm {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode : std::uint8_t { GPUVM, UVM, Bulk, GDR };
const char* to_string(Mode m);
Mode parse_mode(const std::string& s);

struct WorkloadSpec {
    std::string kind = "vecadd";  // stream, vecadd, mvt, atax, bigc, bfs, cc, sssp, query
    std::uint64_t bytes = 64ull << 20;
    std::optional<std::uint32_t> warps;  // unset: kind default
    std::uint32_t element_size = 4;
    std::uint64_t rows = 0;   // matrices: 0 derives rows from bytes
    std::uint64_t cols = 16384;
    Duration compute_per_step{};
    std::string graph = "random";  // random, powerlaw, star, or a file path
    std::uint64_t vertices = 1024;
    std::uint64_t edges = 8192;
    std::string representation = "csr";
    std::uint64_t chunk_size = 256;
    std::uint32_t sources = 4;
    std::uint64_t min_degree = 2;
    std::uint32_t vertices_per_warp = 32;
    std::uint64_t query_rows = 1ull << 17;
    std::uint32_t row_bytes = 512;
    double selectivity = 0.0008;
    std::uint32_t columns = 1;

    std::string label() const;
};

struct ExperimentConfig {
    Mode mode = Mode::GPUVM;
    WorkloadSpec workload;
    RuntimeConfig runtime;
    UvmConfig uvm;
    std::uint64_t seed = 1;
    std::optional<double> oversubscription_level;
    Duration watchdog = Duration::millis(10);
    double bulk_bandwidth = 12.15e9;
    std::uint32_t gdr_streams = 16;
};

// Flat key/value settings: defaults < config file < environment < command-line flags.
using Settings = std::map<std::string, std::string>;

const std::vector<std::string>& config_keys();
Settings default_settings();
// Accepts nested objects or dotted keys.
void merge_json_settings(Settings& s, const nlohmann::json& j, const std::string& prefix = "");
void merge_file_settings(Settings& s, const std::string& path);
// GPUVM_<KEY> with dots replaced by underscores, upper-cased.
void merge_env_settings(Settings& s);
void set_setting(Settings& s, const std::string& key, const std::string& value);
ExperimentConfig config_from_settings(const Settings& s);
nlohmann::ordered_json config_echo(const ExperimentConfig& cfg);

struct MetricsReport {
    std::string mode;
    std::string workload;
    std::uint64_t seed = 0;
    std::uint64_t kernel_time_ns = 0;
    std::uint64_t setup_time_ns = 0;
    std::uint64_t bytes_h2g = 0;
    std::uint64_t bytes_g2h = 0;
    std::uint64_t unique_bytes = 0;
    std::uint64_t workload_bytes = 0;
    std::uint64_t gpu_memory_bytes = 0;
    double oversubscription_level = 0;
    double aggregate_cap = 0;
    double pcie_utilization = 0;
    double io_amplification = 0;
    double throughput_gbps = 0;
    std::uint64_t faults = 0;
    std::uint64_t evictions = 0;
    std::uint64_t dirty_evictions = 0;
    std::uint64_t doorbells = 0;
    std::uint64_t work_requests = 0;
    std::uint64_t hits = 0;
    std::uint64_t steps = 0;
    std::uint64_t service_rounds = 0;
    std::uint64_t wasted_bytes = 0;
    std::uint64_t follower_waits = 0;
    std::uint64_t ref_waits = 0;
    std::uint64_t events = 0;
    std::uint64_t digest = 0;
    std::uint64_t iterations = 0;
    std::vector<std::uint64_t> warp_faults;
    nlohmann::ordered_json fit;
    nlohmann::ordered_json config;
    std::optional<std::string> error;

    double kernel_seconds() const { return static_cast<double>(kernel_time_ns) / 1e9; }
};

constexpr int kSchemaVersion = 1;

// Recomputes derived fields (utilization, amplification, throughput) from raw counters.
void derive_metrics(MetricsReport& r);

struct BuiltWorkload {
    AccessProgram program;
    std::optional<TraversalResult> traversal;
    std::uint64_t advised_bytes = 0;  // bytes of buffers that are never written
};
BuiltWorkload build_workload(const WorkloadSpec& w, std::uint64_t seed);

MetricsReport run_experiment(const ExperimentConfig& cfg);
MetricsReport run_program(const ExperimentConfig& cfg, const BuiltWorkload& work);

enum class SweepAxis : std::uint8_t { PageSize, QueueCount, Oversubscription, NicCount };
SweepAxis parse_axis(const std::string& s);
const char* to_string(SweepAxis a);
ExperimentConfig apply_axis(ExperimentConfig cfg, SweepAxis axis, double value);
// One run per value; points run in parallel and failures are recorded per point.
std::vector<MetricsReport> sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                                 unsigned threads = 0);

enum class Format : std::uint8_t { JSON, CSV };
nlohmann::ordered_json report_json(const MetricsReport& r);
// Key order of the fit and config blocks is preserved from ordered input.
MetricsReport report_from_json(const nlohmann::ordered_json& j);
MetricsReport report_from_json(const nlohmann::json& j);
std::string emit_report(const MetricsReport& r, Format f);
std::string emit_report(const std::vector<MetricsReport>& table, Format f);
const std::vector<std::string>& csv_columns();

struct SpeedupRow {
    std::string mode;
    std::string workload;
    std::uint64_t kernel_time_ns = 0;
    std::uint64_t setup_time_ns = 0;
    double speedup = 0;
};
std::vector<SpeedupRow> compare(const std::vector<MetricsReport>& reports, const std::string& baseline_mode);

bool replay_check(const ExperimentConfig& cfg, std::uint64_t seed, int runs = 2);

}  // namespace gpuvm
