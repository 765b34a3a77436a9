#include "gpuvm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_set>

namespace gpuvm {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> d = {
        {"mode", "gpuvm"},
        {"seed", "1"},
        {"oversubscription_level", ""},
        {"engine.watchdog_ms", "10"},
        {"workload.kind", "vecadd"},
        {"workload.bytes", "67108864"},
        {"workload.warps", "auto"},
        {"workload.element_size", "4"},
        {"workload.rows", "0"},
        {"workload.cols", "16384"},
        {"workload.compute_ns", "0"},
        {"workload.graph", "random"},
        {"workload.vertices", "1024"},
        {"workload.edges", "8192"},
        {"workload.representation", "csr"},
        {"workload.chunk_size", "256"},
        {"workload.sources", "4"},
        {"workload.min_degree", "2"},
        {"workload.vertices_per_warp", "32"},
        {"workload.query_rows", "131072"},
        {"workload.row_bytes", "512"},
        {"workload.selectivity", "0.0008"},
        {"workload.columns", "1"},
        {"runtime.page_size_bytes", "8192"},
        {"runtime.gpu_memory_bytes", "0"},
        {"runtime.protocol_overhead_us", "1"},
        {"runtime.resident_access_cost_us", "0"},
        {"runtime.batch_flush_us", "2"},
        {"nic.base_latency_us", "23"},
        {"nic.per_nic_bw_gbps", "6.5"},
        {"nic.count", "1"},
        {"nic.aggregate_cap_gbps", "12.15"},
        {"nic.bridge_halving", "true"},
        {"nic.latency_jitter_us", "1"},
        {"nic.batch_size", "1"},
        {"nic.queue_count", "84"},
        {"nic.queue_depth", "64"},
        {"uvm.batching_window_us", "20"},
        {"uvm.eviction_block_bytes", "2097152"},
        {"uvm.prefetch_bytes", "61440"},
        {"uvm.read_mostly", "false"},
        {"uvm.memadvise_setup_s", ""},
        {"uvm.memadvise_s_per_gib", "0.1695"},
        {"uvm.read_mostly_os_scale", "0.72"},
        {"uvm.batch_capacity", "256"},
        {"uvm.service_unit_bytes", "524288"},
        {"bulk.bandwidth_gbps", "12.15"},
        {"gdr.streams", "16"},
    };
    return d;
}

std::uint64_t as_u64(const Settings& s, const std::string& k) {
    const std::string& v = s.at(k);
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError("config key '" + k + "' expects a non-negative integer, got '" + v + "'");
    return out;
}

std::uint32_t as_u32(const Settings& s, const std::string& k) {
    auto v = as_u64(s, k);
    if (v > 0xffffffffull) throw ConfigError("config key '" + k + "' is out of range");
    return static_cast<std::uint32_t>(v);
}

double as_double(const Settings& s, const std::string& k) {
    const std::string& v = s.at(k);
    double out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out))
        throw ConfigError("config key '" + k + "' expects a number, got '" + v + "'");
    return out;
}

bool as_bool(const Settings& s, const std::string& k) {
    auto v = lower(s.at(k));
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + k + "' expects a boolean, got '" + s.at(k) + "'");
}

Duration as_us(const Settings& s, const std::string& k) {
    double v = as_double(s, k);
    if (v < 0) throw ConfigError("config key '" + k + "' must be non-negative");
    return Duration::from_us(v);
}

std::uint64_t as_rate(const Settings& s, const std::string& k) {
    double v = as_double(s, k);
    if (!(v > 0)) throw ConfigError("config key '" + k + "' must be positive");
    return static_cast<std::uint64_t>(std::llround(v * 1e9));
}

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

const char* to_string(Mode m) {
    switch (m) {
        case Mode::GPUVM: return "gpuvm";
        case Mode::UVM: return "uvm";
        case Mode::Bulk: return "bulk";
        case Mode::GDR: return "gdr";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    auto v = lower(s);
    if (v == "gpuvm") return Mode::GPUVM;
    if (v == "uvm") return Mode::UVM;
    if (v == "bulk") return Mode::Bulk;
    if (v == "gdr") return Mode::GDR;
    throw ConfigError("unknown mode '" + s + "' (expected gpuvm, uvm, bulk or gdr)");
}

std::string WorkloadSpec::label() const {
    std::ostringstream os;
    os << kind;
    if (kind == "stream" || kind == "vecadd") {
        os << " bytes=" << bytes;
    } else if (kind == "mvt" || kind == "atax" || kind == "bigc") {
        os << " bytes=" << bytes << " rows=" << rows << " cols=" << cols;
    } else if (kind == "bfs" || kind == "cc" || kind == "sssp") {
        os << " graph=" << graph << " v=" << vertices << " e=" << edges << " repr=" << representation
           << " chunk=" << chunk_size << " sources=" << sources;
    } else if (kind == "query") {
        os << " rows=" << query_rows << " row_bytes=" << row_bytes << " sel=" << fmt_double(selectivity)
           << " columns=" << columns;
    }
    os << " warps=" << (warps ? std::to_string(*warps) : std::string("auto")) << " esz=" << element_size;
    return os.str();
}

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [key, v] : defaults()) k.push_back(key);
        return k;
    }();
    return keys;
}

Settings default_settings() {
    Settings s;
    for (const auto& [k, v] : defaults()) s[k] = v;
    return s;
}

void set_setting(Settings& s, const std::string& key, const std::string& value) {
    if (!s.count(key)) throw ConfigError("unknown config key '" + key + "'");
    s[key] = value;
}

void merge_json_settings(Settings& s, const json& j, const std::string& prefix) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        const auto& v = it.value();
        if (v.is_object()) {
            merge_json_settings(s, v, key);
        } else if (v.is_string()) {
            set_setting(s, key, v.get<std::string>());
        } else if (v.is_boolean()) {
            set_setting(s, key, v.get<bool>() ? "true" : "false");
        } else if (v.is_number_unsigned()) {
            set_setting(s, key, std::to_string(v.get<std::uint64_t>()));
        } else if (v.is_number_integer()) {
            set_setting(s, key, std::to_string(v.get<std::int64_t>()));
        } else if (v.is_number_float()) {
            set_setting(s, key, fmt_double(v.get<double>()));
        } else if (v.is_null()) {
            set_setting(s, key, "");
        } else {
            throw ConfigError("config key '" + key + "' has an unsupported value");
        }
    }
}

void merge_file_settings(Settings& s, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    merge_json_settings(s, j);
}

void merge_env_settings(Settings& s) {
    for (const auto& key : config_keys()) {
        std::string env = "GPUVM_";
        for (char c : key) env.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        if (const char* v = std::getenv(env.c_str())) s[key] = v;
    }
}

ExperimentConfig config_from_settings(const Settings& s) {
    ExperimentConfig c;
    c.mode = parse_mode(s.at("mode"));
    c.seed = as_u64(s, "seed");
    if (!s.at("oversubscription_level").empty()) {
        double lvl = as_double(s, "oversubscription_level");
        if (!(lvl >= 0)) throw ConfigError("oversubscription_level must be non-negative");
        c.oversubscription_level = lvl;
    }
    c.watchdog = Duration::from_us(as_double(s, "engine.watchdog_ms") * 1e3);

    auto& w = c.workload;
    w.kind = lower(s.at("workload.kind"));
    static const std::unordered_set<std::string> kinds = {"stream", "vecadd", "mvt", "atax", "bigc",
                                                           "bfs",    "cc",     "sssp", "query"};
    if (!kinds.count(w.kind)) throw ConfigError("unknown workload.kind '" + w.kind + "'");
    w.bytes = as_u64(s, "workload.bytes");
    if (lower(s.at("workload.warps")) != "auto") w.warps = as_u32(s, "workload.warps");
    w.element_size = as_u32(s, "workload.element_size");
    if (w.element_size == 0) throw ConfigError("workload.element_size must be positive");
    w.rows = as_u64(s, "workload.rows");
    w.cols = as_u64(s, "workload.cols");
    w.compute_per_step = Duration::nanos(static_cast<std::int64_t>(as_u64(s, "workload.compute_ns")));
    w.graph = s.at("workload.graph");
    w.vertices = as_u64(s, "workload.vertices");
    w.edges = as_u64(s, "workload.edges");
    w.representation = lower(s.at("workload.representation"));
    if (w.representation != "csr" && w.representation != "balanced")
        throw ConfigError("workload.representation must be csr or balanced");
    w.chunk_size = as_u64(s, "workload.chunk_size");
    if (w.chunk_size == 0) throw ConfigError("workload.chunk_size must be at least 1");
    w.sources = as_u32(s, "workload.sources");
    w.min_degree = as_u64(s, "workload.min_degree");
    w.vertices_per_warp = as_u32(s, "workload.vertices_per_warp");
    if (w.vertices_per_warp == 0) throw ConfigError("workload.vertices_per_warp must be positive");
    w.query_rows = as_u64(s, "workload.query_rows");
    w.row_bytes = as_u32(s, "workload.row_bytes");
    w.selectivity = as_double(s, "workload.selectivity");
    if (!(w.selectivity > 0 && w.selectivity <= 1)) throw ConfigError("workload.selectivity must be in (0, 1]");
    w.columns = as_u32(s, "workload.columns");

    auto& r = c.runtime;
    r.page_size = as_u64(s, "runtime.page_size_bytes");
    r.gpu_memory_bytes = as_u64(s, "runtime.gpu_memory_bytes");
    r.protocol_overhead = as_us(s, "runtime.protocol_overhead_us");
    r.resident_access_cost = as_us(s, "runtime.resident_access_cost_us");
    r.batch_flush_timeout = as_us(s, "runtime.batch_flush_us");
    r.nic.base_latency = as_us(s, "nic.base_latency_us");
    r.nic.per_nic_bandwidth = as_rate(s, "nic.per_nic_bw_gbps");
    r.nic.nic_count = as_u32(s, "nic.count");
    r.nic.aggregate_cap = as_rate(s, "nic.aggregate_cap_gbps");
    r.nic.bridge_halving = as_bool(s, "nic.bridge_halving");
    r.nic.latency_jitter = as_us(s, "nic.latency_jitter_us");
    r.batch_size = as_u32(s, "nic.batch_size");
    r.queue_count = as_u32(s, "nic.queue_count");
    r.queue_depth = as_u32(s, "nic.queue_depth");
    try {
        r.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    auto& u = c.uvm;
    u.batching_window = as_us(s, "uvm.batching_window_us");
    u.eviction_block = as_u64(s, "uvm.eviction_block_bytes");
    u.prefetch_bytes = as_u64(s, "uvm.prefetch_bytes");
    u.read_mostly = as_bool(s, "uvm.read_mostly");
    if (!s.at("uvm.memadvise_setup_s").empty()) {
        double v = as_double(s, "uvm.memadvise_setup_s");
        if (v < 0) throw ConfigError("uvm.memadvise_setup_s must be non-negative");
        u.memadvise_setup = Duration::from_us(v * 1e6);
    }
    u.memadvise_seconds_per_gib = as_double(s, "uvm.memadvise_s_per_gib");
    u.read_mostly_os_scale = as_double(s, "uvm.read_mostly_os_scale");
    u.batch_capacity = as_u32(s, "uvm.batch_capacity");
    u.service_unit_bytes = as_u64(s, "uvm.service_unit_bytes");
    u.resident_access_cost = r.resident_access_cost;
    try {
        u.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    c.bulk_bandwidth = as_double(s, "bulk.bandwidth_gbps") * 1e9;
    if (!(c.bulk_bandwidth > 0)) throw ConfigError("bulk.bandwidth_gbps must be positive");
    c.gdr_streams = as_u32(s, "gdr.streams");
    return c;
}

ordered_json config_echo(const ExperimentConfig& c) {
    ordered_json j;
    j["mode"] = to_string(c.mode);
    j["seed"] = c.seed;
    j["oversubscription_level"] = c.oversubscription_level ? json(*c.oversubscription_level) : json(nullptr);
    const auto& w = c.workload;
    j["workload"] = {{"kind", w.kind},
                     {"bytes", w.bytes},
                     {"warps", w.warps ? json(*w.warps) : json("auto")},
                     {"element_size", w.element_size},
                     {"rows", w.rows},
                     {"cols", w.cols},
                     {"compute_ns", w.compute_per_step.ns},
                     {"graph", w.graph},
                     {"vertices", w.vertices},
                     {"edges", w.edges},
                     {"representation", w.representation},
                     {"chunk_size", w.chunk_size},
                     {"sources", w.sources},
                     {"min_degree", w.min_degree},
                     {"vertices_per_warp", w.vertices_per_warp},
                     {"query_rows", w.query_rows},
                     {"row_bytes", w.row_bytes},
                     {"selectivity", w.selectivity},
                     {"columns", w.columns}};
    const auto& r = c.runtime;
    j["runtime"] = {{"page_size_bytes", r.page_size},
                    {"gpu_memory_bytes", r.gpu_memory_bytes},
                    {"protocol_overhead_us", r.protocol_overhead.us()},
                    {"resident_access_cost_us", r.resident_access_cost.us()},
                    {"batch_flush_us", r.batch_flush_timeout.us()}};
    j["nic"] = {{"base_latency_us", r.nic.base_latency.us()},
                {"per_nic_bw_gbps", static_cast<double>(r.nic.per_nic_bandwidth) / 1e9},
                {"count", r.nic.nic_count},
                {"aggregate_cap_gbps", static_cast<double>(r.nic.aggregate_cap) / 1e9},
                {"bridge_halving", r.nic.bridge_halving},
                {"latency_jitter_us", r.nic.latency_jitter.us()},
                {"batch_size", r.batch_size},
                {"queue_count", r.queue_count},
                {"queue_depth", r.queue_depth}};
    const auto& u = c.uvm;
    j["uvm"] = {{"batching_window_us", u.batching_window.us()},
                {"eviction_block_bytes", u.eviction_block},
                {"prefetch_bytes", u.prefetch_bytes},
                {"read_mostly", u.read_mostly},
                {"memadvise_setup_s", u.memadvise_setup ? json(u.memadvise_setup->seconds()) : json(nullptr)},
                {"memadvise_s_per_gib", u.memadvise_seconds_per_gib},
                {"read_mostly_os_scale", u.read_mostly_os_scale},
                {"batch_capacity", u.batch_capacity},
                {"service_unit_bytes", u.service_unit_bytes}};
    j["bulk"] = {{"bandwidth_gbps", c.bulk_bandwidth / 1e9}};
    j["gdr"] = {{"streams", c.gdr_streams}};
    j["engine"] = {{"watchdog_ms", static_cast<double>(c.watchdog.ns) / 1e6}};
    return j;
}

// ---------------------------------------------------------------- workloads

namespace {

CsrGraph load_graph(const WorkloadSpec& w, std::uint64_t seed, bool weighted) {
    if (w.graph == "random") return make_random_graph(w.vertices, w.edges, seed, weighted, true);
    if (w.graph == "powerlaw") return make_power_law_graph(w.vertices, w.edges, 2.5, seed, weighted, true);
    if (w.graph == "star") {
        if (w.vertices < 2) throw ConfigError("a star graph needs at least 2 vertices");
        return make_star_graph(w.vertices - 1, w.edges, seed, weighted);
    }
    CsrGraph g;
    if (w.graph.size() > 5 && w.graph.substr(w.graph.size() - 5) == ".bcsr")
        g = load_binary_csr(w.graph);
    else
        g = load_edge_list(w.graph);
    if (weighted && !g.weighted()) g.weights.assign(g.edge_count, 1.0);
    return g;
}

}  // namespace

BuiltWorkload build_workload(const WorkloadSpec& w, std::uint64_t seed) {
    BuiltWorkload out;
    const std::string& k = w.kind;
    if (k == "stream" || k == "vecadd") {
        std::uint32_t warps = w.warps.value_or(k == "stream" ? 1024 : 256);
        std::uint64_t n = w.bytes / (w.element_size * (k == "vecadd" ? 3 : 1));
        if (n == 0) throw ConfigError("workload.bytes too small for " + k);
        out.program = k == "stream" ? gen_stream(n, warps, w.element_size) : gen_vecadd(n, warps, w.element_size);
    } else if (k == "mvt" || k == "atax" || k == "bigc") {
        if (w.cols == 0) throw ConfigError("workload.cols must be positive");
        std::uint64_t rows = w.rows ? w.rows : w.bytes / (w.cols * w.element_size);
        if (rows == 0) throw ConfigError("workload.bytes too small for a " + k + " matrix");
        ColumnWalkOptions opt;
        opt.warps = w.warps.value_or(128);
        if (opt.warps == 0) throw ConfigError("column walks need at least one warp");
        opt.element_size = w.element_size;
        opt.compute_per_step = w.compute_per_step;
        Kernel kern = k == "mvt" ? Kernel::MVT : k == "atax" ? Kernel::ATAX : Kernel::BIGC;
        out.program = gen_column_walk(rows, w.cols, kern, opt);
    } else if (k == "bfs" || k == "cc" || k == "sssp") {
        Algo algo = k == "bfs" ? Algo::BFS : k == "cc" ? Algo::CC : Algo::SSSP;
        CsrGraph g = load_graph(w, seed, algo == Algo::SSSP);
        std::vector<std::uint64_t> sources;
        if (algo != Algo::CC) {
            sources = pick_sources(g, w.sources, w.min_degree, seed);
            if (sources.empty()) throw ConfigError("no source vertex has at least workload.min_degree neighbours");
        }
        TraversalOptions opt;
        opt.vertices_per_warp = w.vertices_per_warp;
        opt.warps = w.warps.value_or(0);
        TraversalProgram tp;
        if (w.representation == "balanced") {
            auto b = csr_to_balanced(g, w.chunk_size);
            tp = gen_graph_traversal(b, algo, sources, opt);
        } else {
            tp = gen_graph_traversal(g, algo, sources, opt);
        }
        out.program = std::move(tp.program);
        out.traversal = std::move(tp.result);
    } else if (k == "query") {
        auto q = make_query_workload(w.query_rows, w.row_bytes, w.selectivity, seed);
        out.program = gen_query_scan(q, w.columns, w.warps.value_or(64));
    } else {
        throw ConfigError("unknown workload.kind '" + k + "'");
    }
    if (w.compute_per_step.ns > 0) out.program.compute_per_step = w.compute_per_step;
    std::vector<bool> written(out.program.buffers.size(), false);
    for (const auto& s : out.program.steps)
        if (s.rw == AccessKind::Write) written[s.buffer] = true;
    for (std::size_t b = 0; b < written.size(); ++b)
        if (!written[b]) out.advised_bytes += out.program.buffers[b].bytes();
    return out;
}

// ---------------------------------------------------------------- runs

namespace {

class IdealMemory : public MemorySystem {
public:
    IdealMemory(Engine& e, Duration cost) : engine_(e), cost_(cost) {}
    void bind(const AccessProgram& p) override {
        counters_ = Counters{};
        counters_.resize_warps(p.warp_count);
    }
    void access_step(std::uint32_t, const AccessStep&, std::span<const std::uint64_t>,
                     std::function<void(SimTime)> done) override {
        ++counters_.steps;
        ++counters_.hits;
        done(engine_.now() + cost_);
    }
    Counters& counters() override { return counters_; }
    std::string blocked_report() const override { return {}; }

private:
    Engine& engine_;
    Duration cost_;
    Counters counters_;
};

std::uint64_t touched_page_bytes(const AccessProgram& p, std::uint64_t page_size) {
    auto buffers = p.buffers;
    std::uint64_t pages = layout_pages(buffers, page_size);
    std::vector<bool> seen(pages, false);
    std::vector<std::uint64_t> lanes;
    std::uint64_t count = 0;
    for (const auto& s : p.steps) {
        p.lane_elements(s, lanes);
        for (auto e : lanes) {
            auto pg = buffers[s.buffer].page_of(e, page_size);
            if (!seen[pg]) {
                seen[pg] = true;
                ++count;
            }
        }
    }
    return count * page_size;
}

void fill_counters(MetricsReport& r, const Counters& k) {
    r.bytes_h2g = k.bytes_h2g;
    r.bytes_g2h = k.bytes_g2h;
    r.faults = k.faults;
    r.evictions = k.evictions;
    r.dirty_evictions = k.dirty_evictions;
    r.doorbells = k.doorbells;
    r.work_requests = k.work_requests;
    r.hits = k.hits;
    r.steps = k.steps;
    r.service_rounds = k.service_rounds;
    r.wasted_bytes = k.wasted_bytes;
    r.follower_waits = k.follower_waits;
    r.ref_waits = k.ref_waits;
    r.warp_faults.resize(k.warp_faults_led.size());
    for (std::size_t w = 0; w < r.warp_faults.size(); ++w) r.warp_faults[w] = k.warp_faults(static_cast<std::uint32_t>(w));
}

SimTime execute(Engine& engine, MemorySystem& mem, const AccessProgram& program, SimTime start) {
    mem.bind(program);
    WarpExecutor ex(engine, mem, program);
    engine.set_idle_probe([&ex]() -> std::optional<std::string> {
        if (ex.finished()) return std::nullopt;
        return ex.blocked_report();
    });
    engine.set_stall_diagnostic([&ex] { return ex.blocked_report(); });
    ex.start(start);
    engine.run_until_idle();
    engine.set_idle_probe({});
    engine.set_stall_diagnostic({});
    return ex.finish_time();
}

}  // namespace

void derive_metrics(MetricsReport& r) {
    double t = r.kernel_seconds();
    double moved = static_cast<double>(r.bytes_h2g + r.bytes_g2h);
    r.pcie_utilization = t > 0 && r.aggregate_cap > 0 ? moved / (t * r.aggregate_cap) : 0.0;
    r.io_amplification = r.unique_bytes ? static_cast<double>(r.bytes_h2g) / static_cast<double>(r.unique_bytes) : 0.0;
    r.throughput_gbps = t > 0 ? static_cast<double>(r.bytes_h2g) / t / 1e9 : 0.0;
}

MetricsReport run_program(const ExperimentConfig& cfg, const BuiltWorkload& work) {
    const AccessProgram& program = work.program;
    MetricsReport r;
    r.mode = to_string(cfg.mode);
    r.workload = cfg.workload.label();
    r.seed = cfg.seed;
    r.config = config_echo(cfg);
    r.aggregate_cap = static_cast<double>(cfg.runtime.nic.aggregate_cap);
    r.workload_bytes = program.workload_bytes();
    r.unique_bytes = unique_bytes_needed(program).total;
    if (work.traversal) r.iterations = work.traversal->iterations;
    // levels are taken against the footprint at the model's allocation granularity
    std::uint64_t unit = cfg.mode == Mode::GPUVM ? cfg.runtime.page_size
                         : cfg.mode == Mode::UVM ? cfg.uvm.region_bytes()
                                                 : 1;
    std::uint64_t footprint = footprint_bytes(program.buffers, unit);
    std::uint64_t gpu_bytes = cfg.runtime.gpu_memory_bytes;
    if (cfg.oversubscription_level) gpu_bytes = gpu_bytes_for_level(footprint, *cfg.oversubscription_level);
    r.gpu_memory_bytes = gpu_bytes;
    r.oversubscription_level = gpu_bytes ? oversubscription_level(footprint, gpu_bytes) : 0.0;

    GdrFit gdr = fit_gdr_setup(cfg.runtime.nic);
    AffineFit tf = fit_transfer_affine(cfg.uvm.transfer_curve);
    r.fit = {{"gdr_setup_s", gdr.setup_seconds},
             {"transfer_fit_intercept_us", tf.intercept.us()},
             {"transfer_fit_bandwidth_gbps", tf.bandwidth / 1e9},
             {"memadvise_s_per_gib", cfg.uvm.memadvise_seconds_per_gib},
             {"read_mostly_os_scale", cfg.uvm.read_mostly_os_scale},
             {"nic_latency_jitter_us", cfg.runtime.nic.latency_jitter.us()}};

    Engine engine(cfg.watchdog);
    switch (cfg.mode) {
        case Mode::GPUVM: {
            RuntimeConfig rc = cfg.runtime;
            rc.gpu_memory_bytes = gpu_bytes;
            rc.nic.seed = cfg.seed;
            if (gpu_bytes && gpu_bytes < rc.page_size)
                throw ConfigError("GPU memory of " + std::to_string(gpu_bytes) + " bytes holds no page");
            try {
                rc.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            GpuvmRuntime rt(engine, rc);
            r.kernel_time_ns = static_cast<std::uint64_t>(execute(engine, rt, program, SimTime{}).ns);
            fill_counters(r, rt.counters());
            break;
        }
        case Mode::UVM: {
            UvmConfig uc = cfg.uvm;
            uc.gpu_memory_bytes = gpu_bytes;
            uc.resident_access_cost = cfg.runtime.resident_access_cost;
            try {
                uc.validate();
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
            UvmModel m(engine, uc);
            r.setup_time_ns = static_cast<std::uint64_t>(m.apply_memadvise(uc.read_mostly, work.advised_bytes).ns);
            r.kernel_time_ns = static_cast<std::uint64_t>(execute(engine, m, program, SimTime{}).ns);
            fill_counters(r, m.counters());
            break;
        }
        case Mode::Bulk: {
            if (gpu_bytes && gpu_bytes < r.workload_bytes)
                throw ConfigError("bulk mode needs the whole workload to fit in GPU memory");
            auto copy = Duration::nanos(static_cast<std::int64_t>(
                std::ceil(static_cast<double>(r.workload_bytes) / cfg.bulk_bandwidth * 1e9)));
            IdealMemory m(engine, cfg.runtime.resident_access_cost);
            r.kernel_time_ns = static_cast<std::uint64_t>(execute(engine, m, program, SimTime{} + copy).ns);
            fill_counters(r, m.counters());
            r.bytes_h2g = r.workload_bytes;
            break;
        }
        case Mode::GDR: {
            std::uint64_t bytes = touched_page_bytes(program, cfg.runtime.page_size);
            double bw = gdr_baseline_throughput(cfg.runtime.page_size, cfg.gdr_streams, cfg.runtime.nic, gdr);
            auto copy = Duration::nanos(static_cast<std::int64_t>(std::ceil(static_cast<double>(bytes) / bw * 1e9)));
            IdealMemory m(engine, cfg.runtime.resident_access_cost);
            r.kernel_time_ns = static_cast<std::uint64_t>(execute(engine, m, program, SimTime{} + copy).ns);
            fill_counters(r, m.counters());
            r.bytes_h2g = bytes;
            r.faults = bytes / cfg.runtime.page_size;
            break;
        }
    }
    r.events = engine.dispatched();
    r.digest = engine.digest();
    derive_metrics(r);
    return r;
}

MetricsReport run_experiment(const ExperimentConfig& cfg) { return run_program(cfg, build_workload(cfg.workload, cfg.seed)); }

// ---------------------------------------------------------------- sweeps

SweepAxis parse_axis(const std::string& s) {
    auto v = lower(s);
    if (v == "pagesize" || v == "page_size") return SweepAxis::PageSize;
    if (v == "queuecount" || v == "queue_count") return SweepAxis::QueueCount;
    if (v == "oversubscription") return SweepAxis::Oversubscription;
    if (v == "niccount" || v == "nic_count") return SweepAxis::NicCount;
    throw ConfigError("unknown sweep axis '" + s + "'");
}

const char* to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::PageSize: return "page_size";
        case SweepAxis::QueueCount: return "queue_count";
        case SweepAxis::Oversubscription: return "oversubscription";
        case SweepAxis::NicCount: return "nic_count";
    }
    return "?";
}

ExperimentConfig apply_axis(ExperimentConfig cfg, SweepAxis axis, double value) {
    auto whole = [&](const char* what) {
        if (!(value >= 0) || value != std::floor(value)) throw ConfigError(std::string(what) + " must be a whole number");
        return static_cast<std::uint64_t>(value);
    };
    switch (axis) {
        case SweepAxis::PageSize: cfg.runtime.page_size = whole("page size"); break;
        case SweepAxis::QueueCount: cfg.runtime.queue_count = static_cast<std::uint32_t>(whole("queue count")); break;
        case SweepAxis::Oversubscription: cfg.oversubscription_level = value; break;
        case SweepAxis::NicCount: cfg.runtime.nic.nic_count = static_cast<std::uint32_t>(whole("NIC count")); break;
    }
    return cfg;
}

std::vector<MetricsReport> sweep(const ExperimentConfig& cfg, SweepAxis axis, const std::vector<double>& values,
                                 unsigned threads) {
    std::vector<MetricsReport> out(values.size());
    if (values.empty()) return out;
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(values.size()));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < values.size(); i = next++) {
            try {
                out[i] = run_experiment(apply_axis(cfg, axis, values[i]));
            } catch (const std::exception& e) {
                MetricsReport r;
                r.mode = to_string(cfg.mode);
                r.workload = cfg.workload.label();
                r.seed = cfg.seed;
                try {
                    r.config = config_echo(apply_axis(cfg, axis, values[i]));
                } catch (const std::exception&) {
                    r.config = config_echo(cfg);
                }
                r.error = e.what();
                out[i] = std::move(r);
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    return out;
}

// ---------------------------------------------------------------- reports

ordered_json report_json(const MetricsReport& r) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["mode"] = r.mode;
    j["workload"] = r.workload;
    j["seed"] = r.seed;
    j["kernel_time_ns"] = r.kernel_time_ns;
    j["kernel_time_s"] = r.kernel_seconds();
    j["setup_time_ns"] = r.setup_time_ns;
    j["setup_time_s"] = static_cast<double>(r.setup_time_ns) / 1e9;
    j["bytes_h2g"] = r.bytes_h2g;
    j["bytes_g2h"] = r.bytes_g2h;
    j["unique_bytes"] = r.unique_bytes;
    j["workload_bytes"] = r.workload_bytes;
    j["gpu_memory_bytes"] = r.gpu_memory_bytes;
    j["oversubscription_level"] = r.oversubscription_level;
    j["aggregate_cap"] = r.aggregate_cap;
    j["pcie_utilization"] = r.pcie_utilization;
    j["io_amplification"] = r.io_amplification;
    j["throughput_gbps"] = r.throughput_gbps;
    j["counters"] = {{"faults", r.faults},
                     {"evictions", r.evictions},
                     {"dirty_evictions", r.dirty_evictions},
                     {"doorbells", r.doorbells},
                     {"work_requests", r.work_requests},
                     {"hits", r.hits},
                     {"steps", r.steps},
                     {"service_rounds", r.service_rounds},
                     {"wasted_bytes", r.wasted_bytes},
                     {"follower_waits", r.follower_waits},
                     {"ref_waits", r.ref_waits},
                     {"events", r.events},
                     {"iterations", r.iterations}};
    j["digest"] = hex64(r.digest);
    j["warp_faults"] = r.warp_faults;
    j["fit"] = r.fit.is_null() ? ordered_json::object() : r.fit;
    j["config"] = r.config.is_null() ? ordered_json::object() : r.config;
    j["error"] = r.error ? ordered_json(*r.error) : ordered_json(nullptr);
    return j;
}

MetricsReport report_from_json(const nlohmann::ordered_json& j) {
    try {
        if (j.at("schema_version").get<int>() != kSchemaVersion)
            throw ConfigError("unsupported report schema_version " + j.at("schema_version").dump());
        MetricsReport r;
        r.mode = j.at("mode").get<std::string>();
        r.workload = j.at("workload").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.kernel_time_ns = j.at("kernel_time_ns").get<std::uint64_t>();
        r.setup_time_ns = j.at("setup_time_ns").get<std::uint64_t>();
        r.bytes_h2g = j.at("bytes_h2g").get<std::uint64_t>();
        r.bytes_g2h = j.at("bytes_g2h").get<std::uint64_t>();
        r.unique_bytes = j.at("unique_bytes").get<std::uint64_t>();
        r.workload_bytes = j.at("workload_bytes").get<std::uint64_t>();
        r.gpu_memory_bytes = j.at("gpu_memory_bytes").get<std::uint64_t>();
        r.oversubscription_level = j.at("oversubscription_level").get<double>();
        r.aggregate_cap = j.at("aggregate_cap").get<double>();
        const auto& c = j.at("counters");
        r.faults = c.at("faults").get<std::uint64_t>();
        r.evictions = c.at("evictions").get<std::uint64_t>();
        r.dirty_evictions = c.at("dirty_evictions").get<std::uint64_t>();
        r.doorbells = c.at("doorbells").get<std::uint64_t>();
        r.work_requests = c.at("work_requests").get<std::uint64_t>();
        r.hits = c.at("hits").get<std::uint64_t>();
        r.steps = c.at("steps").get<std::uint64_t>();
        r.service_rounds = c.at("service_rounds").get<std::uint64_t>();
        r.wasted_bytes = c.at("wasted_bytes").get<std::uint64_t>();
        r.follower_waits = c.at("follower_waits").get<std::uint64_t>();
        r.ref_waits = c.at("ref_waits").get<std::uint64_t>();
        r.events = c.at("events").get<std::uint64_t>();
        r.iterations = c.at("iterations").get<std::uint64_t>();
        r.digest = std::stoull(j.at("digest").get<std::string>(), nullptr, 16);
        r.warp_faults = j.at("warp_faults").get<std::vector<std::uint64_t>>();
        r.fit = j.at("fit");
        r.config = j.at("config");
        if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
        derive_metrics(r);
        return r;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
}

MetricsReport report_from_json(const json& j) { return report_from_json(nlohmann::ordered_json::parse(j.dump())); }

const std::vector<std::string>& csv_columns() {
    static const std::vector<std::string> cols = {
        "mode",          "workload",         "seed",          "kernel_time_ns",  "setup_time_ns",
        "bytes_h2g",     "bytes_g2h",        "unique_bytes",  "workload_bytes",  "gpu_memory_bytes",
        "oversubscription_level", "pcie_utilization", "io_amplification", "throughput_gbps", "faults",
        "evictions",     "dirty_evictions",  "doorbells",     "work_requests",   "hits",
        "steps",         "service_rounds",   "wasted_bytes",  "events",          "digest",
        "max_warp_faults", "min_warp_faults", "page_size_bytes", "queue_count",   "nic_count",
        "error"};
    return cols;
}

namespace {
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

std::string csv_row(const MetricsReport& r) {
    std::uint64_t mx = 0, mn = 0;
    if (!r.warp_faults.empty()) {
        mx = *std::max_element(r.warp_faults.begin(), r.warp_faults.end());
        mn = *std::min_element(r.warp_faults.begin(), r.warp_faults.end());
    }
    auto cfg_num = [&](const char* a, const char* b) -> std::string {
        if (r.config.contains(a) && r.config[a].contains(b)) return r.config[a][b].dump();
        return "";
    };
    std::vector<std::string> f = {r.mode,
                                  r.workload,
                                  std::to_string(r.seed),
                                  std::to_string(r.kernel_time_ns),
                                  std::to_string(r.setup_time_ns),
                                  std::to_string(r.bytes_h2g),
                                  std::to_string(r.bytes_g2h),
                                  std::to_string(r.unique_bytes),
                                  std::to_string(r.workload_bytes),
                                  std::to_string(r.gpu_memory_bytes),
                                  fmt_double(r.oversubscription_level),
                                  fmt_double(r.pcie_utilization),
                                  fmt_double(r.io_amplification),
                                  fmt_double(r.throughput_gbps),
                                  std::to_string(r.faults),
                                  std::to_string(r.evictions),
                                  std::to_string(r.dirty_evictions),
                                  std::to_string(r.doorbells),
                                  std::to_string(r.work_requests),
                                  std::to_string(r.hits),
                                  std::to_string(r.steps),
                                  std::to_string(r.service_rounds),
                                  std::to_string(r.wasted_bytes),
                                  std::to_string(r.events),
                                  hex64(r.digest),
                                  std::to_string(mx),
                                  std::to_string(mn),
                                  cfg_num("runtime", "page_size_bytes"),
                                  cfg_num("nic", "queue_count"),
                                  cfg_num("nic", "count"),
                                  r.error.value_or("")};
    std::string line;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (i) line += ',';
        line += csv_field(f[i]);
    }
    return line + "\n";
}

std::string csv_header() {
    std::string h;
    for (std::size_t i = 0; i < csv_columns().size(); ++i) {
        if (i) h += ',';
        h += csv_columns()[i];
    }
    return h + "\n";
}
}  // namespace

std::string emit_report(const MetricsReport& r, Format f) {
    if (f == Format::CSV) return csv_header() + csv_row(r);
    return report_json(r).dump(2) + "\n";
}

std::string emit_report(const std::vector<MetricsReport>& table, Format f) {
    if (f == Format::CSV) {
        std::string out = csv_header();
        for (const auto& r : table) out += csv_row(r);
        return out;
    }
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["runs"] = ordered_json::array();
    for (const auto& r : table) j["runs"].push_back(report_json(r));
    return j.dump(2) + "\n";
}

std::vector<SpeedupRow> compare(const std::vector<MetricsReport>& reports, const std::string& baseline_mode) {
    if (reports.empty()) throw ConfigError("nothing to compare");
    for (const auto& r : reports) {
        if (r.workload != reports.front().workload || r.seed != reports.front().seed)
            throw ConfigError("cannot compare different workloads: '" + reports.front().workload + "' seed " +
                              std::to_string(reports.front().seed) + " vs '" + r.workload + "' seed " +
                              std::to_string(r.seed));
        if (r.error) throw ConfigError("cannot compare a failed run: " + *r.error);
    }
    auto mode = lower(baseline_mode);
    auto base = std::find_if(reports.begin(), reports.end(), [&](const MetricsReport& r) { return lower(r.mode) == mode; });
    if (base == reports.end()) throw ConfigError("no report with baseline mode '" + baseline_mode + "'");
    std::vector<SpeedupRow> rows;
    for (const auto& r : reports) {
        SpeedupRow row{r.mode, r.workload, r.kernel_time_ns, r.setup_time_ns, 0.0};
        row.speedup = r.kernel_time_ns ? static_cast<double>(base->kernel_time_ns) / static_cast<double>(r.kernel_time_ns)
                                       : (base->kernel_time_ns ? std::numeric_limits<double>::infinity() : 1.0);
        rows.push_back(row);
    }
    return rows;
}

bool replay_check(const ExperimentConfig& cfg, std::uint64_t seed, int runs) {
    ExperimentConfig c = cfg;
    c.seed = seed;
    std::optional<std::string> first;
    for (int i = 0; i < runs; ++i) {
        auto text = emit_report(run_experiment(c), Format::JSON);
        if (!first)
            first = std::move(text);
        else if (*first != text)
            return false;
    }
    return true;
}

}  // namespace gpuvm
