#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gpuvm/experiment.hpp"

namespace {

using namespace gpuvm;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStall = 3;
constexpr int kExitIo = 4;

struct ConfigFlags {
    std::string config_file;
    std::map<std::string, std::string> overrides;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags) {
    app->add_option("-c,--config", flags.config_file, "JSON config file (flags override it)");
    for (const auto& key : config_keys()) {
        app->add_option_function<std::string>(
               "--" + key, [&flags, key](const std::string& v) { flags.overrides[key] = v; }, "config key " + key)
            ->group("Config keys");
    }
}

ExperimentConfig resolve(const ConfigFlags& flags) {
    Settings s = default_settings();
    if (!flags.config_file.empty()) merge_file_settings(s, flags.config_file);
    merge_env_settings(s);
    for (const auto& [k, v] : flags.overrides) set_setting(s, k, v);
    return config_from_settings(s);
}

Format parse_format(const std::string& f) {
    if (f == "json") return Format::JSON;
    if (f == "csv") return Format::CSV;
    throw ConfigError("unknown format '" + f + "' (expected json or csv)");
}

void write_out(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("write to '" + path + "' failed");
}

nlohmann::ordered_json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
    }
}

std::vector<MetricsReport> load_reports(const std::string& path) {
    auto j = read_json(path);
    std::vector<MetricsReport> out;
    if (j.contains("runs")) {
        for (const auto& r : j.at("runs")) out.push_back(report_from_json(r));
    } else {
        out.push_back(report_from_json(j));
    }
    return out;
}

std::vector<double> parse_values(const std::string& list) {
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("bad sweep value '" + item + "'");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete-event simulator for GPU-driven paging over RDMA"};
    app.require_subcommand(1);

    std::string format = "json";
    std::string output;

    ConfigFlags run_flags;
    auto* run = app.add_subcommand("run", "Run one experiment");
    add_config_flags(run, run_flags);
    run->add_option("--format", format, "json or csv");
    run->add_option("-o,--output", output, "Output file (default stdout)");

    ConfigFlags sweep_flags;
    std::string axis;
    std::string values;
    unsigned threads = 0;
    auto* sw = app.add_subcommand("sweep", "Run one experiment per value of a swept parameter");
    add_config_flags(sw, sweep_flags);
    sw->add_option("--axis", axis, "page_size, queue_count, oversubscription or nic_count")->required();
    sw->add_option("--values", values, "Comma-separated values")->required();
    sw->add_option("--threads", threads, "Worker threads (0: hardware concurrency)");
    sw->add_option("--format", format, "json or csv");
    sw->add_option("-o,--output", output, "Output file (default stdout)");

    std::string graph_in;
    std::string graph_out;
    bool balanced = false;
    std::uint64_t chunk_size = 256;
    auto* conv = app.add_subcommand("convert-graph", "Convert an edge list to binary CSR and optionally a chunk table");
    conv->add_option("input", graph_in, "Edge list or .bcsr file")->required();
    conv->add_option("output", graph_out, "Binary CSR output path")->required();
    conv->add_flag("--balanced", balanced, "Also write the Balanced CSR chunk table to <output>.chunks");
    conv->add_option("--chunk-size", chunk_size, "Edges per chunk")->check(CLI::PositiveNumber);

    std::vector<std::string> report_inputs;
    auto* rep = app.add_subcommand("report", "Re-derive metrics from saved raw-counter reports");
    rep->add_option("inputs", report_inputs, "Report JSON files")->required();
    rep->add_option("--format", format, "json or csv");
    rep->add_option("-o,--output", output, "Output file (default stdout)");

    std::vector<std::string> compare_inputs;
    std::string baseline = "uvm";
    auto* cmp = app.add_subcommand("compare", "Speedups of saved reports against a baseline mode");
    cmp->add_option("inputs", compare_inputs, "Report JSON files")->required();
    cmp->add_option("--baseline", baseline, "Baseline mode");
    cmp->add_option("-o,--output", output, "Output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) {
            auto cfg = resolve(run_flags);
            auto f = parse_format(format);
            write_out(output, emit_report(run_experiment(cfg), f));
        } else if (*sw) {
            auto cfg = resolve(sweep_flags);
            auto f = parse_format(format);
            auto table = sweep(cfg, parse_axis(axis), parse_values(values), threads);
            write_out(output, emit_report(table, f));
        } else if (*conv) {
            bool binary = graph_in.size() > 5 && graph_in.substr(graph_in.size() - 5) == ".bcsr";
            CsrGraph g = binary ? load_binary_csr(graph_in) : load_edge_list(graph_in);
            save_binary_csr(g, graph_out);
            nlohmann::ordered_json summary;
            summary["vertices"] = g.vertex_count;
            summary["edges"] = g.edge_count;
            summary["output"] = graph_out;
            if (balanced) {
                auto b = csr_to_balanced(g, chunk_size);
                save_chunk_table(b, graph_out + ".chunks");
                summary["chunks"] = b.chunks.size();
                summary["chunk_size"] = chunk_size;
                summary["chunk_table_bytes"] = b.chunk_table_bytes();
                summary["overhead_bytes"] = b.overhead_bytes();
                summary["overhead_ratio"] = b.overhead_ratio();
                summary["chunk_output"] = graph_out + ".chunks";
            }
            std::cout << summary.dump(2) << "\n";
        } else if (*rep) {
            auto f = parse_format(format);
            std::vector<MetricsReport> all;
            for (const auto& path : report_inputs) {
                auto rs = load_reports(path);
                all.insert(all.end(), rs.begin(), rs.end());
            }
            write_out(output, all.size() == 1 ? emit_report(all.front(), f) : emit_report(all, f));
        } else if (*cmp) {
            std::vector<MetricsReport> all;
            for (const auto& path : compare_inputs) {
                auto rs = load_reports(path);
                all.insert(all.end(), rs.begin(), rs.end());
            }
            nlohmann::ordered_json j;
            j["schema_version"] = kSchemaVersion;
            j["baseline"] = baseline;
            j["rows"] = nlohmann::ordered_json::array();
            for (const auto& row : compare(all, baseline)) {
                j["rows"].push_back({{"mode", row.mode},
                                     {"workload", row.workload},
                                     {"kernel_time_ns", row.kernel_time_ns},
                                     {"setup_time_ns", row.setup_time_ns},
                                     {"speedup", row.speedup}});
            }
            write_out(output, j.dump(2) + "\n");
        }
    } catch (const StallError& e) {
        std::cerr << "stall: " << e.what() << "\n";
        return kExitStall;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitOk;
}
