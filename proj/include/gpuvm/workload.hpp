#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpuvm/engine.hpp"
#include "gpuvm/paging.hpp"

namespace gpuvm {

enum class AccessKind : std::uint8_t { Read, Write };

constexpr std::uint32_t kLanes = 32;
constexpr std::uint64_t kNoStep = std::numeric_limits<std::uint64_t>::max();

struct ManagedBuffer {
    std::uint32_t buffer_id = 0;
    std::string name;
    std::uint32_t element_size = 4;
    std::uint64_t length = 0;
    PageId base_page = 0;
    bool metadata = false;  // index structures (offsets, chunk tables, frontier flags)

    std::uint64_t bytes() const { return length * element_size; }
    PageId page_of(std::uint64_t index, std::uint64_t page_size) const;
    std::uint64_t offset_of(std::uint64_t index, std::uint64_t page_size) const;
};

// Assigns base_page so that buffers are packed back to back at page granularity.
std::uint64_t layout_pages(std::vector<ManagedBuffer>& buffers, std::uint64_t page_size);
// Bytes occupied when every buffer is rounded up to whole units.
std::uint64_t footprint_bytes(const std::vector<ManagedBuffer>& buffers, std::uint64_t unit);

struct AccessStep {
    std::uint32_t warp = 0;
    std::uint16_t buffer = 0;
    AccessKind rw = AccessKind::Read;
    bool gather = false;
    std::uint32_t lane_mask = 0;
    // Strided: lane i touches element first + i*stride. Gather: the k-th active lane
    // touches gather_table[first + k].
    std::uint64_t first = 0;
    std::int64_t stride = 1;
    std::uint64_t dependency = kNoStep;
};

struct AccessProgram {
    std::vector<ManagedBuffer> buffers;
    std::vector<AccessStep> steps;            // ordered by (phase, warp, program order)
    std::vector<std::uint64_t> phase_begin;   // first step index of each phase
    std::vector<std::uint64_t> gather_table;
    std::uint32_t warp_count = 0;
    Duration compute_per_step{};
    bool has_dependencies = false;

    std::uint64_t workload_bytes() const;
    std::size_t phase_count() const { return phase_begin.size(); }
    std::uint64_t phase_end(std::size_t p) const { return p + 1 < phase_begin.size() ? phase_begin[p + 1] : steps.size(); }

    // Active-lane element indices of a step, in lane order.
    void lane_elements(const AccessStep& s, std::vector<std::uint64_t>& out) const;
    void validate() const;
};

class ProgramBuilder {
public:
    explicit ProgramBuilder(std::uint32_t warps);

    std::uint16_t add_buffer(std::string name, std::uint32_t element_size, std::uint64_t length, bool metadata = false);
    void begin_phase();
    std::uint64_t strided(std::uint32_t warp, std::uint16_t buffer, AccessKind rw, std::uint64_t first,
                          std::int64_t stride, std::uint32_t lanes, std::uint64_t dependency = kNoStep);
    std::uint64_t gather(std::uint32_t warp, std::uint16_t buffer, AccessKind rw, std::span<const std::uint64_t> elements,
                         std::uint64_t dependency = kNoStep);
    void set_compute(Duration d) { compute_ = d; }
    AccessProgram finish();

private:
    struct Pending {
        AccessStep step;
        std::uint64_t id;
    };
    std::uint64_t push(std::uint32_t warp, AccessStep s);

    std::vector<ManagedBuffer> buffers_;
    std::vector<std::vector<std::vector<Pending>>> phases_;  // [phase][warp]
    std::vector<std::uint64_t> gather_;
    std::uint32_t warps_;
    std::uint64_t next_id_ = 0;
    Duration compute_{};
    bool deps_ = false;
};

// Bytes in the union of touched element ranges, per buffer and overall.
struct UniqueBytes {
    std::vector<std::uint64_t> per_buffer;
    std::uint64_t total = 0;
    std::uint64_t data = 0;  // excluding metadata buffers
};
UniqueBytes unique_bytes_needed(const AccessProgram& p);

// ---- portable seeded randomness (identical on every standard library) ----
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next();
    std::uint64_t below(std::uint64_t bound);  // uniform in [0, bound)
    double unit();                              // uniform in [0, 1)

private:
    std::uint64_t s_[4];
};

// ---- graphs ----
struct CsrGraph {
    std::uint64_t vertex_count = 0;
    std::uint64_t edge_count = 0;
    std::vector<std::uint64_t> offsets{0};
    std::vector<std::uint64_t> edges;
    std::vector<double> weights;  // empty when unweighted

    bool weighted() const { return !weights.empty(); }
    std::uint64_t degree(std::uint64_t v) const { return offsets[v + 1] - offsets[v]; }
    void validate() const;
};

struct Edge {
    std::uint64_t src, dst;
    double weight = 1.0;
};

CsrGraph build_csr(std::uint64_t vertex_count, std::vector<Edge> edges, bool weighted);

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& msg, std::size_t line) : std::runtime_error(msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

CsrGraph parse_edge_list(std::string_view text);
CsrGraph load_edge_list(const std::string& path);
void save_binary_csr(const CsrGraph& g, const std::string& path);
CsrGraph load_binary_csr(const std::string& path);
std::string encode_binary_csr(const CsrGraph& g);
CsrGraph decode_binary_csr(std::string_view bytes);

struct EdgeChunk {
    std::uint64_t owner;
    std::uint64_t begin;  // edge index into the original CSR
    std::uint64_t end;
};

struct BalancedCsrGraph {
    std::uint64_t chunk_size = 256;
    std::vector<EdgeChunk> chunks;
    const CsrGraph* original = nullptr;

    // A chunk entry packs the owner id and slice start; the table replaces the CSR offsets array.
    static constexpr std::uint64_t kChunkEntryBytes = 8;
    std::uint64_t chunk_table_bytes() const { return chunks.size() * kChunkEntryBytes; }
    // Bytes beyond the offsets array the chunk table replaces.
    std::uint64_t overhead_bytes() const;
    // overhead_bytes relative to the edge array (8-byte edge ids).
    double overhead_ratio() const;
};

BalancedCsrGraph csr_to_balanced(const CsrGraph& g, std::uint64_t chunk_size = 256);
void save_chunk_table(const BalancedCsrGraph& b, const std::string& path);

// Contiguous split of the chunk list into `warps` runs of roughly equal edge counts.
std::vector<std::uint64_t> partition_chunks(const BalancedCsrGraph& b, std::uint32_t warps);

CsrGraph make_random_graph(std::uint64_t vertices, std::uint64_t edges, std::uint64_t seed, bool weighted,
                           bool symmetric);
CsrGraph make_power_law_graph(std::uint64_t vertices, std::uint64_t edges, double exponent, std::uint64_t seed,
                              bool weighted, bool symmetric);
// Hub 0 joined to `leaves` leaves in both directions, plus `extra` random symmetric edges among leaves.
CsrGraph make_star_graph(std::uint64_t leaves, std::uint64_t extra, std::uint64_t seed, bool weighted);

// ---- workload generators ----
enum class Kernel : std::uint8_t { MVT, ATAX, BIGC };
enum class Algo : std::uint8_t { BFS, CC, SSSP };
enum class Representation : std::uint8_t { Csr, Balanced };

const char* to_string(Kernel k);
const char* to_string(Algo a);
const char* to_string(Representation r);

AccessProgram gen_stream(std::uint64_t n, std::uint32_t warps, std::uint32_t element_size = 4);
AccessProgram gen_vecadd(std::uint64_t n, std::uint32_t warps, std::uint32_t element_size = 4);

struct ColumnWalkOptions {
    std::uint32_t warps = 64;
    std::uint32_t element_size = 4;
    Duration compute_per_step{};
};
AccessProgram gen_column_walk(std::uint64_t rows, std::uint64_t cols, Kernel kernel,
                              const ColumnWalkOptions& opt = ColumnWalkOptions{});

constexpr std::int64_t kUnreached = -1;

struct TraversalResult {
    Algo algo = Algo::BFS;
    std::vector<std::uint64_t> sources;
    std::vector<std::vector<std::int64_t>> levels;  // BFS, per source
    std::vector<std::uint64_t> labels;              // CC
    std::vector<std::vector<double>> distances;     // SSSP, per source
    std::vector<std::vector<std::uint64_t>> frontier_sizes;  // per source, expansions that discovered vertices
    std::uint64_t iterations = 0;                             // summed over sources
};

struct TraversalOptions {
    std::uint32_t vertices_per_warp = 32;
    std::uint32_t warps = 0;  // 0: derived from vertices_per_warp
};

struct TraversalProgram {
    AccessProgram program;
    TraversalResult result;
};

TraversalProgram gen_graph_traversal(const CsrGraph& g, Algo algo, const std::vector<std::uint64_t>& sources,
                                     const TraversalOptions& opt = TraversalOptions{});
TraversalProgram gen_graph_traversal(const BalancedCsrGraph& g, Algo algo, const std::vector<std::uint64_t>& sources,
                                     const TraversalOptions& opt = TraversalOptions{});

// Picks up to `count` distinct sources with at least `min_degree` neighbours.
std::vector<std::uint64_t> pick_sources(const CsrGraph& g, std::size_t count, std::uint64_t min_degree,
                                        std::uint64_t seed);

struct QueryWorkload {
    std::uint64_t row_count = 0;
    std::uint32_t row_bytes = 512;
    double selectivity = 0.0008;
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> matching_rows;  // sorted
};

constexpr std::uint32_t kPredicateBytes = 4;

QueryWorkload make_query_workload(std::uint64_t rows, std::uint32_t row_bytes, double selectivity, std::uint64_t seed);
AccessProgram gen_query_scan(const QueryWorkload& q, std::uint32_t columns, std::uint32_t warps = 64);

}  // namespace gpuvm
