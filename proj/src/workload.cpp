#include "gpuvm/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace gpuvm {

// ---------------------------------------------------------------- buffers

PageId ManagedBuffer::page_of(std::uint64_t index, std::uint64_t page_size) const {
    return base_page + (index * element_size) / page_size;
}

std::uint64_t ManagedBuffer::offset_of(std::uint64_t index, std::uint64_t page_size) const {
    return (index * element_size) % page_size;
}

std::uint64_t layout_pages(std::vector<ManagedBuffer>& buffers, std::uint64_t page_size) {
    std::uint64_t next = 0;
    for (auto& b : buffers) {
        b.base_page = next;
        next += (b.bytes() + page_size - 1) / page_size;
    }
    return next;
}

std::uint64_t footprint_bytes(const std::vector<ManagedBuffer>& buffers, std::uint64_t unit) {
    std::uint64_t total = 0;
    for (const auto& b : buffers) total += (b.bytes() + unit - 1) / unit * unit;
    return total;
}

std::uint64_t AccessProgram::workload_bytes() const {
    std::uint64_t total = 0;
    for (const auto& b : buffers) total += b.bytes();
    return total;
}

void AccessProgram::lane_elements(const AccessStep& s, std::vector<std::uint64_t>& out) const {
    out.clear();
    std::uint32_t mask = s.lane_mask;
    std::uint64_t k = 0;
    for (std::uint32_t lane = 0; lane < kLanes; ++lane) {
        if (!(mask & (1u << lane))) continue;
        if (s.gather)
            out.push_back(gather_table[s.first + k]);
        else
            out.push_back(static_cast<std::uint64_t>(static_cast<std::int64_t>(s.first) + s.stride * lane));
        ++k;
    }
}

void AccessProgram::validate() const {
    std::vector<std::uint64_t> lanes;
    for (std::uint64_t i = 0; i < steps.size(); ++i) {
        const auto& s = steps[i];
        if (s.warp >= warp_count) throw std::logic_error("step " + std::to_string(i) + " names an unknown warp");
        if (s.buffer >= buffers.size()) throw std::logic_error("step " + std::to_string(i) + " names an unknown buffer");
        if (s.lane_mask == 0) throw std::logic_error("step " + std::to_string(i) + " has no active lanes");
        if (s.dependency != kNoStep && s.dependency >= i)
            throw std::logic_error("step " + std::to_string(i) + " depends on a later step");
        lane_elements(s, lanes);
        for (auto e : lanes)
            if (e >= buffers[s.buffer].length)
                throw std::out_of_range("step " + std::to_string(i) + " touches element " + std::to_string(e) +
                                        " beyond buffer " + buffers[s.buffer].name);
    }
}

ProgramBuilder::ProgramBuilder(std::uint32_t warps) : warps_(warps) {}

std::uint16_t ProgramBuilder::add_buffer(std::string name, std::uint32_t element_size, std::uint64_t length,
                                         bool metadata) {
    if (element_size == 0) throw std::invalid_argument("element size must be positive");
    ManagedBuffer b;
    b.buffer_id = static_cast<std::uint32_t>(buffers_.size());
    b.name = std::move(name);
    b.element_size = element_size;
    b.length = length;
    b.metadata = metadata;
    buffers_.push_back(std::move(b));
    return static_cast<std::uint16_t>(buffers_.size() - 1);
}

void ProgramBuilder::begin_phase() { phases_.emplace_back(warps_); }

std::uint64_t ProgramBuilder::push(std::uint32_t warp, AccessStep s) {
    if (phases_.empty()) begin_phase();
    if (warp >= warps_) throw std::out_of_range("warp " + std::to_string(warp) + " out of range");
    s.warp = warp;
    if (s.dependency != kNoStep) deps_ = true;
    phases_.back()[warp].push_back(Pending{s, next_id_});
    return next_id_++;
}

std::uint64_t ProgramBuilder::strided(std::uint32_t warp, std::uint16_t buffer, AccessKind rw, std::uint64_t first,
                                      std::int64_t stride, std::uint32_t lanes, std::uint64_t dependency) {
    if (lanes == 0 || lanes > kLanes) throw std::invalid_argument("a warp step needs 1..32 lanes");
    AccessStep s;
    s.buffer = buffer;
    s.rw = rw;
    s.lane_mask = lanes == kLanes ? 0xffffffffu : ((1u << lanes) - 1);
    s.first = first;
    s.stride = stride;
    s.dependency = dependency;
    return push(warp, s);
}

std::uint64_t ProgramBuilder::gather(std::uint32_t warp, std::uint16_t buffer, AccessKind rw,
                                     std::span<const std::uint64_t> elements, std::uint64_t dependency) {
    if (elements.empty() || elements.size() > kLanes) throw std::invalid_argument("a warp step needs 1..32 lanes");
    AccessStep s;
    s.buffer = buffer;
    s.rw = rw;
    s.gather = true;
    s.lane_mask = elements.size() == kLanes ? 0xffffffffu : ((1u << elements.size()) - 1);
    s.first = gather_.size();
    s.stride = 0;
    s.dependency = dependency;
    gather_.insert(gather_.end(), elements.begin(), elements.end());
    return push(warp, s);
}

AccessProgram ProgramBuilder::finish() {
    AccessProgram p;
    p.buffers = std::move(buffers_);
    p.warp_count = warps_;
    p.compute_per_step = compute_;
    p.has_dependencies = deps_;
    p.gather_table = std::move(gather_);
    std::vector<std::uint64_t> final_index(next_id_, kNoStep);
    std::size_t total = 0;
    for (const auto& ph : phases_)
        for (const auto& w : ph) total += w.size();
    p.steps.reserve(total);
    for (auto& ph : phases_) {
        p.phase_begin.push_back(p.steps.size());
        for (auto& w : ph) {
            for (auto& pend : w) {
                final_index[pend.id] = p.steps.size();
                p.steps.push_back(pend.step);
            }
            std::vector<Pending>().swap(w);
        }
    }
    if (deps_)
        for (auto& s : p.steps)
            if (s.dependency != kNoStep) s.dependency = final_index.at(s.dependency);
    phases_.clear();
    return p;
}

UniqueBytes unique_bytes_needed(const AccessProgram& p) {
    UniqueBytes u;
    std::vector<std::vector<bool>> seen(p.buffers.size());
    for (std::size_t b = 0; b < p.buffers.size(); ++b) seen[b].assign(p.buffers[b].length, false);
    u.per_buffer.assign(p.buffers.size(), 0);
    std::vector<std::uint64_t> lanes;
    for (const auto& s : p.steps) {
        p.lane_elements(s, lanes);
        auto& bits = seen[s.buffer];
        for (auto e : lanes) {
            if (!bits[e]) {
                bits[e] = true;
                u.per_buffer[s.buffer] += p.buffers[s.buffer].element_size;
            }
        }
    }
    for (std::size_t b = 0; b < p.buffers.size(); ++b) {
        u.total += u.per_buffer[b];
        if (!p.buffers[b].metadata) u.data += u.per_buffer[b];
    }
    return u;
}

// ---------------------------------------------------------------- rng

namespace {
std::uint64_t splitmix(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(std::uint64_t seed) {
    for (auto& s : s_) s = splitmix(seed);
}

std::uint64_t Rng::next() {
    std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
}

std::uint64_t Rng::below(std::uint64_t bound) {
    if (bound == 0) return 0;
    std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
        std::uint64_t r = next();
        if (r >= threshold) return r % bound;
    }
}

double Rng::unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

// ---------------------------------------------------------------- graphs

void CsrGraph::validate() const {
    if (offsets.size() != vertex_count + 1) throw std::logic_error("offsets length mismatch");
    if (offsets.front() != 0 || offsets.back() != edge_count) throw std::logic_error("offsets do not span the edges");
    for (std::uint64_t v = 0; v < vertex_count; ++v)
        if (offsets[v] > offsets[v + 1]) throw std::logic_error("offsets decrease at vertex " + std::to_string(v));
    if (edges.size() != edge_count) throw std::logic_error("edge array length mismatch");
    for (auto d : edges)
        if (d >= vertex_count) throw std::logic_error("edge destination out of range");
    if (!weights.empty() && weights.size() != edge_count) throw std::logic_error("weight array length mismatch");
}

CsrGraph build_csr(std::uint64_t vertex_count, std::vector<Edge> edges, bool weighted) {
    CsrGraph g;
    g.vertex_count = vertex_count;
    g.edge_count = edges.size();
    g.offsets.assign(vertex_count + 1, 0);
    for (const auto& e : edges) {
        if (e.src >= vertex_count || e.dst >= vertex_count) throw std::out_of_range("edge endpoint out of range");
        ++g.offsets[e.src + 1];
    }
    for (std::uint64_t v = 0; v < vertex_count; ++v) g.offsets[v + 1] += g.offsets[v];
    g.edges.resize(edges.size());
    if (weighted) g.weights.resize(edges.size());
    std::vector<std::uint64_t> cursor(g.offsets.begin(), g.offsets.end() - 1);
    for (const auto& e : edges) {
        auto at = cursor[e.src]++;
        g.edges[at] = e.dst;
        if (weighted) g.weights[at] = e.weight;
    }
    return g;
}

CsrGraph parse_edge_list(std::string_view text) {
    std::vector<Edge> edges;
    bool weighted = false;
    std::uint64_t max_id = 0;
    bool any = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        std::vector<std::string_view> tok;
        std::size_t i = 0;
        while (i < line.size()) {
            while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
            std::size_t j = i;
            while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
            if (j > i) tok.push_back(line.substr(i, j - i));
            i = j;
        }
        if (tok.empty()) {
            if (nl == text.size()) break;
            continue;
        }
        if (tok.size() < 2 || tok.size() > 3)
            throw ParseError("line " + std::to_string(line_no) + ": expected 'src dst [weight]'", line_no);
        std::uint64_t ids[2];
        for (int k = 0; k < 2; ++k) {
            auto [p, ec] = std::from_chars(tok[k].data(), tok[k].data() + tok[k].size(), ids[k]);
            if (ec == std::errc::result_out_of_range || (ec == std::errc{} && ids[k] == UINT64_MAX))
                throw ParseError("line " + std::to_string(line_no) + ": vertex id overflow", line_no);
            if (ec != std::errc{} || p != tok[k].data() + tok[k].size())
                throw ParseError("line " + std::to_string(line_no) + ": bad vertex id '" + std::string(tok[k]) + "'",
                                 line_no);
        }
        double w = 1.0;
        if (tok.size() == 3) {
            auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), w);
            if (ec != std::errc{} || p != tok[2].data() + tok[2].size() || !std::isfinite(w))
                throw ParseError("line " + std::to_string(line_no) + ": bad weight '" + std::string(tok[2]) + "'",
                                 line_no);
            weighted = true;
        }
        max_id = std::max({max_id, ids[0], ids[1]});
        any = true;
        edges.push_back(Edge{ids[0], ids[1], w});
        if (nl == text.size()) break;
    }
    return build_csr(any ? max_id + 1 : 0, std::move(edges), weighted);
}

CsrGraph load_edge_list(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open edge list '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_edge_list(ss.str());
}

namespace {
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint64_t get_u64(std::string_view in, std::size_t& at) {
    if (at + 8 > in.size()) throw IoError("binary CSR truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    at += 8;
    return v;
}
constexpr std::string_view kMagic = "BCSR1";
}  // namespace

std::string encode_binary_csr(const CsrGraph& g) {
    std::string out(kMagic);
    put_u64(out, g.vertex_count);
    put_u64(out, g.edge_count);
    put_u64(out, g.weighted() ? 1 : 0);
    for (auto o : g.offsets) put_u64(out, o);
    for (auto e : g.edges) put_u64(out, e);
    for (double w : g.weights) {
        std::uint64_t bits;
        std::memcpy(&bits, &w, sizeof bits);
        put_u64(out, bits);
    }
    return out;
}

CsrGraph decode_binary_csr(std::string_view bytes) {
    if (bytes.substr(0, kMagic.size()) != kMagic) throw IoError("not a BCSR1 file");
    std::size_t at = kMagic.size();
    CsrGraph g;
    g.vertex_count = get_u64(bytes, at);
    g.edge_count = get_u64(bytes, at);
    std::uint64_t flags = get_u64(bytes, at);
    std::uint64_t words = g.vertex_count + 1 + g.edge_count * ((flags & 1) ? 2 : 1);
    if ((bytes.size() - at) / 8 < words) throw IoError("binary CSR truncated");
    g.offsets.resize(g.vertex_count + 1);
    for (auto& o : g.offsets) o = get_u64(bytes, at);
    g.edges.resize(g.edge_count);
    for (auto& e : g.edges) e = get_u64(bytes, at);
    if (flags & 1) {
        g.weights.resize(g.edge_count);
        for (auto& w : g.weights) {
            std::uint64_t bits = get_u64(bytes, at);
            std::memcpy(&w, &bits, sizeof w);
        }
    }
    try {
        g.validate();
    } catch (const std::logic_error& e) {
        throw IoError(std::string("corrupt binary CSR: ") + e.what());
    }
    return g;
}

void save_binary_csr(const CsrGraph& g, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    auto bytes = encode_binary_csr(g);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

CsrGraph load_binary_csr(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return decode_binary_csr(ss.str());
}

std::uint64_t BalancedCsrGraph::overhead_bytes() const {
    std::uint64_t offsets = original ? (original->vertex_count + 1) * 8 : 0;
    return chunk_table_bytes() > offsets ? chunk_table_bytes() - offsets : 0;
}

double BalancedCsrGraph::overhead_ratio() const {
    if (!original || original->edge_count == 0) return 0.0;
    return static_cast<double>(overhead_bytes()) / static_cast<double>(original->edge_count * 8);
}

BalancedCsrGraph csr_to_balanced(const CsrGraph& g, std::uint64_t chunk_size) {
    if (chunk_size == 0) throw std::invalid_argument("chunk_size must be at least 1");
    BalancedCsrGraph b;
    b.chunk_size = chunk_size;
    b.original = &g;
    for (std::uint64_t v = 0; v < g.vertex_count; ++v)
        for (std::uint64_t e = g.offsets[v]; e < g.offsets[v + 1]; e += chunk_size)
            b.chunks.push_back(EdgeChunk{v, e, std::min(e + chunk_size, g.offsets[v + 1])});
    return b;
}

void save_chunk_table(const BalancedCsrGraph& b, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path + "'");
    std::string bytes("BCHK1");
    put_u64(bytes, b.chunk_size);
    put_u64(bytes, b.chunks.size());
    for (const auto& c : b.chunks) {
        put_u64(bytes, c.owner);
        put_u64(bytes, c.begin);
        put_u64(bytes, c.end);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<std::uint64_t> partition_chunks(const BalancedCsrGraph& b, std::uint32_t warps) {
    std::vector<std::uint64_t> bounds(warps + 1, 0);
    const std::uint64_t n = b.chunks.size();
    std::uint64_t total = 0;
    for (const auto& c : b.chunks) total += c.end - c.begin;
    if (warps == 0) return bounds;
    if (total == 0) {
        for (std::uint32_t k = 0; k <= warps; ++k) bounds[k] = n * k / warps;
        return bounds;
    }
    std::vector<std::uint64_t> prefix(n + 1, 0);
    for (std::uint64_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + (b.chunks[i].end - b.chunks[i].begin);
    for (std::uint32_t k = 1; k < warps; ++k) {
        // first chunk boundary whose edge prefix reaches k/warps of the edges
        const unsigned __int128 target = static_cast<unsigned __int128>(total) * k;
        auto it = std::partition_point(prefix.begin(), prefix.end(), [&](std::uint64_t p) {
            return static_cast<unsigned __int128>(p) * warps < target;
        });
        std::uint64_t at = static_cast<std::uint64_t>(it - prefix.begin());
        if (n >= warps) {
            // every warp keeps at least one chunk
            at = std::clamp<std::uint64_t>(at, bounds[k - 1] + 1, n - (warps - k));
        } else {
            at = std::max(at, bounds[k - 1]);
        }
        bounds[k] = std::min(at, n);
    }
    bounds[warps] = n;
    return bounds;
}

CsrGraph make_random_graph(std::uint64_t vertices, std::uint64_t edges, std::uint64_t seed, bool weighted,
                           bool symmetric) {
    Rng rng(seed);
    std::vector<Edge> list;
    list.reserve(symmetric ? edges * 2 : edges);
    for (std::uint64_t i = 0; i < edges && vertices > 0; ++i) {
        std::uint64_t s = rng.below(vertices), d = rng.below(vertices);
        double w = weighted ? static_cast<double>(1 + rng.below(100)) : 1.0;
        list.push_back(Edge{s, d, w});
        if (symmetric) list.push_back(Edge{d, s, w});
    }
    return build_csr(vertices, std::move(list), weighted);
}

CsrGraph make_power_law_graph(std::uint64_t vertices, std::uint64_t edges, double exponent, std::uint64_t seed,
                              bool weighted, bool symmetric) {
    if (vertices == 0) return build_csr(0, {}, weighted);
    if (!(exponent > 1.0)) throw std::invalid_argument("power-law exponent must exceed 1");
    std::vector<double> cdf(vertices);
    double acc = 0;
    for (std::uint64_t i = 0; i < vertices; ++i) {
        acc += std::pow(static_cast<double>(i + 1), -1.0 / (exponent - 1.0));
        cdf[i] = acc;
    }
    Rng rng(seed);
    auto draw = [&] {
        double x = rng.unit() * acc;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), x);
        return static_cast<std::uint64_t>(std::min<std::ptrdiff_t>(it - cdf.begin(), vertices - 1));
    };
    std::vector<Edge> list;
    for (std::uint64_t i = 0; i < edges; ++i) {
        std::uint64_t s = draw(), d = rng.below(vertices);
        double w = weighted ? static_cast<double>(1 + rng.below(100)) : 1.0;
        list.push_back(Edge{s, d, w});
        if (symmetric) list.push_back(Edge{d, s, w});
    }
    return build_csr(vertices, std::move(list), weighted);
}

CsrGraph make_star_graph(std::uint64_t leaves, std::uint64_t extra, std::uint64_t seed, bool weighted) {
    Rng rng(seed);
    std::vector<Edge> list;
    for (std::uint64_t l = 1; l <= leaves; ++l) {
        double w = weighted ? static_cast<double>(1 + rng.below(100)) : 1.0;
        list.push_back(Edge{0, l, w});
        list.push_back(Edge{l, 0, w});
    }
    for (std::uint64_t i = 0; i < extra && leaves > 1; ++i) {
        std::uint64_t a = 1 + rng.below(leaves), b = 1 + rng.below(leaves);
        double w = weighted ? static_cast<double>(1 + rng.below(100)) : 1.0;
        list.push_back(Edge{a, b, w});
        list.push_back(Edge{b, a, w});
    }
    return build_csr(leaves + 1, std::move(list), weighted);
}

std::vector<std::uint64_t> pick_sources(const CsrGraph& g, std::size_t count, std::uint64_t min_degree,
                                        std::uint64_t seed) {
    std::vector<std::uint64_t> eligible;
    for (std::uint64_t v = 0; v < g.vertex_count; ++v)
        if (g.degree(v) >= min_degree) eligible.push_back(v);
    Rng rng(seed);
    std::size_t take = std::min(count, eligible.size());
    for (std::size_t i = 0; i < take; ++i) std::swap(eligible[i], eligible[i + rng.below(eligible.size() - i)]);
    eligible.resize(take);
    return eligible;
}

const char* to_string(Kernel k) {
    switch (k) {
        case Kernel::MVT: return "mvt";
        case Kernel::ATAX: return "atax";
        case Kernel::BIGC: return "bigc";
    }
    return "?";
}

const char* to_string(Algo a) {
    switch (a) {
        case Algo::BFS: return "bfs";
        case Algo::CC: return "cc";
        case Algo::SSSP: return "sssp";
    }
    return "?";
}

const char* to_string(Representation r) { return r == Representation::Csr ? "csr" : "balanced"; }

// ---------------------------------------------------------------- dense kernels

namespace {
// Warp w owns stripes [w*S/W, (w+1)*S/W) of 32 consecutive elements.
template <class F>
void for_each_stripe(std::uint64_t n, std::uint32_t warps, F&& f) {
    std::uint64_t stripes = (n + kLanes - 1) / kLanes;
    for (std::uint32_t w = 0; w < warps; ++w) {
        std::uint64_t lo = stripes * w / warps, hi = stripes * (w + 1) / warps;
        for (std::uint64_t s = lo; s < hi; ++s) {
            std::uint64_t first = s * kLanes;
            auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, n - first));
            f(w, first, lanes);
        }
    }
}
}  // namespace

AccessProgram gen_stream(std::uint64_t n, std::uint32_t warps, std::uint32_t element_size) {
    if (n == 0) throw std::invalid_argument("stream length must be positive");
    ProgramBuilder b(warps);
    auto a = b.add_buffer("A", element_size, n);
    b.begin_phase();
    for_each_stripe(n, warps, [&](std::uint32_t w, std::uint64_t first, std::uint32_t lanes) {
        b.strided(w, a, AccessKind::Read, first, 1, lanes);
    });
    return b.finish();
}

AccessProgram gen_vecadd(std::uint64_t n, std::uint32_t warps, std::uint32_t element_size) {
    if (n == 0) throw std::invalid_argument("vecadd length must be positive");
    ProgramBuilder b(warps);
    auto A = b.add_buffer("A", element_size, n);
    auto B = b.add_buffer("B", element_size, n);
    auto C = b.add_buffer("C", element_size, n);
    b.begin_phase();
    if (warps == 0) return b.finish();
    // 4KB tiles dealt round-robin, so concurrent warps sweep a contiguous window
    const std::uint64_t tile = std::max<std::uint64_t>(kLanes, 4096 / element_size);
    for (std::uint64_t t = 0; t * tile < n; ++t) {
        auto w = static_cast<std::uint32_t>(t % warps);
        std::uint64_t end = std::min(n, (t + 1) * tile);
        for (std::uint64_t first = t * tile; first < end; first += kLanes) {
            auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, end - first));
            b.strided(w, A, AccessKind::Read, first, 1, lanes);
            b.strided(w, B, AccessKind::Read, first, 1, lanes);
            b.strided(w, C, AccessKind::Write, first, 1, lanes);
        }
    }
    return b.finish();
}

AccessProgram gen_column_walk(std::uint64_t rows, std::uint64_t cols, Kernel kernel, const ColumnWalkOptions& opt) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("matrix dimensions must be positive");
    if (opt.warps == 0) throw std::invalid_argument("column walk needs at least one warp");
    const std::uint32_t W = opt.warps;
    ProgramBuilder b(W);
    b.set_compute(opt.compute_per_step);
    auto A = b.add_buffer("A", opt.element_size, rows * cols);
    std::uint16_t vin = 0, vout = 0, xin = 0, tmp = 0;
    switch (kernel) {
        case Kernel::MVT:
            vin = b.add_buffer("y1", opt.element_size, rows);
            vout = b.add_buffer("x1", opt.element_size, cols);
            break;
        case Kernel::ATAX:
            xin = b.add_buffer("x", opt.element_size, cols);
            tmp = b.add_buffer("tmp", opt.element_size, rows);
            vout = b.add_buffer("y", opt.element_size, cols);
            vin = tmp;
            break;
        case Kernel::BIGC:
            vout = b.add_buffer("out", opt.element_size, cols);
            break;
    }
    if (kernel == Kernel::ATAX) {
        // tmp = A x: lanes cover consecutive columns of one row
        b.begin_phase();
        for (std::uint64_t r = 0; r < rows; ++r) {
            auto w = static_cast<std::uint32_t>(r % W);
            for (std::uint64_t c0 = 0; c0 < cols; c0 += kLanes) {
                auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, cols - c0));
                b.strided(w, A, AccessKind::Read, r * cols + c0, 1, lanes);
                b.strided(w, xin, AccessKind::Read, c0, 1, lanes);
            }
            b.strided(w, tmp, AccessKind::Write, r, 1, 1);
        }
    }
    // lanes cover 32 rows of one column; column c starts its sweep at row window c mod windows
    b.begin_phase();
    const std::uint64_t windows = (rows + kLanes - 1) / kLanes;
    for (std::uint64_t c = 0; c < cols; ++c) {
        auto w = static_cast<std::uint32_t>(c % W);
        for (std::uint64_t i = 0; i < windows; ++i) {
            std::uint64_t r0 = (c + i) % windows * kLanes;
            auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, rows - r0));
            b.strided(w, A, AccessKind::Read, r0 * cols + c, static_cast<std::int64_t>(cols), lanes);
            if (kernel != Kernel::BIGC) b.strided(w, vin, AccessKind::Read, r0, 1, lanes);
        }
        b.strided(w, vout, AccessKind::Write, c, 1, 1);
    }
    return b.finish();
}

// ---------------------------------------------------------------- query scan

QueryWorkload make_query_workload(std::uint64_t rows, std::uint32_t row_bytes, double selectivity, std::uint64_t seed) {
    if (!(selectivity > 0.0 && selectivity <= 1.0)) throw std::invalid_argument("selectivity must be in (0, 1]");
    if (row_bytes == 0) throw std::invalid_argument("row_bytes must be positive");
    QueryWorkload q;
    q.row_count = rows;
    q.row_bytes = row_bytes;
    q.selectivity = selectivity;
    q.seed = seed;
    auto want = static_cast<std::uint64_t>(std::llround(selectivity * static_cast<double>(rows)));
    want = std::min(want, rows);
    // Floyd's sampling: exactly `want` distinct rows.
    Rng rng(seed);
    std::vector<std::uint64_t> picked;
    picked.reserve(want);
    std::vector<bool> in(rows, false);
    for (std::uint64_t j = rows - want; j < rows; ++j) {
        std::uint64_t t = rng.below(j + 1);
        if (in[t]) t = j;
        in[t] = true;
    }
    for (std::uint64_t r = 0; r < rows; ++r)
        if (in[r]) picked.push_back(r);
    q.matching_rows = std::move(picked);
    return q;
}

AccessProgram gen_query_scan(const QueryWorkload& q, std::uint32_t columns, std::uint32_t warps) {
    if (q.row_count == 0) throw std::invalid_argument("query needs rows");
    ProgramBuilder b(warps);
    auto pred = b.add_buffer("predicate", kPredicateBytes, q.row_count);
    std::vector<std::uint16_t> payload;
    for (std::uint32_t c = 0; c < columns; ++c)
        payload.push_back(b.add_buffer("payload" + std::to_string(c), q.row_bytes, q.row_count));
    b.begin_phase();
    std::vector<std::uint64_t> hits;
    auto it = q.matching_rows.begin();
    for_each_stripe(q.row_count, warps, [&](std::uint32_t w, std::uint64_t first, std::uint32_t lanes) {
        b.strided(w, pred, AccessKind::Read, first, 1, lanes);
        hits.clear();
        it = std::lower_bound(q.matching_rows.begin(), q.matching_rows.end(), first);
        while (it != q.matching_rows.end() && *it < first + lanes) hits.push_back(*it++);
        if (hits.empty()) return;
        for (auto col : payload) b.gather(w, col, AccessKind::Read, hits);
    });
    return b.finish();
}

}  // namespace gpuvm
