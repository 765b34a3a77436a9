#include <algorithm>
#include <limits>

#include "gpuvm/workload.hpp"

namespace gpuvm {

namespace {

constexpr std::int64_t kIdle = -1;

class TraversalGen {
public:
    TraversalGen(const CsrGraph& g, const BalancedCsrGraph* bal, Algo algo, const TraversalOptions& opt)
        : g_(g), bal_(bal), algo_(algo), warps_(warp_count(g, opt)), b_(warps_) {
        g.validate();
        if (algo == Algo::SSSP && !g.weighted()) throw std::invalid_argument("SSSP needs a weighted graph");
        vbounds_.resize(warps_ + 1);
        for (std::uint32_t w = 0; w <= warps_; ++w)
            vbounds_[w] = opt.warps ? g.vertex_count * w / warps_
                                    : std::min<std::uint64_t>(g.vertex_count, std::uint64_t{w} * opt.vertices_per_warp);
        if (bal_) {
            cbounds_ = partition_chunks(*bal_, warps_);
            chunks_ = b_.add_buffer("chunks", static_cast<std::uint32_t>(BalancedCsrGraph::kChunkEntryBytes),
                                    std::max<std::uint64_t>(1, bal_->chunks.size()), true);
        } else {
            offsets_ = b_.add_buffer("offsets", 8, g.vertex_count + 1, true);
        }
        edges_ = b_.add_buffer("edges", 8, std::max<std::uint64_t>(1, g.edge_count));
        if (algo == Algo::SSSP) weights_ = b_.add_buffer("weights", 8, std::max<std::uint64_t>(1, g.edge_count));
        state_ = b_.add_buffer(algo == Algo::BFS ? "level" : algo == Algo::CC ? "label" : "dist",
                               algo == Algo::SSSP ? 8 : 4, g.vertex_count);
        flags_ = b_.add_buffer("frontier", 4, g.vertex_count, true);
        flag_.assign(g.vertex_count, kIdle);
        res_.algo = algo;
    }

    TraversalProgram run(const std::vector<std::uint64_t>& sources) {
        if (algo_ == Algo::CC) {
            res_.labels.resize(g_.vertex_count);
            for (std::uint64_t v = 0; v < g_.vertex_count; ++v) {
                res_.labels[v] = v;
                flag_[v] = 0;
            }
            init_phase();
            res_.frontier_sizes.emplace_back();
            iterate(g_.vertex_count, res_.frontier_sizes.back());
        } else {
            for (auto s : sources) {
                if (s >= g_.vertex_count) throw std::out_of_range("source vertex out of range");
                res_.sources.push_back(s);
                std::fill(flag_.begin(), flag_.end(), kIdle);
                flag_[s] = 0;
                if (algo_ == Algo::BFS) {
                    level_.assign(g_.vertex_count, kUnreached);
                    level_[s] = 0;
                } else {
                    dist_.assign(g_.vertex_count, std::numeric_limits<double>::infinity());
                    dist_[s] = 0.0;
                }
                init_phase();
                res_.frontier_sizes.emplace_back();
                iterate(1, res_.frontier_sizes.back());
                if (algo_ == Algo::BFS)
                    res_.levels.push_back(level_);
                else
                    res_.distances.push_back(dist_);
            }
        }
        TraversalProgram out;
        out.program = b_.finish();
        out.result = std::move(res_);
        return out;
    }

private:
    static std::uint32_t warp_count(const CsrGraph& g, const TraversalOptions& opt) {
        if (opt.warps) return opt.warps;
        if (opt.vertices_per_warp == 0) throw std::invalid_argument("vertices_per_warp must be positive");
        return static_cast<std::uint32_t>(
            std::max<std::uint64_t>(1, (g.vertex_count + opt.vertices_per_warp - 1) / opt.vertices_per_warp));
    }

    // Every warp initialises the state and frontier entries of its vertex range.
    void init_phase() {
        b_.begin_phase();
        for (std::uint32_t w = 0; w < warps_; ++w)
            for (std::uint64_t v = vbounds_[w]; v < vbounds_[w + 1]; v += kLanes) {
                auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, vbounds_[w + 1] - v));
                b_.strided(w, state_, AccessKind::Write, v, 1, lanes);
                b_.strided(w, flags_, AccessKind::Write, v, 1, lanes);
            }
    }

    void iterate(std::uint64_t frontier, std::vector<std::uint64_t>& sizes) {
        std::int64_t iter = 0;
        while (frontier > 0) {
            b_.begin_phase();
            active_.assign(g_.vertex_count, false);
            for (std::uint64_t v = 0; v < g_.vertex_count; ++v) active_[v] = flag_[v] == iter;
            discovered_ = 0;
            for (std::uint32_t w = 0; w < warps_; ++w) {
                if (bal_)
                    balanced_warp(w, iter);
                else
                    csr_warp(w, iter);
            }
            if (discovered_ == 0) break;
            sizes.push_back(frontier);
            ++res_.iterations;
            frontier = 0;
            for (auto f : flag_) frontier += f == iter + 1 ? 1 : 0;
            ++iter;
        }
    }

    void csr_warp(std::uint32_t w, std::int64_t iter) {
        for (std::uint64_t s0 = vbounds_[w]; s0 < vbounds_[w + 1]; s0 += kLanes) {
            auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, vbounds_[w + 1] - s0));
            b_.strided(w, flags_, AccessKind::Read, s0, 1, lanes);
            for (std::uint64_t v = s0; v < s0 + lanes; ++v) {
                if (!active_[v]) continue;
                b_.strided(w, offsets_, AccessKind::Read, v, 1, 2);
                if (g_.degree(v) == 0) continue;
                b_.strided(w, state_, AccessKind::Read, v, 1, 1);
                expand(w, v, g_.offsets[v], g_.offsets[v + 1], iter);
            }
        }
    }

    void balanced_warp(std::uint32_t w, std::int64_t iter) {
        const auto& chunks = bal_->chunks;
        for (std::uint64_t s0 = cbounds_[w]; s0 < cbounds_[w + 1]; s0 += kLanes) {
            auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, cbounds_[w + 1] - s0));
            b_.strided(w, chunks_, AccessKind::Read, s0, 1, lanes);
            owners_.clear();
            for (std::uint64_t c = s0; c < s0 + lanes; ++c) owners_.push_back(chunks[c].owner);
            b_.gather(w, flags_, AccessKind::Read, owners_);
            for (std::uint64_t c = s0; c < s0 + lanes; ++c) {
                auto v = chunks[c].owner;
                if (!active_[v]) continue;
                b_.strided(w, state_, AccessKind::Read, v, 1, 1);
                expand(w, v, chunks[c].begin, chunks[c].end, iter);
            }
        }
    }

    bool relax(std::uint64_t v, std::uint64_t dst, std::uint64_t e, std::int64_t iter) {
        switch (algo_) {
            case Algo::BFS:
                if (level_[dst] != kUnreached) return false;
                level_[dst] = iter + 1;
                return true;
            case Algo::CC:
                if (res_.labels[v] >= res_.labels[dst]) return false;
                res_.labels[dst] = res_.labels[v];
                return true;
            case Algo::SSSP: {
                double cand = dist_[v] + g_.weights[e];
                if (!(cand < dist_[dst])) return false;
                dist_[dst] = cand;
                return true;
            }
        }
        return false;
    }

    void expand(std::uint32_t w, std::uint64_t v, std::uint64_t begin, std::uint64_t end, std::int64_t iter) {
        for (std::uint64_t e0 = begin; e0 < end; e0 += kLanes) {
            auto lanes = static_cast<std::uint32_t>(std::min<std::uint64_t>(kLanes, end - e0));
            b_.strided(w, edges_, AccessKind::Read, e0, 1, lanes);
            if (algo_ == Algo::SSSP) b_.strided(w, weights_, AccessKind::Read, e0, 1, lanes);
            dsts_.assign(g_.edges.begin() + static_cast<std::ptrdiff_t>(e0),
                         g_.edges.begin() + static_cast<std::ptrdiff_t>(e0 + lanes));
            b_.gather(w, state_, AccessKind::Read, dsts_);
            updated_.clear();
            for (std::uint32_t k = 0; k < lanes; ++k)
                if (relax(v, dsts_[k], e0 + k, iter)) {
                    updated_.push_back(dsts_[k]);
                    flag_[dsts_[k]] = iter + 1;
                }
            if (updated_.empty()) continue;
            discovered_ += updated_.size();
            b_.gather(w, state_, AccessKind::Write, updated_);
            b_.gather(w, flags_, AccessKind::Write, updated_);
        }
    }

    const CsrGraph& g_;
    const BalancedCsrGraph* bal_;
    Algo algo_;
    std::uint32_t warps_;
    ProgramBuilder b_;
    std::vector<std::uint64_t> vbounds_, cbounds_;
    std::uint16_t offsets_ = 0, chunks_ = 0, edges_ = 0, weights_ = 0, state_ = 0, flags_ = 0;
    std::vector<std::int64_t> flag_;
    std::vector<bool> active_;
    std::vector<std::int64_t> level_;
    std::vector<double> dist_;
    std::vector<std::uint64_t> owners_, dsts_, updated_;
    std::uint64_t discovered_ = 0;
    TraversalResult res_;
};

}  // namespace

TraversalProgram gen_graph_traversal(const CsrGraph& g, Algo algo, const std::vector<std::uint64_t>& sources,
                                     const TraversalOptions& opt) {
    return TraversalGen(g, nullptr, algo, opt).run(sources);
}

TraversalProgram gen_graph_traversal(const BalancedCsrGraph& g, Algo algo, const std::vector<std::uint64_t>& sources,
                                     const TraversalOptions& opt) {
    if (!g.original) throw std::invalid_argument("balanced graph lost its CSR");
    return TraversalGen(*g.original, &g, algo, opt).run(sources);
}

}  // namespace gpuvm
