#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <set>
#include <utility>
#include <vector>

#include "gpuvm/workload.hpp"

namespace oracle {

// Element indices touched by one step, recomputed from the raw step fields.
inline std::vector<std::uint64_t> step_elements(const gpuvm::AccessProgram& p, const gpuvm::AccessStep& s) {
    std::vector<std::uint64_t> out;
    std::uint64_t k = 0;
    for (std::uint32_t lane = 0; lane < 32; ++lane) {
        if (!((s.lane_mask >> lane) & 1u)) continue;
        if (s.gather) {
            out.push_back(p.gather_table[s.first + k]);
        } else {
            out.push_back(static_cast<std::uint64_t>(static_cast<std::int64_t>(s.first) +
                                                     static_cast<std::int64_t>(lane) * s.stride));
        }
        ++k;
    }
    return out;
}

// Distinct (buffer, unit) pairs covering every touched byte; buffers start unit-aligned.
inline std::uint64_t distinct_units(const gpuvm::AccessProgram& p, std::uint64_t unit) {
    std::set<std::pair<std::uint32_t, std::uint64_t>> units;
    for (const auto& s : p.steps) {
        std::uint64_t esz = p.buffers[s.buffer].element_size;
        for (auto e : step_elements(p, s)) {
            std::uint64_t lo = e * esz, hi = lo + esz - 1;
            for (std::uint64_t u = lo / unit; u <= hi / unit; ++u) units.insert({s.buffer, u});
        }
    }
    return units.size();
}

// Bytes of distinct touched elements.
inline std::uint64_t unique_bytes(const gpuvm::AccessProgram& p) {
    std::set<std::pair<std::uint32_t, std::uint64_t>> seen;
    std::uint64_t bytes = 0;
    for (const auto& s : p.steps)
        for (auto e : step_elements(p, s))
            if (seen.insert({s.buffer, e}).second) bytes += p.buffers[s.buffer].element_size;
    return bytes;
}

// Distinct pages each warp touches, over the whole program.
inline std::vector<std::uint64_t> pages_per_warp(const gpuvm::AccessProgram& p, std::uint64_t page_size) {
    std::vector<std::set<std::pair<std::uint32_t, std::uint64_t>>> per(p.warp_count);
    for (const auto& s : p.steps) {
        std::uint64_t esz = p.buffers[s.buffer].element_size;
        for (auto e : step_elements(p, s)) per[s.warp].insert({s.buffer, e * esz / page_size});
    }
    std::vector<std::uint64_t> out;
    for (const auto& set : per) out.push_back(set.size());
    return out;
}

inline std::vector<std::int64_t> bfs(const gpuvm::CsrGraph& g, std::uint64_t src) {
    std::vector<std::int64_t> level(g.vertex_count, -1);
    std::queue<std::uint64_t> q;
    level[src] = 0;
    q.push(src);
    while (!q.empty()) {
        auto u = q.front();
        q.pop();
        for (auto e = g.offsets[u]; e < g.offsets[u + 1]; ++e) {
            auto v = g.edges[e];
            if (level[v] < 0) {
                level[v] = level[u] + 1;
                q.push(v);
            }
        }
    }
    return level;
}

// Minimum vertex id per weakly connected component.
inline std::vector<std::uint64_t> components(const gpuvm::CsrGraph& g) {
    std::vector<std::uint64_t> parent(g.vertex_count);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::uint64_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };
    for (std::uint64_t u = 0; u < g.vertex_count; ++u)
        for (auto e = g.offsets[u]; e < g.offsets[u + 1]; ++e) {
            auto a = find(u), b = find(g.edges[e]);
            if (a != b) parent[std::max(a, b)] = std::min(a, b);
        }
    std::vector<std::uint64_t> label(g.vertex_count);
    for (std::uint64_t v = 0; v < g.vertex_count; ++v) label[v] = find(v);
    return label;
}

inline std::vector<double> dijkstra(const gpuvm::CsrGraph& g, std::uint64_t src) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(g.vertex_count, inf);
    using Item = std::pair<double, std::uint64_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[src] = 0;
    pq.push({0.0, src});
    while (!pq.empty()) {
        auto [d, u] = pq.top();
        pq.pop();
        if (d > dist[u]) continue;
        for (auto e = g.offsets[u]; e < g.offsets[u + 1]; ++e) {
            double w = g.weighted() ? g.weights[e] : 1.0;
            auto v = g.edges[e];
            if (d + w < dist[v]) {
                dist[v] = d + w;
                pq.push({dist[v], v});
            }
        }
    }
    return dist;
}

}  // namespace oracle
