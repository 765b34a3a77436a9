#include "doctest.h"

#include <cmath>
#include <vector>

#include "gpuvm/workload.hpp"
#include "oracles.hpp"

using namespace gpuvm;

TEST_CASE("BFS on a path takes one iteration per hop") {
    auto g = build_csr(4, {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}}, false);
    auto t = gen_graph_traversal(g, Algo::BFS, {0});
    CHECK(t.result.levels.at(0) == std::vector<std::int64_t>{0, 1, 2, 3});
    CHECK(t.result.iterations == 3);
    CHECK(t.result.frontier_sizes.at(0) == std::vector<std::uint64_t>{1, 1, 1});
}

TEST_CASE("unreachable vertices keep the sentinel") {
    auto g = build_csr(3, {{0, 1}}, false);
    auto t = gen_graph_traversal(g, Algo::BFS, {0});
    CHECK(t.result.levels[0][2] == kUnreached);
    auto w = build_csr(3, {{0, 1, 2.0}}, true);
    auto s = gen_graph_traversal(w, Algo::SSSP, {0});
    CHECK(std::isinf(s.result.distances[0][2]));
}

TEST_CASE("traversals match reference oracles on both representations") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::uint64_t v = 2 + rng.below(300);
        std::uint64_t e = rng.below(v * 6);
        auto g = make_random_graph(v, e, seed, true, true);
        auto b = csr_to_balanced(g, 1 + rng.below(16));
        auto sources = pick_sources(g, 2, 0, seed);
        for (auto algo : {Algo::BFS, Algo::CC, Algo::SSSP}) {
            auto a = gen_graph_traversal(g, algo, sources);
            auto c = gen_graph_traversal(b, algo, sources);
            a.program.validate();
            c.program.validate();
            for (std::size_t i = 0; i < sources.size(); ++i) {
                if (algo == Algo::BFS) {
                    CHECK(a.result.levels[i] == oracle::bfs(g, sources[i]));
                    CHECK(c.result.levels[i] == oracle::bfs(g, sources[i]));
                }
                if (algo == Algo::SSSP) {
                    CHECK(a.result.distances[i] == oracle::dijkstra(g, sources[i]));
                    CHECK(c.result.distances[i] == oracle::dijkstra(g, sources[i]));
                }
            }
            if (algo == Algo::CC) {
                CHECK(a.result.labels == oracle::components(g));
                CHECK(c.result.labels == oracle::components(g));
            }
        }
    }
}

TEST_CASE("representations read the same edge data") {
    auto g = make_power_law_graph(400, 3000, 2.5, 4, false, true);
    auto b = csr_to_balanced(g, 8);
    auto sources = pick_sources(g, 1, 1, 4);
    auto a = gen_graph_traversal(g, Algo::BFS, sources);
    auto c = gen_graph_traversal(b, Algo::BFS, sources);
    CHECK(unique_bytes_needed(a.program).data == unique_bytes_needed(c.program).data);
    CHECK(a.result.iterations == c.result.iterations);
}

TEST_CASE("source picking honours the degree floor") {
    auto g = make_star_graph(50, 0, 1, false);
    auto s = pick_sources(g, 3, 2, 1);
    REQUIRE(s.size() == 1);
    CHECK(s[0] == 0);
    CHECK(pick_sources(g, 3, 1, 1).size() == 3);
}
