#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <vector>

#include "gpuvm/workload.hpp"
#include "oracles.hpp"

using namespace gpuvm;

namespace {

std::vector<std::uint64_t> elements(const AccessProgram& p, const AccessStep& s) {
    std::vector<std::uint64_t> out;
    p.lane_elements(s, out);
    return out;
}

}  // namespace

TEST_CASE("edge list to CSR") {
    auto g = parse_edge_list("# comment\n0 1\n0 2\n1 2\n");
    CHECK(g.vertex_count == 3);
    CHECK(g.offsets == std::vector<std::uint64_t>{0, 2, 3, 3});
    CHECK(g.edges == std::vector<std::uint64_t>{1, 2, 2});
    CHECK_FALSE(g.weighted());
    auto w = parse_edge_list("0 1 2.5\n1 0 0.5\n");
    CHECK(w.weighted());
    CHECK(w.weights == std::vector<double>{2.5, 0.5});
}

TEST_CASE("malformed edge lists report the line") {
    try {
        parse_edge_list("0 1\n0 x\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_edge_list("0 1 2 3\n"), ParseError);
    CHECK_THROWS_AS(load_edge_list("/nonexistent/graph.txt"), IoError);
}

TEST_CASE("binary CSR round trip") {
    auto g = make_random_graph(200, 1500, 3, true, false);
    auto back = decode_binary_csr(encode_binary_csr(g));
    CHECK(back.offsets == g.offsets);
    CHECK(back.edges == g.edges);
    CHECK(back.weights == g.weights);
    auto path = (std::filesystem::temp_directory_path() / "gpuvm_roundtrip.bcsr").string();
    save_binary_csr(g, path);
    CHECK(load_binary_csr(path).edges == g.edges);
    std::remove(path.c_str());
    CHECK_THROWS(decode_binary_csr("garbage"));
}

TEST_CASE("balanced CSR splits a high-degree vertex into chunks") {
    auto g = build_csr(2, {{0, 1}, {0, 1}, {0, 1}, {0, 1}, {0, 1}, {0, 1}, {0, 1}}, false);
    auto b = csr_to_balanced(g, 3);
    REQUIRE(b.chunks.size() == 3);
    CHECK(b.chunks[0].end - b.chunks[0].begin == 3);
    CHECK(b.chunks[1].end - b.chunks[1].begin == 3);
    CHECK(b.chunks[2].end - b.chunks[2].begin == 1);
    for (const auto& c : b.chunks) CHECK(c.owner == 0);
    CHECK_THROWS_AS(csr_to_balanced(g, 0), std::invalid_argument);
}

TEST_CASE("chunk table overhead replaces the offsets array") {
    auto g = make_star_graph(10000, 0, 1, false);
    auto b = csr_to_balanced(g, 256);
    std::uint64_t chunks = 0;
    for (std::uint64_t v = 0; v < g.vertex_count; ++v) chunks += (g.degree(v) + 255) / 256;
    CHECK(b.chunks.size() == chunks);
    CHECK(b.chunk_table_bytes() == chunks * 8);
    std::uint64_t replaced = 8 * (g.vertex_count + 1);
    CHECK(b.overhead_bytes() == (chunks * 8 > replaced ? chunks * 8 - replaced : 0));
}

TEST_CASE("partition gives every warp edges in contiguous runs") {
    auto g = make_star_graph(10000, 0, 1, false);
    auto b = csr_to_balanced(g, 256);
    auto bounds = partition_chunks(b, 313);
    REQUIRE(bounds.size() == 314);
    CHECK(bounds.front() == 0);
    CHECK(bounds.back() == b.chunks.size());
    for (std::size_t i = 1; i < bounds.size(); ++i) CHECK(bounds[i] > bounds[i - 1]);
    auto few = partition_chunks(csr_to_balanced(make_random_graph(4, 3, 1, false, false), 256), 8);
    for (std::size_t i = 1; i < few.size(); ++i) CHECK(few[i] >= few[i - 1]);
}

TEST_CASE("generated graphs are valid and seeded") {
    auto a = make_power_law_graph(500, 4000, 2.5, 9, false, true);
    auto b = make_power_law_graph(500, 4000, 2.5, 9, false, true);
    a.validate();
    CHECK(a.edges == b.edges);
    auto star = make_star_graph(10000, 0, 1, false);
    CHECK(star.degree(0) == 10000);
    for (std::uint64_t v = 1; v < star.vertex_count; ++v) CHECK(star.degree(v) == 1);
}

TEST_CASE("rng is portable") {
    Rng r(1);
    std::vector<std::uint64_t> first;
    for (int i = 0; i < 3; ++i) first.push_back(r.next());
    Rng again(1);
    for (auto v : first) CHECK(again.next() == v);
    Rng u(5);
    for (int i = 0; i < 1000; ++i) {
        double x = u.unit();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        CHECK(u.below(7) < 7);
    }
}

TEST_CASE("vecadd tiles") {
    auto p = gen_vecadd(32, 1);
    CHECK(p.steps.size() == 3);
    CHECK(p.buffers.size() == 3);
    CHECK(p.steps[2].rw == AccessKind::Write);
    auto big = gen_vecadd(4096, 4);
    CHECK(big.steps.front().warp == 0);
    // the second 4KB tile (1024 floats) belongs to warp 1
    for (const auto& s : big.steps)
        if (!s.gather && s.first == 1024) CHECK(s.warp == 1);
    CHECK(gen_vecadd(64, 0).steps.empty());
}

TEST_CASE("column walk lane offsets") {
    ColumnWalkOptions opt;
    opt.warps = 2;
    opt.element_size = 8;
    auto p = gen_column_walk(4, 4, Kernel::MVT, opt);
    // lanes walk down a column; column c starts at byte 8c
    std::vector<std::uint64_t> bytes;
    for (std::uint64_t col : {0u, 1u})
        for (const auto& s : p.steps)
            if (s.buffer == 0 && s.first == col)
                for (auto e : elements(p, s)) bytes.push_back(e * 8);
    REQUIRE(bytes.size() == 8);
    CHECK(std::vector<std::uint64_t>(bytes.begin(), bytes.begin() + 6) ==
          std::vector<std::uint64_t>{0, 32, 64, 96, 8, 40});
    CHECK_THROWS_AS(gen_column_walk(4, 4, Kernel::MVT, ColumnWalkOptions{0, 4, {}}), std::invalid_argument);
}

TEST_CASE("column walk touches each matrix element exactly once per walk") {
    for (auto k : {Kernel::MVT, Kernel::ATAX, Kernel::BIGC}) {
        ColumnWalkOptions opt;
        opt.warps = 8;
        auto p = gen_column_walk(100, 48, k, opt);
        p.validate();
        std::vector<int> count(100 * 48, 0);
        for (const auto& s : p.steps)
            if (s.buffer == 0)
                for (auto e : elements(p, s)) ++count[e];
        int walks = k == Kernel::ATAX ? 2 : 1;
        for (auto c : count) CHECK(c == walks);
    }
}

TEST_CASE("unique bytes match the element oracle") {
    auto q = make_query_workload(20000, 512, 0.01, 3);
    std::vector<AccessProgram> programs;
    programs.push_back(gen_stream(5000, 7));
    programs.push_back(gen_vecadd(5000, 3));
    programs.push_back(gen_column_walk(64, 40, Kernel::ATAX));
    programs.push_back(gen_query_scan(q, 2, 16));
    for (const auto& p : programs) {
        auto u = unique_bytes_needed(p);
        CHECK(u.total == oracle::unique_bytes(p));
        CHECK(u.data <= u.total);
    }
}

TEST_CASE("query workload selects the requested fraction") {
    auto q = make_query_workload(100000, 512, 0.0008, 11);
    CHECK(q.matching_rows.size() == 80);
    CHECK(std::is_sorted(q.matching_rows.begin(), q.matching_rows.end()));
    CHECK(std::set<std::uint64_t>(q.matching_rows.begin(), q.matching_rows.end()).size() == 80);
    auto again = make_query_workload(100000, 512, 0.0008, 11);
    CHECK(again.matching_rows == q.matching_rows);
}

TEST_CASE("footprint rounds each buffer up to whole units") {
    ProgramBuilder b(1);
    b.add_buffer("a", 4, 1000);
    b.add_buffer("b", 4, 1025);
    auto p = b.finish();
    CHECK(footprint_bytes(p.buffers, 4096) == 4096 + 8192);
    CHECK(footprint_bytes(p.buffers, 1) == 4000 + 4100);
    auto buffers = p.buffers;
    CHECK(layout_pages(buffers, 4096) == 3);
    CHECK(buffers[1].base_page == 1);
    CHECK(buffers[1].page_of(1024, 4096) == 2);
}

TEST_CASE("program builder rejects out of range accesses") {
    ProgramBuilder b(2);
    auto buf = b.add_buffer("a", 4, 16);
    b.begin_phase();
    CHECK_THROWS(b.strided(2, buf, AccessKind::Read, 0, 1, 1));
    CHECK_THROWS(b.strided(0, buf, AccessKind::Read, 0, 1, 33));
    b.strided(0, buf, AccessKind::Read, 0, 1, 16);
    auto p = b.finish();
    CHECK(p.steps.size() == 1);
    CHECK(p.warp_count == 2);
}
