#include "doctest.h"

#include <cmath>
#include <set>
#include <vector>

#include "gpuvm/uvm.hpp"
#include "oracles.hpp"

using namespace gpuvm;

namespace {

SimTime run(Engine& engine, MemorySystem& mem, const AccessProgram& p) {
    mem.bind(p);
    WarpExecutor ex(engine, mem, p);
    ex.start();
    engine.run_until_idle();
    REQUIRE(ex.finished());
    return ex.finish_time();
}

}  // namespace

TEST_CASE("service time reproduces the latency breakdown anchors") {
    UvmConfig cfg;
    const std::uint64_t sizes[] = {64 << 10, 128 << 10, 256 << 10, 512 << 10};
    const std::int64_t os[] = {89050, 94858, 109296, 122713};
    const std::int64_t xfer[] = {11007, 15039, 25023, 45055};
    for (int i = 0; i < 4; ++i) {
        auto t = uvm_fault_service_time(sizes[i], cfg);
        CHECK(t.os.ns == os[i]);
        CHECK(t.transfer.ns == xfer[i]);
    }
}

TEST_CASE("service time is monotone between and beyond anchors") {
    UvmConfig cfg;
    UvmServiceTime prev{};
    for (std::uint64_t b = 4096; b <= (2u << 20); b += 4096) {
        auto t = uvm_fault_service_time(b, cfg);
        CHECK(t.os >= prev.os);
        CHECK(t.transfer >= prev.transfer);
        prev = t;
    }
    CHECK(uvm_fault_service_time(4096, cfg).os.ns == 89050);
    CHECK(uvm_fault_service_time(2u << 20, cfg).os.ns == 122713);
    CHECK(uvm_fault_service_time(1u << 20, cfg).transfer.ns > 45055);
    CHECK(interpolate_clamped(cfg.os_cost_curve, 96 << 10).ns == (89050 + 94858) / 2);
}

TEST_CASE("affine transfer fit matches an independent least-squares solve") {
    UvmConfig cfg;
    double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : cfg.transfer_curve) {
        double x = static_cast<double>(p.bytes), y = static_cast<double>(p.cost.ns);
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double intercept = (sy - slope * sx) / n;
    auto fit = fit_transfer_affine(cfg.transfer_curve);
    CHECK(fit.intercept.ns == doctest::Approx(intercept).epsilon(1e-3));
    CHECK(fit.bandwidth == doctest::Approx(1e9 / slope).epsilon(1e-6));
    CHECK(fit.intercept.us() == doctest::Approx(5.62).epsilon(0.01));
    CHECK(fit.bandwidth / 1e9 == doctest::Approx(13.35).epsilon(0.01));
}

TEST_CASE("memadvise slope is the origin least-squares fit of the dataset setup times") {
    const double gb[] = {13.5, 15.7, 16.0, 24.8};
    const double secs[] = {2.25, 2.65, 2.7, 4.24};
    double sxy = 0, sxx = 0;
    for (int i = 0; i < 4; ++i) {
        sxy += gb[i] * secs[i];
        sxx += gb[i] * gb[i];
    }
    UvmConfig cfg;
    CHECK(cfg.memadvise_seconds_per_gib == doctest::Approx(sxy / sxx).epsilon(1e-3));
    Engine engine;
    UvmModel m(engine, cfg);
    CHECK(m.apply_memadvise(false, 1ull << 30).ns == 0);
    CHECK(m.apply_memadvise(true, 1ull << 30).ns == 169500000);
    cfg.memadvise_setup = Duration::millis(3);
    UvmModel flat(engine, cfg);
    CHECK(flat.apply_memadvise(true, 1ull << 40).ns == 3000000);
}

TEST_CASE("fault buffer merges duplicate regions") {
    FaultBuffer fb(4);
    CHECK(fb.push({7, 0, SimTime{}, false}));
    CHECK_FALSE(fb.push({7, 3, SimTime{}, true}));
    CHECK(fb.push({8, 1, SimTime{}, false}));
    auto batch = fb.take_batch();
    CHECK(batch.size() == 2);
    CHECK(fb.pending(7));
    fb.retire(7);
    CHECK_FALSE(fb.pending(7));
}

TEST_CASE("config validation") {
    UvmConfig c;
    c.prefetch_bytes = 4096;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = UvmConfig{};
    c.service_unit_bytes = 4096;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = UvmConfig{};
    c.gpu_memory_bytes = 1 << 20;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = UvmConfig{};
    c.read_mostly_os_scale = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("cold streaming migrates each touched 64KB region once") {
    auto p = gen_stream(1u << 20, 64);
    Engine engine;
    UvmModel m(engine, UvmConfig{});
    run(engine, m, p);
    auto regions = oracle::distinct_units(p, 65536);
    CHECK(m.counters().faults == regions);
    CHECK(m.counters().bytes_h2g == regions * 65536);
    CHECK(m.counters().evictions == 0);
}

TEST_CASE("a single idle fault costs one batching window, OS and demand transfer") {
    ProgramBuilder b(1);
    auto buf = b.add_buffer("a", 4, 1024);
    b.begin_phase();
    b.strided(0, buf, AccessKind::Read, 0, 1, 1);
    auto p = b.finish();
    Engine engine;
    UvmConfig cfg;
    UvmModel m(engine, cfg);
    auto t = run(engine, m, p);
    auto os = interpolate_clamped(cfg.os_cost_curve, 65536);
    auto demand = interpolate_extended(cfg.transfer_curve, 4096);
    CHECK(t.ns >= (cfg.batching_window + os + demand).ns);
    CHECK(t.ns <= (cfg.batching_window + os + demand).ns + 5000);
}

TEST_CASE("eviction drops the least recently faulted block") {
    auto p = gen_stream(3u << 20, 32);
    Engine engine;
    UvmConfig cfg;
    cfg.gpu_memory_bytes = 8u << 20;
    UvmModel m(engine, cfg);
    run(engine, m, p);
    auto before = m.resident_regions();
    REQUIRE(before > 0);
    std::uint64_t block_seen = UINT64_MAX;
    m.set_eviction_observer([&](std::uint64_t block, const std::vector<std::uint64_t>&) { block_seen = block; });
    auto dropped = m.vablock_evict();
    CHECK_FALSE(dropped.empty());
    CHECK(block_seen == 0);
    CHECK(m.resident_regions() < before);
}

TEST_CASE("shrinking memory slows UVM streaming") {
    auto p = gen_vecadd(1u << 20, 64);
    std::int64_t base = 0;
    {
        Engine engine;
        UvmModel m(engine, UvmConfig{});
        base = run(engine, m, p).ns;
    }
    Engine engine;
    UvmConfig cfg;
    cfg.gpu_memory_bytes = 4u << 20;
    UvmModel m(engine, cfg);
    auto t = run(engine, m, p).ns;
    CHECK(t > base);
    CHECK(m.counters().evictions > 0);
}

TEST_CASE("read-mostly advice speeds up read-only traffic") {
    auto p = gen_stream(2u << 20, 64);
    Engine e1, e2;
    UvmConfig plain, advised;
    advised.read_mostly = true;
    UvmModel a(e1, plain), b(e2, advised);
    auto ta = run(e1, a, p).ns;
    auto tb = run(e2, b, p).ns;
    CHECK(tb < ta);
}
