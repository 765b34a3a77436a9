#include "doctest.h"

#include <array>
#include <map>
#include <set>
#include <vector>

#include "gpuvm/runtime.hpp"
#include "oracles.hpp"

using namespace gpuvm;

namespace {

RuntimeConfig quiet_config(std::uint64_t page_size = 8192) {
    RuntimeConfig c;
    c.page_size = page_size;
    c.nic.latency_jitter = Duration{};
    return c;
}

AccessProgram one_buffer(std::uint64_t elements, std::uint32_t warps) {
    ProgramBuilder b(warps);
    b.add_buffer("a", 4, elements);
    return b.finish();
}

SimTime run_program(Engine& engine, MemorySystem& mem, const AccessProgram& p) {
    mem.bind(p);
    WarpExecutor ex(engine, mem, p);
    ex.start();
    engine.run_until_idle();
    REQUIRE(ex.finished());
    return ex.finish_time();
}

}  // namespace

TEST_CASE("idle cold fault latency closed form") {
    auto cfg = quiet_config(8192);
    CHECK(idle_fault_latency(cfg).ns == 25261);
    Engine engine;
    GpuvmRuntime rt(engine, cfg);
    rt.bind(one_buffer(4096, 1));
    AccessOutcome got;
    SimTime at;
    engine.schedule(SimTime{}, EventKind::WarpStep, 0, [&] {
        rt.access(0, 0, AccessKind::Read, [&](SimTime t, AccessOutcome o) {
            at = t;
            got = o;
        });
    });
    engine.run_until_idle();
    CHECK(got.fault);
    CHECK(at.ns == 25261);
    CHECK(got.latency.ns == 25261);
    CHECK(got.bytes_transferred == 8192);
}

TEST_CASE("warp leader election groups lanes by page") {
    Warp w{0, kLanes, 0, 0};
    std::array<std::optional<PageId>, kLanes> pages{};
    for (std::uint32_t l = 0; l < 8; ++l) {
        pages[l] = l % 3;
        w.active_mask |= 1u << l;
    }
    auto groups = elect_warp_leaders(w, pages);
    REQUIRE(groups.size() == 3);
    CHECK(groups[0].page == 0);
    CHECK(groups[0].leader_lane == 0);
    CHECK(groups[0].member_lanes == std::vector<std::uint32_t>{0, 3, 6});
    CHECK(groups[2].leader_lane == 2);
    pages[9] = 1;
    CHECK_THROWS_AS(elect_warp_leaders(w, pages), std::invalid_argument);
}

TEST_CASE("fault phases only move forward") {
    FaultContext c;
    c.advance(FaultPhase::Posted);
    CHECK_THROWS_AS(c.advance(FaultPhase::FramePending), std::logic_error);
    c.advance(FaultPhase::Done);
}

TEST_CASE("concurrent accesses to one page coalesce into one request") {
    Engine engine;
    GpuvmRuntime rt(engine, quiet_config());
    rt.bind(one_buffer(4096, 8));
    int done = 0;
    engine.schedule(SimTime{}, EventKind::WarpStep, 0, [&] {
        for (std::uint32_t w = 0; w < 8; ++w)
            rt.access(w, 1, AccessKind::Read, [&](SimTime, AccessOutcome o) {
                CHECK(o.fault);
                ++done;
            });
    });
    engine.run_until_idle();
    CHECK(done == 8);
    CHECK(rt.counters().work_requests == 1);
    CHECK(rt.counters().faults == 1);
    CHECK(rt.counters().follower_waits == 7);
    CHECK(rt.page_table().total_refs() == 0);
}

TEST_CASE("resident pages hit without transfers") {
    Engine engine;
    auto cfg = quiet_config();
    cfg.resident_access_cost = Duration::nanos(100);
    GpuvmRuntime rt(engine, cfg);
    auto p = one_buffer(2048, 1);
    rt.bind(p);
    std::vector<SimTime> t;
    engine.schedule(SimTime{}, EventKind::WarpStep, 0, [&] {
        rt.access(0, 0, AccessKind::Read, [&](SimTime at, AccessOutcome) {
            t.push_back(at);
            engine.schedule(at, EventKind::WarpStep, 0, [&] {
                rt.access(0, 0, AccessKind::Write, [&](SimTime at2, AccessOutcome o) {
                    CHECK_FALSE(o.fault);
                    t.push_back(at2);
                });
            });
        });
    });
    engine.run_until_idle();
    REQUIRE(t.size() == 2);
    CHECK((t[1] - t[0]).ns == 100);
    CHECK(rt.counters().hits == 1);
    CHECK(rt.page_table().entry(0).dirty);
}

TEST_CASE("queues are assigned round robin") {
    Engine engine;
    auto cfg = quiet_config();
    cfg.queue_count = 3;
    GpuvmRuntime rt(engine, cfg);
    std::vector<std::uint32_t> q;
    for (int i = 0; i < 7; ++i) q.push_back(rt.assign_queue());
    CHECK(q == std::vector<std::uint32_t>{0, 1, 2, 0, 1, 2, 0});
}

TEST_CASE("dirty victims are written back before the new fetch") {
    Engine engine;
    auto cfg = quiet_config(4096);
    cfg.gpu_memory_bytes = 4096;
    GpuvmRuntime rt(engine, cfg);
    ProgramBuilder b(1);
    auto buf = b.add_buffer("a", 4, 2048);
    b.begin_phase();
    b.strided(0, buf, AccessKind::Write, 0, 1, 32);
    b.strided(0, buf, AccessKind::Read, 1024, 1, 32);
    b.strided(0, buf, AccessKind::Read, 0, 1, 32);
    auto p = b.finish();
    std::vector<Direction> dirs;
    rt.set_post_observer([&](const WorkRequest& w) { dirs.push_back(w.direction); });
    run_program(engine, rt, p);
    CHECK(dirs == std::vector<Direction>{Direction::HostToGpu, Direction::GpuToHost, Direction::HostToGpu,
                                         Direction::HostToGpu});
    CHECK(rt.counters().evictions == 2);
    CHECK(rt.counters().dirty_evictions == 1);
    CHECK(rt.counters().bytes_g2h == 4096);
    CHECK(rt.counters().bytes_h2g == 3 * 4096);
}

TEST_CASE("batched queues still drain through the flush timeout") {
    for (std::uint32_t batch : {1u, 4u, 16u}) {
        Engine engine;
        auto cfg = quiet_config(4096);
        cfg.queue_count = 2;
        cfg.batch_size = batch;
        GpuvmRuntime rt(engine, cfg);
        auto p = gen_stream(3 * 1024 + 17, 5);
        run_program(engine, rt, p);
        CHECK(rt.counters().work_requests == oracle::distinct_units(p, 4096));
        CHECK(rt.counters().doorbells >= (rt.counters().work_requests + batch - 1) / batch);
        CHECK(rt.open_episodes() == 0);
    }
}

TEST_CASE("more queues never reduce streaming throughput at 4KB") {
    auto p = gen_stream(4u << 20, 256);
    std::int64_t prev = INT64_MAX;
    for (std::uint32_t q : {8u, 16u, 36u, 72u}) {
        Engine engine;
        auto cfg = quiet_config(4096);
        cfg.nic.latency_jitter = Duration::micros(1);
        cfg.queue_count = q;
        GpuvmRuntime rt(engine, cfg);
        auto t = run_program(engine, rt, p).ns;
        if (prev != INT64_MAX) CHECK(t <= prev + prev / 50);
        prev = t;
    }
}

TEST_CASE("runtime config validation") {
    RuntimeConfig c;
    c.page_size = 3000;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RuntimeConfig{};
    c.batch_size = c.queue_depth + 1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = RuntimeConfig{};
    c.gpu_memory_bytes = 100;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("property: eviction safety, injectivity and FIFO order under random programs") {
    std::uint64_t violations = 0, events = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        std::uint32_t warps = 1 + static_cast<std::uint32_t>(rng.below(16));
        ProgramBuilder b(warps);
        auto buf = b.add_buffer("a", 4, 64 * 1024);
        b.begin_phase();
        for (int s = 0; s < 200; ++s) {
            std::uint32_t w = static_cast<std::uint32_t>(rng.below(warps));
            auto rw = rng.below(3) == 0 ? AccessKind::Write : AccessKind::Read;
            b.strided(w, buf, rw, rng.below(64 * 1024 - 32 * 64), static_cast<std::int64_t>(rng.below(64)), 32);
        }
        auto p = b.finish();
        Engine engine;
        auto cfg = quiet_config(4096);
        cfg.gpu_memory_bytes = 4096 * (2 + rng.below(10));
        cfg.queue_count = 1 + static_cast<std::uint32_t>(rng.below(8));
        GpuvmRuntime rt(engine, cfg);
        rt.bind(p);
        std::uint64_t faults = 0;
        std::map<PageId, FrameId> expected_frame;
        std::map<FrameId, std::vector<PageId>> granted;
        rt.page_table().set_transition_observer([&](const PageTransition& t) {
            if (t.from == PageState::Resident && t.to == PageState::Unmapped && t.ref_count > 0) ++violations;
            if (t.to == PageState::Faulting) {
                // The k-th fault is granted frame k in ring order.
                FrameId f = faults++ % rt.frame_count();
                expected_frame[t.page] = f;
                granted[f].push_back(t.page);
            }
            if (t.to == PageState::Resident && rt.page_table().entry(t.page).frame != expected_frame.at(t.page))
                ++violations;
        });
        rt.set_eviction_observer([&](FrameId f, PageId victim) {
            auto& q = granted[f];
            if (q.empty() || q.front() != victim) ++violations;
            if (!q.empty()) q.erase(q.begin());
        });
        engine.set_observer([&](const Event&) {
            ++events;
            try {
                rt.page_table().check_invariants(rt.frame_count());
            } catch (const std::logic_error&) {
                ++violations;
            }
        });
        WarpExecutor ex(engine, rt, p);
        ex.start();
        engine.run_until_idle();
        CHECK(ex.finished());
    }
    CHECK(events > 10000);
    CHECK(violations == 0);
}
