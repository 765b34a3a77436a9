#include "doctest.h"

#include <string>
#include <vector>

#include "gpuvm/engine.hpp"

using namespace gpuvm;

TEST_CASE("events dispatch in time order with insertion order breaking ties") {
    Engine e;
    std::vector<int> order;
    e.schedule(SimTime{50}, EventKind::WarpStep, 0, [&] { order.push_back(3); });
    e.schedule(SimTime{10}, EventKind::WarpStep, 0, [&] { order.push_back(1); });
    e.schedule(SimTime{10}, EventKind::NicComplete, 0, [&] { order.push_back(2); });
    e.schedule(SimTime{50}, EventKind::WarpStep, 0, [&] { order.push_back(4); });
    CHECK(e.run_until_idle() == SimTime{50});
    CHECK(order == std::vector<int>{1, 2, 3, 4});
    CHECK(e.dispatched() == 4);
}

TEST_CASE("events scheduled from actions run at their own time") {
    Engine e;
    std::vector<std::int64_t> seen;
    e.schedule(SimTime{5}, EventKind::WarpStep, 0, [&] {
        seen.push_back(e.now().ns);
        e.schedule(e.now() + Duration::nanos(7), EventKind::WarpStep, 1, [&] { seen.push_back(e.now().ns); });
        e.schedule(e.now(), EventKind::WarpStep, 2, [&] { seen.push_back(e.now().ns); });
    });
    e.run_until_idle();
    CHECK(seen == std::vector<std::int64_t>{5, 5, 12});
}

TEST_CASE("scheduling in the past is rejected") {
    Engine e;
    e.schedule(SimTime{100}, EventKind::WarpStep, 0, [&] {
        CHECK_THROWS_AS(e.schedule(SimTime{99}, EventKind::WarpStep, 0, [] {}), std::logic_error);
    });
    e.run_until_idle();
}

TEST_CASE("digest depends only on the dispatched event sequence") {
    auto run = [](std::int64_t shift) {
        Engine e;
        for (int i = 0; i < 20; ++i)
            e.schedule(SimTime{i * 13 + (i == 7 ? shift : 0)}, EventKind::WarpStep, static_cast<std::uint64_t>(i), [] {});
        e.run_until_idle();
        return e.digest();
    };
    CHECK(run(0) == run(0));
    CHECK(run(0) != run(1));
}

TEST_CASE("watchdog raises a stall on a long silent gap") {
    Engine e(Duration::micros(10));
    e.schedule(SimTime{0}, EventKind::WarpStep, 0, [] {});
    e.schedule(SimTime{0} + Duration::micros(11), EventKind::WarpStep, 0, [] {});
    e.set_stall_diagnostic([] { return std::string("diag-context"); });
    try {
        e.run_until_idle();
        FAIL("expected a stall");
    } catch (const StallError& err) {
        CHECK(std::string(err.what()).find("diag-context") != std::string::npos);
    }
}

TEST_CASE("idle probe turns blocked actors into a stall") {
    Engine e;
    e.schedule(SimTime{1}, EventKind::WarpStep, 0, [] {});
    e.set_idle_probe([]() -> std::optional<std::string> { return std::string("warp 3 waits forever"); });
    CHECK_THROWS_AS(e.run_until_idle(), StallError);

    Engine ok;
    ok.set_idle_probe([]() -> std::optional<std::string> { return std::nullopt; });
    CHECK(ok.run_until_idle() == SimTime{0});
}

TEST_CASE("observer sees every event after its action") {
    Engine e;
    int acted = 0, observed = 0;
    for (int i = 0; i < 5; ++i)
        e.schedule(SimTime{i}, EventKind::DriverService, 0, [&] { ++acted; });
    e.set_observer([&](const Event&) {
        ++observed;
        CHECK(observed == acted);
    });
    e.run_until_idle();
    CHECK(observed == 5);
}

TEST_CASE("microsecond conversion at the config boundary") {
    CHECK(Duration::from_us(23).ns == 23000);
    CHECK(Duration::from_us(0.0005).ns == 1);
    CHECK_THROWS_AS(Duration::from_us(-1), std::invalid_argument);
}
