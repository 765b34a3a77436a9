#include "gpuvm/engine.hpp"

#include <algorithm>
#include <cmath>

namespace gpuvm {

Duration Duration::from_us(double us) {
    if (!std::isfinite(us) || us < 0) throw std::invalid_argument("duration must be finite and non-negative");
    return Duration{static_cast<std::int64_t>(std::llround(us * 1e3))};
}

const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::WarpStep: return "WarpStep";
        case EventKind::NicComplete: return "NicComplete";
        case EventKind::DriverService: return "DriverService";
        case EventKind::RefRelease: return "RefRelease";
        case EventKind::WriteBackDone: return "WriteBackDone";
        case EventKind::Watchdog: return "Watchdog";
    }
    return "?";
}

Engine::Engine(Duration watchdog) : watchdog_(watchdog) {}

void Engine::schedule(SimTime at, EventKind kind, std::uint64_t subject, std::function<void()> action) {
    if (at < now_) throw std::logic_error("event scheduled in the past");
    heap_.push_back(Event{at, next_seq_++, kind, subject, std::move(action)});
    std::push_heap(heap_.begin(), heap_.end(), Later{});
}

void Engine::schedule(Event ev) { schedule(ev.at, ev.kind, ev.subject, std::move(ev.action)); }

void Engine::mix(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        digest_ ^= (v >> (8 * i)) & 0xffu;
        digest_ *= 1099511628211ull;
    }
}

void Engine::stall(const std::string& why) {
    mix(static_cast<std::uint64_t>(EventKind::Watchdog));
    std::string msg = "unrecoverable stall at t=" + std::to_string(now_.ns) + "ns: " + why;
    if (diagnostic_) msg += "; " + diagnostic_();
    throw StallError(msg);
}

SimTime Engine::run_until_idle() {
    for (;;) {
        if (heap_.empty()) {
            if (idle_probe_) {
                if (auto blocked = idle_probe_()) stall(*blocked);
            }
            return now_;
        }
        std::pop_heap(heap_.begin(), heap_.end(), Later{});
        Event ev = std::move(heap_.back());
        heap_.pop_back();
        if (watchdog_.ns > 0 && ev.at.ns - now_.ns > watchdog_.ns)
            stall("no event for " + std::to_string(ev.at.ns - now_.ns) + "ns (watchdog " +
                  std::to_string(watchdog_.ns) + "ns)");
        now_ = ev.at;
        mix(static_cast<std::uint64_t>(ev.at.ns));
        mix(ev.sequence);
        mix(static_cast<std::uint64_t>(ev.kind));
        mix(ev.subject);
        ++dispatched_;
        if (ev.action) ev.action();
        if (observer_) observer_(ev);
    }
}

}  // namespace gpuvm
