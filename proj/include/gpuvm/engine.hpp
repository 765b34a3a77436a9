#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpuvm {

struct Duration {
    std::int64_t ns = 0;

    static constexpr Duration nanos(std::int64_t v) { return Duration{v}; }
    static constexpr Duration micros(std::int64_t v) { return Duration{v * 1000}; }
    static constexpr Duration millis(std::int64_t v) { return Duration{v * 1000000}; }
    // Config boundary only: converts a real number of microseconds to whole ns.
    static Duration from_us(double us);

    double us() const { return static_cast<double>(ns) / 1e3; }
    double seconds() const { return static_cast<double>(ns) / 1e9; }

    friend constexpr Duration operator+(Duration a, Duration b) { return {a.ns + b.ns}; }
    friend constexpr Duration operator-(Duration a, Duration b) { return {a.ns - b.ns}; }
    friend constexpr auto operator<=>(Duration, Duration) = default;
};

struct SimTime {
    std::int64_t ns = 0;

    double us() const { return static_cast<double>(ns) / 1e3; }
    double seconds() const { return static_cast<double>(ns) / 1e9; }

    friend constexpr SimTime operator+(SimTime t, Duration d) { return {t.ns + d.ns}; }
    friend constexpr Duration operator-(SimTime a, SimTime b) { return {a.ns - b.ns}; }
    friend constexpr auto operator<=>(SimTime, SimTime) = default;
};

constexpr SimTime max_time(SimTime a, SimTime b) { return a < b ? b : a; }

enum class EventKind : std::uint8_t { WarpStep, NicComplete, DriverService, RefRelease, WriteBackDone, Watchdog };

const char* to_string(EventKind k);

struct Event {
    SimTime at;
    std::uint64_t sequence = 0;
    EventKind kind = EventKind::WarpStep;
    std::uint64_t subject = 0;
    std::function<void()> action;
};

class StallError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Engine {
public:
    explicit Engine(Duration watchdog = Duration::millis(10));

    SimTime now() const { return now_; }

    // Schedules an action; events are ordered by (at, insertion sequence).
    void schedule(SimTime at, EventKind kind, std::uint64_t subject, std::function<void()> action);
    void schedule(Event ev);

    SimTime run_until_idle();

    // Called when the queue drains; a returned message means actors are still blocked.
    void set_idle_probe(std::function<std::optional<std::string>()> probe) { idle_probe_ = std::move(probe); }
    // Called after every dispatched event (property suites hook invariants here).
    void set_observer(std::function<void(const Event&)> obs) { observer_ = std::move(obs); }
    // Extra context attached to watchdog diagnostics.
    void set_stall_diagnostic(std::function<std::string()> diag) { diagnostic_ = std::move(diag); }

    std::uint64_t digest() const { return digest_; }
    std::uint64_t dispatched() const { return dispatched_; }
    std::size_t pending() const { return heap_.size(); }
    Duration watchdog() const { return watchdog_; }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.at != b.at) return a.at > b.at;
            return a.sequence > b.sequence;
        }
    };
    void mix(std::uint64_t v);
    [[noreturn]] void stall(const std::string& why);

    std::vector<Event> heap_;
    SimTime now_{};
    std::uint64_t next_seq_ = 0;
    std::uint64_t dispatched_ = 0;
    std::uint64_t digest_ = 1469598103934665603ull;
    Duration watchdog_;
    std::function<std::optional<std::string>()> idle_probe_;
    std::function<void(const Event&)> observer_;
    std::function<std::string()> diagnostic_;
};

}  // namespace gpuvm
