#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gpuvm/engine.hpp"
#include "gpuvm/runtime.hpp"
#include "gpuvm/workload.hpp"

namespace gpuvm {

struct CurvePoint {
    std::uint64_t bytes;
    Duration cost;
};

struct AffineFit {
    Duration intercept{};
    double bandwidth = 0;  // bytes/s
};

struct UvmConfig {
    std::uint64_t fault_granularity = 4096;
    std::uint64_t prefetch_bytes = 61440;
    std::uint64_t eviction_block = 2ull << 20;
    std::vector<CurvePoint> os_cost_curve = {
        {64 << 10, Duration::nanos(89050)},
        {128 << 10, Duration::nanos(94858)},
        {256 << 10, Duration::nanos(109296)},
        {512 << 10, Duration::nanos(122713)},
    };
    std::vector<CurvePoint> transfer_curve = {
        {64 << 10, Duration::nanos(11007)},
        {128 << 10, Duration::nanos(15039)},
        {256 << 10, Duration::nanos(25023)},
        {512 << 10, Duration::nanos(45055)},
    };
    bool read_mostly = false;
    // Scale on the OS component of service rounds that only contain read faults, with read_mostly set.
    double read_mostly_os_scale = 0.72;
    std::optional<Duration> memadvise_setup;  // flat override
    double memadvise_seconds_per_gib = 0.1695;
    Duration batching_window = Duration::micros(20);
    std::uint32_t batch_capacity = 256;
    // Largest migration serviced as one unit; larger block groups are split.
    std::uint64_t service_unit_bytes = 512 << 10;
    std::uint64_t gpu_memory_bytes = 0;  // 0: everything fits
    Duration resident_access_cost{};
    Duration livelock_horizon = Duration::millis(50);

    std::uint64_t region_bytes() const { return fault_granularity + prefetch_bytes; }
    void validate() const;
};

struct UvmServiceTime {
    Duration os{};
    Duration transfer{};
};

// Piecewise-linear lookup; the OS curve clamps at both ends, the transfer curve
// extends its end segments.
Duration interpolate_clamped(const std::vector<CurvePoint>& curve, std::uint64_t bytes);
Duration interpolate_extended(const std::vector<CurvePoint>& curve, std::uint64_t bytes);
UvmServiceTime uvm_fault_service_time(std::uint64_t batch_bytes, const UvmConfig& cfg);
// Least-squares affine fit of the transfer anchors (reported alongside results).
AffineFit fit_transfer_affine(const std::vector<CurvePoint>& curve);

struct FaultRecord {
    std::uint64_t region;
    std::uint32_t page;  // 4KB page within the region
    SimTime arrival;
    bool write = false;
};

class FaultBuffer {
public:
    explicit FaultBuffer(std::uint32_t capacity) : capacity_(capacity) {}

    // Returns false when the region is already pending (duplicate faults are merged).
    bool push(const FaultRecord& f);
    std::vector<FaultRecord> take_batch();
    void retire(std::uint64_t region) { pending_.erase(region); }
    bool pending(std::uint64_t region) const { return pending_.count(region) != 0; }
    std::size_t size() const { return queue_.size(); }
    bool empty() const { return queue_.empty(); }
    std::uint32_t capacity() const { return capacity_; }

private:
    std::uint32_t capacity_;
    std::deque<FaultRecord> queue_;
    std::unordered_set<std::uint64_t> pending_;
};

class UvmModel : public MemorySystem {
public:
    UvmModel(Engine& engine, UvmConfig cfg);

    void bind(const AccessProgram& program) override;
    void access_step(std::uint32_t warp, const AccessStep& step, std::span<const std::uint64_t> elements,
                     std::function<void(SimTime)> done) override;
    Counters& counters() override { return counters_; }
    std::string blocked_report() const override;

    // Evicts the least-recently-faulted block holding resident data; returns the dropped
    // 4KB pages (global page numbers). Empty when nothing is resident.
    std::vector<std::uint64_t> vablock_evict();
    Duration apply_memadvise(bool read_mostly, std::uint64_t advised_bytes) const;

    const UvmConfig& config() const { return cfg_; }
    std::uint64_t resident_regions() const { return used_; }
    std::uint64_t region_capacity() const { return capacity_; }
    bool region_resident(std::uint64_t region) const { return regions_.at(region).state == RegionState::Resident; }
    std::uint64_t region_of(std::uint16_t buffer, std::uint64_t element) const;

    void set_eviction_observer(std::function<void(std::uint64_t block, const std::vector<std::uint64_t>&)> f) {
        evict_observer_ = std::move(f);
    }
    void set_migration_observer(std::function<void(std::uint64_t region, std::uint64_t bytes)> f) {
        migrate_observer_ = std::move(f);
    }

private:
    enum class RegionState : std::uint8_t { Absent, Pending, Resident };
    struct Region {
        RegionState state = RegionState::Absent;
        std::uint8_t demand_page = 0;
        SimTime demand_ready;
        SimTime full_ready;
        std::uint16_t dirty = 0;
        std::uint16_t touched = 0;
        std::vector<std::function<void()>> waiters;
    };
    struct Need {
        std::uint64_t region;
        std::uint16_t pages;
        std::uint8_t first_page;
    };
    struct StepWait {
        std::uint32_t warp;
        AccessKind rw;
        std::vector<Need> needs;
        std::function<void(SimTime)> done;
        SimTime issued;
        std::uint64_t generation = 0;
        bool faulted = false;
    };

    void check(const std::shared_ptr<StepWait>& w);
    void raise_fault(std::uint64_t region, std::uint8_t page, AccessKind rw);
    void service_round();
    void service_group(std::shared_ptr<std::vector<std::vector<FaultRecord>>> groups, std::size_t index,
                       bool reads_only);
    void evict_block(std::uint64_t block, Duration& cpu);

    Engine& engine_;
    UvmConfig cfg_;
    FaultBuffer buffer_;
    std::vector<Region> regions_;
    std::vector<SimTime> block_last_fault_;
    std::vector<std::uint32_t> block_resident_;
    std::vector<std::uint64_t> buffer_base_;  // first region of each buffer
    std::vector<std::uint32_t> element_size_;
    std::uint64_t capacity_ = 0;
    std::uint64_t used_ = 0;
    bool driver_busy_ = false;
    SimTime dma_free_;
    std::uint64_t waiting_steps_ = 0;
    Counters counters_;
    std::function<void(std::uint64_t, const std::vector<std::uint64_t>&)> evict_observer_;
    std::function<void(std::uint64_t, std::uint64_t)> migrate_observer_;
};

}  // namespace gpuvm
