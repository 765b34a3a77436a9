#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "gpuvm/engine.hpp"
#include "gpuvm/paging.hpp"
#include "gpuvm/rnic.hpp"
#include "gpuvm/workload.hpp"

namespace gpuvm {

struct Warp {
    std::uint32_t warp_id = 0;
    std::uint32_t lane_count = kLanes;
    std::uint32_t active_mask = 0xffffffffu;
    std::uint32_t sm_id = 0;
};

struct LeaderGroup {
    PageId page = 0;
    std::uint32_t leader_lane = 0;
    std::vector<std::uint32_t> member_lanes;
};

// Match-any partition of the active lanes by page; groups ordered by leader lane.
std::vector<LeaderGroup> elect_warp_leaders(const Warp& warp, const std::array<std::optional<PageId>, kLanes>& lane_pages);

enum class FaultPhase : std::uint8_t { Elected, FramePending, Posted, Polling, Done };

const char* to_string(FaultPhase p);

struct FaultContext {
    PageId page = 0;
    std::uint32_t leader_warp = 0;
    std::vector<std::uint32_t> followers;
    std::uint32_t queue_index = 0;
    std::optional<std::uint64_t> post_number;
    FaultPhase phase = FaultPhase::Elected;

    // Moves to a later phase; going backwards is a logic error.
    void advance(FaultPhase next);
};

struct AccessOutcome {
    Duration latency{};
    bool fault = false;
    std::uint64_t bytes_transferred = 0;
};

// Counters shared by the GPUVM and UVM memory systems.
struct Counters {
    std::uint64_t faults = 0;
    std::uint64_t bytes_h2g = 0;
    std::uint64_t bytes_g2h = 0;
    std::uint64_t evictions = 0;
    std::uint64_t dirty_evictions = 0;
    std::uint64_t doorbells = 0;
    std::uint64_t work_requests = 0;
    std::uint64_t hits = 0;
    std::uint64_t follower_waits = 0;
    std::uint64_t ref_waits = 0;
    std::uint64_t steps = 0;
    std::uint64_t service_rounds = 0;
    std::uint64_t wasted_bytes = 0;
    SimTime kernel_time{};
    std::vector<std::uint64_t> warp_faults_led;
    std::vector<std::uint64_t> warp_faults_followed;

    std::uint64_t warp_faults(std::uint32_t w) const { return warp_faults_led[w] + warp_faults_followed[w]; }
    void resize_warps(std::uint32_t warps);
};

// A memory system serves warp steps; `done` fires once every lane's data is available.
class MemorySystem {
public:
    virtual ~MemorySystem() = default;
    virtual void bind(const AccessProgram& program) = 0;
    virtual void access_step(std::uint32_t warp, const AccessStep& step, std::span<const std::uint64_t> elements,
                             std::function<void(SimTime)> done) = 0;
    virtual Counters& counters() = 0;
    // Describes blocked actors for stall diagnostics; empty when nothing is blocked.
    virtual std::string blocked_report() const = 0;
};

struct RuntimeConfig {
    std::uint64_t page_size = 8192;
    std::uint64_t gpu_memory_bytes = 0;  // 0: every page fits
    std::uint32_t queue_count = 84;
    std::uint32_t queue_depth = 64;
    std::uint32_t batch_size = 1;
    Duration protocol_overhead = Duration::micros(1);
    Duration resident_access_cost{};
    Duration batch_flush_timeout = Duration::micros(2);
    NicTimingModel nic;

    void validate() const;
};

class GpuvmRuntime : public MemorySystem {
public:
    GpuvmRuntime(Engine& engine, RuntimeConfig cfg);

    void bind(const AccessProgram& program) override;
    void access_step(std::uint32_t warp, const AccessStep& step, std::span<const std::uint64_t> elements,
                     std::function<void(SimTime)> done) override;
    Counters& counters() override { return counters_; }
    std::string blocked_report() const override;

    // One warp-level group access to a page. `done` receives the time the data is usable.
    void access(std::uint32_t warp, PageId page, AccessKind rw, std::function<void(SimTime, AccessOutcome)> done);
    // Global round-robin queue counter.
    std::uint32_t assign_queue();

    const RuntimeConfig& config() const { return cfg_; }
    PageTable& page_table() { return *pt_; }
    const PageTable& page_table() const { return *pt_; }
    FrameRing& ring() { return *ring_; }
    const FrameRing& ring() const { return *ring_; }
    const NicModel& nic() const { return *nic_; }
    const QueuePair& queue(std::uint32_t q) const { return queues_.at(q).qp; }
    std::uint64_t frame_count() const { return ring_->frame_count(); }
    std::size_t open_episodes() const { return episodes_.size(); }

    // Observers for property suites.
    void set_post_observer(std::function<void(const WorkRequest&)> f) { post_observer_ = std::move(f); }
    void set_eviction_observer(std::function<void(FrameId, PageId)> f) { evict_observer_ = std::move(f); }
    void set_fault_observer(std::function<void(const FaultContext&, SimTime started, SimTime done)> f) {
        fault_observer_ = std::move(f);
    }

private:
    struct Waiter {
        std::uint32_t warp;
        AccessKind rw;
        std::function<void(SimTime, AccessOutcome)> done;
    };
    struct Episode {
        FaultContext ctx;
        FrameId frame = 0;
        SimTime started;
        std::vector<Waiter> waiters;
    };
    struct Post {
        WorkRequest wr;
        std::function<void(SimTime)> done;
    };
    struct QueueState {
        QueuePair qp;
        CompletionQueue cq;
        std::deque<Post> waiting;
        std::unordered_map<std::uint64_t, std::function<void(SimTime)>> callbacks;
        std::uint32_t outstanding = 0;
        std::uint64_t flush_version = 0;
    };

    void handle_fault(PageId page);
    void try_frame(PageId page, FrameId frame);
    void fetch(PageId page);
    void finish_fault(PageId page, SimTime at);
    void release(PageId page);
    void post(std::uint32_t q, Post p);
    void do_post(std::uint32_t q, Post p);
    void ring_doorbell(std::uint32_t q);
    void on_nic_complete(std::uint32_t q, std::uint64_t post_number, SimTime at);

    Engine& engine_;
    RuntimeConfig cfg_;
    std::optional<PageTable> pt_;
    std::optional<FrameRing> ring_;
    std::optional<NicModel> nic_;
    std::vector<QueueState> queues_;
    std::unordered_map<PageId, Episode> episodes_;
    std::unordered_map<PageId, std::vector<std::function<void()>>> frame_waiters_;
    // Faults granted each frame, oldest first; only the oldest may take it.
    std::unordered_map<FrameId, std::deque<PageId>> frame_claims_;
    std::vector<ManagedBuffer> buffers_;
    std::uint64_t next_queue_ = 0;
    std::uint64_t next_post_ = 1;
    Counters counters_;
    std::function<void(const WorkRequest&)> post_observer_;
    std::function<void(FrameId, PageId)> evict_observer_;
    std::function<void(const FaultContext&, SimTime, SimTime)> fault_observer_;
};

// Cold-fault latency of a single page on an idle system.
Duration idle_fault_latency(const RuntimeConfig& cfg);

// Runs every phase of an access program against a memory system; phases are barriers.
class WarpExecutor {
public:
    WarpExecutor(Engine& engine, MemorySystem& memory, const AccessProgram& program,
                 Duration step_overhead = Duration{});

    void start(SimTime at = SimTime{});
    bool finished() const { return finished_; }
    SimTime finish_time() const { return finish_time_; }
    std::string blocked_report() const;

private:
    void start_phase(std::size_t phase, SimTime at);
    void run_step(std::uint32_t warp, SimTime at);
    void step_done(std::uint32_t warp, std::uint64_t step, SimTime ready);

    Engine& engine_;
    MemorySystem& memory_;
    const AccessProgram& program_;
    Duration step_overhead_;
    std::size_t phase_ = 0;
    std::vector<std::uint64_t> cursor_, end_;
    std::vector<std::vector<std::uint64_t>> warp_steps_;
    std::uint32_t running_ = 0;
    SimTime phase_end_{};
    std::vector<std::optional<SimTime>> step_done_at_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> dependents_;
    bool finished_ = false;
    SimTime finish_time_{};
    std::vector<std::uint64_t> lanes_;
};

}  // namespace gpuvm
