#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gpuvm/engine.hpp"
#include "gpuvm/paging.hpp"

namespace gpuvm {

constexpr std::uint64_t kGiB = 1ull << 30;

class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class Direction : std::uint8_t { HostToGpu, GpuToHost };

struct WorkRequest {
    std::uint64_t post_number = 0;
    PageId page = 0;
    FrameId frame = 0;
    std::uint64_t length = 0;
    std::uint32_t qp_index = 0;
    Direction direction = Direction::HostToGpu;
};

struct DoorbellRecord {
    std::uint32_t qp_index = 0;
    std::uint32_t request_count = 0;
    SimTime rung_at;
};

class QueuePair {
public:
    QueuePair(std::uint32_t index, std::uint32_t depth, std::uint32_t batch_limit);

    std::uint64_t post(const WorkRequest& wr);
    // Indivisible lock acquisition; the winner rings the doorbell.
    bool try_lock();
    void unlock();
    // Seals a partially filled batch (flush timeout) so it can be rung.
    void seal_batch();

    bool batch_full() const { return batch_counter_ >= batch_target_; }
    bool can_post() const { return !locked_ && pending_.size() < depth_ && !batch_full(); }

    std::uint32_t index() const { return index_; }
    std::uint32_t depth() const { return depth_; }
    std::uint32_t batch_limit() const { return batch_limit_; }
    std::uint32_t batch_counter() const { return batch_counter_; }
    bool locked() const { return locked_; }
    const std::deque<WorkRequest>& pending() const { return pending_; }

    std::vector<WorkRequest> take_pending();

private:
    friend DoorbellRecord ring_doorbell_record(QueuePair&, SimTime);
    std::uint32_t index_;
    std::uint32_t depth_;
    std::uint32_t batch_limit_;
    std::uint32_t batch_target_;
    std::uint32_t batch_counter_ = 0;
    bool locked_ = false;
    std::deque<WorkRequest> pending_;
};

// Validates the batch protocol and produces the doorbell record; errors if the caller
// does not hold the lock or the batch is incomplete.
DoorbellRecord ring_doorbell_record(QueuePair& qp, SimTime now);

struct PollResult {
    bool complete = false;
    SimTime at;
};

class CompletionQueue {
public:
    void expect(std::uint64_t post_number);
    void complete(std::uint64_t post_number, SimTime at);
    PollResult poll(std::uint64_t post_number, SimTime now) const;
    std::size_t completed_count() const { return completed_; }

private:
    std::unordered_map<std::uint64_t, std::optional<SimTime>> entries_;
    std::size_t completed_ = 0;
};

struct NicTimingModel {
    Duration base_latency = Duration::micros(23);
    std::uint64_t per_nic_bandwidth = 6'500'000'000ull;
    std::uint32_t nic_count = 1;
    std::uint64_t aggregate_cap = 12'150'000'000ull;
    bool bridge_halving = true;
    // Each request's latency is drawn uniformly from base_latency +/- latency_jitter.
    Duration latency_jitter = Duration::micros(1);
    std::uint64_t seed = 0;

    std::uint64_t throughput_cap() const;
    void validate() const;
};

// Processor-sharing transfer model. Each request first spends base_latency, then shares
// its NIC's bandwidth equally with the other requests in transfer; the NICs together never
// exceed the aggregate cap. When bridge_halving is set both directions share one channel.
class NicModel {
public:
    NicModel(Engine& engine, NicTimingModel model);

    void submit(const WorkRequest& wr, std::uint32_t nic, std::function<void(SimTime)> on_complete);

    const NicTimingModel& model() const { return model_; }
    std::uint64_t bytes_completed(Direction d) const { return d == Direction::HostToGpu ? h2g_ : g2h_; }
    std::size_t in_flight() const { return in_flight_; }

private:
    struct Flow {
        std::uint64_t post_number;
        unsigned __int128 remaining;  // bytes scaled by 1e9
        std::uint64_t bytes;
        Direction dir;
        std::function<void(SimTime)> done;
    };
    struct Channel {
        std::vector<Flow> flows;
    };

    void start_transfer(Flow flow, std::size_t channel);
    void advance(SimTime to);
    std::uint64_t channel_rate(std::size_t busy_channels) const;
    void reschedule();
    void on_tick(std::uint64_t version);
    std::size_t channel_of(std::uint32_t nic, Direction d) const;

    Engine& engine_;
    NicTimingModel model_;
    std::vector<Channel> channels_;
    SimTime last_;
    std::uint64_t version_ = 0;
    std::uint64_t h2g_ = 0, g2h_ = 0;
    std::size_t in_flight_ = 0;
    std::uint64_t rng_state_;
};

// Completion times of a batch submitted at `now` to an otherwise idle NIC.
std::vector<std::pair<std::uint64_t, SimTime>> service_requests(const NicTimingModel& model,
                                                                 const std::vector<WorkRequest>& batch, SimTime now,
                                                                 std::uint32_t nic = 0);

// Average outstanding requests needed to sustain target_bw (bytes/s): latency x rate / size,
// rounded to the nearest whole request (at least one).
std::uint64_t little_law_queue_depth(Duration latency, double target_bw, std::uint64_t page_size);

struct GdrFit {
    double setup_seconds = 0;
    std::uint64_t anchor_size = 4096;
    std::uint32_t anchor_streams = 16;
    double anchor_throughput = 0.064e9;
};

// Fits the per-request setup overhead so that throughput(anchor) matches the anchor value.
GdrFit fit_gdr_setup(const NicTimingModel& model, const GdrFit& anchor = GdrFit{});
double gdr_baseline_throughput(std::uint64_t request_size, std::uint32_t streams, const NicTimingModel& model,
                               const GdrFit& fit);
double gdr_baseline_throughput(std::uint64_t request_size, std::uint32_t streams, const NicTimingModel& model);

}  // namespace gpuvm
