#include "gpuvm/rnic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gpuvm {

namespace {
constexpr std::uint64_t kScale = 1'000'000'000ull;
using u128 = unsigned __int128;
}  // namespace

QueuePair::QueuePair(std::uint32_t index, std::uint32_t depth, std::uint32_t batch_limit)
    : index_(index), depth_(depth), batch_limit_(batch_limit), batch_target_(batch_limit) {
    if (depth == 0) throw std::invalid_argument("queue depth must be positive");
    if (batch_limit == 0) throw std::invalid_argument("batch size must be positive");
}

std::uint64_t QueuePair::post(const WorkRequest& wr) {
    if (locked_) throw ProtocolError("post to locked queue " + std::to_string(index_));
    if (pending_.size() >= depth_) throw ProtocolError("queue " + std::to_string(index_) + " overflow");
    if (batch_full()) throw ProtocolError("queue " + std::to_string(index_) + " batch already full");
    pending_.push_back(wr);
    ++batch_counter_;
    return wr.post_number;
}

bool QueuePair::try_lock() {
    if (locked_) return false;
    locked_ = true;
    return true;
}

void QueuePair::unlock() {
    locked_ = false;
    batch_counter_ = 0;
    batch_target_ = batch_limit_;
}

void QueuePair::seal_batch() {
    if (batch_counter_ > 0) batch_target_ = batch_counter_;
}

std::vector<WorkRequest> QueuePair::take_pending() {
    std::vector<WorkRequest> out(pending_.begin(), pending_.end());
    pending_.clear();
    return out;
}

DoorbellRecord ring_doorbell_record(QueuePair& qp, SimTime now) {
    if (!qp.locked_) throw ProtocolError("doorbell rung without holding the lock of queue " + std::to_string(qp.index_));
    if (qp.batch_counter_ < qp.batch_target_)
        throw ProtocolError("doorbell rung with incomplete batch on queue " + std::to_string(qp.index_) + " (" +
                            std::to_string(qp.batch_counter_) + "/" + std::to_string(qp.batch_target_) + ")");
    return DoorbellRecord{qp.index_, qp.batch_counter_, now};
}

void CompletionQueue::expect(std::uint64_t post_number) {
    if (!entries_.emplace(post_number, std::nullopt).second)
        throw ProtocolError("duplicate post number " + std::to_string(post_number));
}

void CompletionQueue::complete(std::uint64_t post_number, SimTime at) {
    auto it = entries_.find(post_number);
    if (it == entries_.end()) throw ProtocolError("completion for unknown post number " + std::to_string(post_number));
    if (it->second) throw ProtocolError("post number " + std::to_string(post_number) + " completed twice");
    it->second = at;
    ++completed_;
}

PollResult CompletionQueue::poll(std::uint64_t post_number, SimTime now) const {
    auto it = entries_.find(post_number);
    if (it == entries_.end()) throw ProtocolError("poll of unknown post number " + std::to_string(post_number));
    if (it->second && *it->second <= now) return PollResult{true, *it->second};
    return PollResult{false, {}};
}

std::uint64_t NicTimingModel::throughput_cap() const {
    return std::min<std::uint64_t>(per_nic_bandwidth * nic_count, aggregate_cap);
}

void NicTimingModel::validate() const {
    if (nic_count < 1 || nic_count > 2) throw std::invalid_argument("nic.count must be 1 or 2");
    if (per_nic_bandwidth == 0 || aggregate_cap == 0) throw std::invalid_argument("NIC bandwidth must be positive");
    if (base_latency.ns < 0) throw std::invalid_argument("NIC latency must be non-negative");
    if (latency_jitter.ns < 0 || latency_jitter > base_latency)
        throw std::invalid_argument("NIC latency jitter must be between 0 and the base latency");
}

NicModel::NicModel(Engine& engine, NicTimingModel model)
    : engine_(engine), model_(model), rng_state_(model.seed ^ 0x6a09e667f3bcc909ull) {
    model_.validate();
    channels_.resize(model_.nic_count * (model_.bridge_halving ? 1 : 2));
}

std::size_t NicModel::channel_of(std::uint32_t nic, Direction d) const {
    nic %= model_.nic_count;
    if (model_.bridge_halving) return nic;
    return nic * 2 + (d == Direction::HostToGpu ? 0 : 1);
}

std::uint64_t NicModel::channel_rate(std::size_t busy) const {
    if (busy == 0) return model_.per_nic_bandwidth;
    return std::min<std::uint64_t>(model_.per_nic_bandwidth, model_.aggregate_cap / busy);
}

void NicModel::submit(const WorkRequest& wr, std::uint32_t nic, std::function<void(SimTime)> on_complete) {
    ++in_flight_;
    Duration latency = model_.base_latency;
    if (model_.latency_jitter.ns > 0) {
        // splitmix64 step keeps the draw identical on every platform
        std::uint64_t z = (rng_state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z ^= z >> 31;
        auto span = static_cast<std::uint64_t>(2 * model_.latency_jitter.ns + 1);
        latency = latency + Duration::nanos(static_cast<std::int64_t>(z % span) - model_.latency_jitter.ns);
    }
    SimTime ready = engine_.now() + latency;
    Flow flow{wr.post_number, static_cast<u128>(wr.length) * kScale, wr.length, wr.direction, std::move(on_complete)};
    std::size_t ch = channel_of(nic, wr.direction);
    engine_.schedule(ready, EventKind::NicComplete, wr.post_number,
                     [this, ch, f = std::move(flow)]() mutable { start_transfer(std::move(f), ch); });
}

void NicModel::start_transfer(Flow flow, std::size_t channel) {
    advance(engine_.now());
    if (flow.remaining == 0) {
        --in_flight_;
        (flow.dir == Direction::HostToGpu ? h2g_ : g2h_) += flow.bytes;
        auto done = std::move(flow.done);
        reschedule();
        if (done) done(engine_.now());
        return;
    }
    channels_[channel].flows.push_back(std::move(flow));
    reschedule();
}

void NicModel::advance(SimTime to) {
    std::int64_t dt = (to - last_).ns;
    last_ = to;
    if (dt <= 0) return;
    std::size_t busy = 0;
    for (const auto& c : channels_) busy += c.flows.empty() ? 0 : 1;
    std::uint64_t rate = channel_rate(busy);
    for (auto& c : channels_) {
        if (c.flows.empty()) continue;
        u128 served = static_cast<u128>(dt) * rate / c.flows.size();
        for (auto& f : c.flows) f.remaining = f.remaining > served ? f.remaining - served : 0;
    }
}

void NicModel::reschedule() {
    ++version_;
    std::size_t busy = 0;
    for (const auto& c : channels_) busy += c.flows.empty() ? 0 : 1;
    if (busy == 0) return;
    std::uint64_t rate = channel_rate(busy);
    u128 best = std::numeric_limits<u128>::max();
    for (const auto& c : channels_) {
        for (const auto& f : c.flows) {
            u128 need = (f.remaining * c.flows.size() + rate - 1) / rate;
            best = std::min(best, need);
        }
    }
    std::uint64_t v = version_;
    engine_.schedule(last_ + Duration::nanos(static_cast<std::int64_t>(best)), EventKind::NicComplete, v,
                     [this, v] { on_tick(v); });
}

void NicModel::on_tick(std::uint64_t version) {
    if (version != version_) return;
    advance(engine_.now());
    std::vector<Flow> finished;
    for (auto& c : channels_) {
        auto mid = std::stable_partition(c.flows.begin(), c.flows.end(), [](const Flow& f) { return f.remaining > 0; });
        for (auto it = mid; it != c.flows.end(); ++it) finished.push_back(std::move(*it));
        c.flows.erase(mid, c.flows.end());
    }
    std::stable_sort(finished.begin(), finished.end(),
                     [](const Flow& a, const Flow& b) { return a.post_number < b.post_number; });
    for (auto& f : finished) {
        --in_flight_;
        (f.dir == Direction::HostToGpu ? h2g_ : g2h_) += f.bytes;
    }
    reschedule();
    for (auto& f : finished)
        if (f.done) f.done(engine_.now());
}

std::vector<std::pair<std::uint64_t, SimTime>> service_requests(const NicTimingModel& model,
                                                                 const std::vector<WorkRequest>& batch, SimTime now,
                                                                 std::uint32_t nic) {
    Engine engine(Duration{0});
    std::vector<std::pair<std::uint64_t, SimTime>> out;
    NicModel m(engine, model);
    engine.schedule(now, EventKind::NicComplete, 0, [&] {
        for (const auto& wr : batch)
            m.submit(wr, nic, [&out, pn = wr.post_number](SimTime t) { out.emplace_back(pn, t); });
    });
    engine.run_until_idle();
    return out;
}

std::uint64_t little_law_queue_depth(Duration latency, double target_bw, std::uint64_t page_size) {
    if (latency.ns <= 0 || !(target_bw > 0) || page_size == 0)
        throw std::invalid_argument("little_law_queue_depth needs positive arguments");
    double depth = latency.seconds() * target_bw / static_cast<double>(page_size);
    return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(depth)));
}

GdrFit fit_gdr_setup(const NicTimingModel& model, const GdrFit& anchor) {
    GdrFit fit = anchor;
    double per_request = static_cast<double>(anchor.anchor_streams) * static_cast<double>(anchor.anchor_size) /
                         anchor.anchor_throughput;
    double payload = static_cast<double>(anchor.anchor_size) / static_cast<double>(model.per_nic_bandwidth);
    fit.setup_seconds = std::max(0.0, per_request - payload);
    return fit;
}

double gdr_baseline_throughput(std::uint64_t request_size, std::uint32_t streams, const NicTimingModel& model,
                               const GdrFit& fit) {
    if (streams == 0 || request_size == 0) return 0.0;
    double bw = static_cast<double>(model.per_nic_bandwidth);
    double t = fit.setup_seconds + static_cast<double>(request_size) / bw;
    return std::min(bw, static_cast<double>(streams) * static_cast<double>(request_size) / t);
}

double gdr_baseline_throughput(std::uint64_t request_size, std::uint32_t streams, const NicTimingModel& model) {
    return gdr_baseline_throughput(request_size, streams, model, fit_gdr_setup(model));
}

}  // namespace gpuvm
