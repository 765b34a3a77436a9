#include "gpuvm/runtime.hpp"

#include <algorithm>
#include <memory>
#include <sstream>

namespace gpuvm {

std::vector<LeaderGroup> elect_warp_leaders(const Warp& warp,
                                            const std::array<std::optional<PageId>, kLanes>& lane_pages) {
    std::vector<LeaderGroup> groups;
    for (std::uint32_t lane = 0; lane < warp.lane_count && lane < kLanes; ++lane) {
        bool active = (warp.active_mask >> lane) & 1u;
        if (active != lane_pages[lane].has_value())
            throw std::invalid_argument("lane " + std::to_string(lane) + " page presence disagrees with the mask");
        if (!active) continue;
        PageId p = *lane_pages[lane];
        auto it = std::find_if(groups.begin(), groups.end(), [p](const LeaderGroup& g) { return g.page == p; });
        if (it == groups.end()) {
            groups.push_back(LeaderGroup{p, lane, {lane}});
        } else {
            it->member_lanes.push_back(lane);
        }
    }
    return groups;
}

const char* to_string(FaultPhase p) {
    switch (p) {
        case FaultPhase::Elected: return "Elected";
        case FaultPhase::FramePending: return "FramePending";
        case FaultPhase::Posted: return "Posted";
        case FaultPhase::Polling: return "Polling";
        case FaultPhase::Done: return "Done";
    }
    return "?";
}

void FaultContext::advance(FaultPhase next) {
    if (next < phase)
        throw std::logic_error(std::string("fault phase moved backwards from ") + to_string(phase) + " to " +
                               to_string(next));
    phase = next;
}

void Counters::resize_warps(std::uint32_t warps) {
    warp_faults_led.assign(warps, 0);
    warp_faults_followed.assign(warps, 0);
}

void RuntimeConfig::validate() const {
    if (!is_power_of_two(page_size) || page_size < 512)
        throw std::invalid_argument("runtime.page_size_bytes must be a power of two >= 512");
    if (queue_count == 0) throw std::invalid_argument("queue_count must be at least 1");
    if (queue_depth == 0) throw std::invalid_argument("queue_depth must be at least 1");
    if (batch_size == 0 || batch_size > queue_depth)
        throw std::invalid_argument("batch_size must be between 1 and queue_depth");
    if (gpu_memory_bytes != 0 && gpu_memory_bytes < page_size)
        throw std::invalid_argument("runtime.gpu_memory_bytes must hold at least one page");
    nic.validate();
}

GpuvmRuntime::GpuvmRuntime(Engine& engine, RuntimeConfig cfg) : engine_(engine), cfg_(cfg) {
    cfg_.validate();
    nic_.emplace(engine_, cfg_.nic);
    queues_.reserve(cfg_.queue_count);
    for (std::uint32_t q = 0; q < cfg_.queue_count; ++q)
        queues_.push_back(QueueState{QueuePair(q, cfg_.queue_depth, cfg_.batch_size), {}, {}, {}, 0, 0});
}

void GpuvmRuntime::bind(const AccessProgram& program) {
    buffers_ = program.buffers;
    std::uint64_t pages = layout_pages(buffers_, cfg_.page_size);
    pt_.emplace(pages, cfg_.page_size);
    std::uint64_t frames = cfg_.gpu_memory_bytes ? cfg_.gpu_memory_bytes / cfg_.page_size : std::max<std::uint64_t>(1, pages);
    ring_.emplace(std::max<std::uint64_t>(1, frames));
    frame_claims_.clear();
    frame_waiters_.clear();
    counters_ = Counters{};
    counters_.resize_warps(program.warp_count);
}

void GpuvmRuntime::access_step(std::uint32_t warp, const AccessStep& step, std::span<const std::uint64_t> elements,
                               std::function<void(SimTime)> done) {
    const auto& buf = buffers_.at(step.buffer);
    std::array<std::optional<PageId>, kLanes> lane_pages{};
    Warp w{warp, kLanes, 0, 0};
    for (std::uint32_t k = 0; k < elements.size(); ++k) {
        if (elements[k] >= buf.length) throw std::out_of_range("element index beyond buffer " + buf.name);
        lane_pages[k] = buf.page_of(elements[k], cfg_.page_size);
        w.active_mask |= 1u << k;
    }
    ++counters_.steps;
    auto groups = elect_warp_leaders(w, lane_pages);
    struct Join {
        std::size_t left;
        SimTime ready;
        std::function<void(SimTime)> done;
    };
    auto join = std::make_shared<Join>(Join{groups.size(), engine_.now(), std::move(done)});
    for (const auto& g : groups) {
        access(warp, g.page, step.rw, [join](SimTime t, AccessOutcome) {
            join->ready = max_time(join->ready, t);
            if (--join->left == 0) join->done(join->ready);
        });
    }
}

void GpuvmRuntime::access(std::uint32_t warp, PageId page, AccessKind rw,
                          std::function<void(SimTime, AccessOutcome)> done) {
    pt_->add_ref(page);
    switch (pt_->translate(page).state) {
        case PageState::Resident: {
            if (rw == AccessKind::Write) pt_->mark_dirty(page);
            ++counters_.hits;
            release(page);
            done(engine_.now() + cfg_.resident_access_cost, AccessOutcome{cfg_.resident_access_cost, false, 0});
            return;
        }
        case PageState::Faulting: {
            auto& ep = episodes_.at(page);
            ep.ctx.followers.push_back(warp);
            ep.waiters.push_back(Waiter{warp, rw, std::move(done)});
            ++counters_.follower_waits;
            ++counters_.warp_faults_followed.at(warp);
            return;
        }
        case PageState::Unmapped: {
            pt_->begin_fault(page);
            Episode ep;
            ep.ctx.page = page;
            ep.ctx.leader_warp = warp;
            ep.ctx.queue_index = assign_queue();
            ep.started = engine_.now();
            ep.waiters.push_back(Waiter{warp, rw, std::move(done)});
            episodes_.emplace(page, std::move(ep));
            ++counters_.faults;
            ++counters_.warp_faults_led.at(warp);
            engine_.schedule(engine_.now() + cfg_.protocol_overhead, EventKind::WarpStep, page,
                             [this, page] { handle_fault(page); });
            return;
        }
    }
}

std::uint32_t GpuvmRuntime::assign_queue() { return static_cast<std::uint32_t>(next_queue_++ % cfg_.queue_count); }

void GpuvmRuntime::handle_fault(PageId page) {
    auto& ep = episodes_.at(page);
    ep.ctx.advance(FaultPhase::FramePending);
    FrameId frame = ring_->next();
    ep.frame = frame;
    auto& claims = frame_claims_[frame];
    claims.push_back(page);
    if (claims.size() == 1) try_frame(page, frame);
}

void GpuvmRuntime::try_frame(PageId page, FrameId frame) {
    auto owner = ring_->owner(frame);
    if (owner && pt_->entry(*owner).ref_count > 0) {
        ++counters_.ref_waits;
        frame_waiters_[*owner].push_back([this, page, frame] { try_frame(page, frame); });
        return;
    }
    bool dirty = false;
    Duration extra{};
    if (owner) {
        dirty = pt_->evict(*owner);
        ++counters_.evictions;
        if (dirty) ++counters_.dirty_evictions;
        if (evict_observer_) evict_observer_(frame, *owner);
        extra = cfg_.protocol_overhead;
    }
    ring_->set_owner(frame, page);
    auto claims = frame_claims_.find(frame);
    claims->second.pop_front();
    if (claims->second.empty()) {
        frame_claims_.erase(claims);
    } else {
        PageId next = claims->second.front();
        engine_.schedule(engine_.now(), EventKind::RefRelease, next, [this, next, frame] { try_frame(next, frame); });
    }
    auto& ep = episodes_.at(page);
    if (!dirty) {
        engine_.schedule(engine_.now() + extra, EventKind::WarpStep, page, [this, page] { fetch(page); });
        return;
    }
    WorkRequest wb;
    wb.page = *owner;
    wb.frame = frame;
    wb.length = cfg_.page_size;
    wb.qp_index = ep.ctx.queue_index;
    wb.direction = Direction::GpuToHost;
    engine_.schedule(engine_.now() + extra, EventKind::WarpStep, page, [this, page, wb] {
        post(wb.qp_index, Post{wb, [this, page](SimTime) {
                                   counters_.bytes_g2h += cfg_.page_size;
                                   engine_.schedule(engine_.now(), EventKind::WriteBackDone, page,
                                                    [this, page] { fetch(page); });
                               }});
    });
}

void GpuvmRuntime::fetch(PageId page) {
    auto& ep = episodes_.at(page);
    WorkRequest wr;
    wr.page = page;
    wr.frame = ep.frame;
    wr.length = cfg_.page_size;
    wr.qp_index = ep.ctx.queue_index;
    wr.direction = Direction::HostToGpu;
    post(wr.qp_index, Post{wr, [this, page](SimTime at) { finish_fault(page, at); }});
}

void GpuvmRuntime::finish_fault(PageId page, SimTime at) {
    auto node = episodes_.extract(page);
    auto& ep = node.mapped();
    ep.ctx.advance(FaultPhase::Polling);
    counters_.bytes_h2g += cfg_.page_size;
    pt_->install_mapping(page, ep.frame);
    pt_->complete_fault(page);
    ep.ctx.advance(FaultPhase::Done);
    if (fault_observer_) fault_observer_(ep.ctx, ep.started, at);
    for (auto& w : ep.waiters) {
        if (w.rw == AccessKind::Write) pt_->mark_dirty(page);
        release(page);
    }
    Duration lat = at - ep.started;
    for (auto& w : ep.waiters) w.done(at, AccessOutcome{lat, true, cfg_.page_size});
}

void GpuvmRuntime::release(PageId page) {
    if (pt_->release_ref(page) != 0) return;
    auto it = frame_waiters_.find(page);
    if (it == frame_waiters_.end()) return;
    auto waiters = std::move(it->second);
    frame_waiters_.erase(it);
    for (auto& f : waiters) engine_.schedule(engine_.now(), EventKind::RefRelease, page, std::move(f));
}

void GpuvmRuntime::post(std::uint32_t q, Post p) {
    auto& qs = queues_.at(q);
    if (qs.qp.can_post() && qs.waiting.empty()) {
        do_post(q, std::move(p));
    } else {
        qs.waiting.push_back(std::move(p));
    }
}

void GpuvmRuntime::do_post(std::uint32_t q, Post p) {
    auto& qs = queues_[q];
    p.wr.post_number = next_post_++;
    p.wr.qp_index = q;
    qs.qp.post(p.wr);
    qs.cq.expect(p.wr.post_number);
    qs.callbacks.emplace(p.wr.post_number, std::move(p.done));
    if (p.wr.direction == Direction::HostToGpu) {
        ++counters_.work_requests;
        auto it = episodes_.find(p.wr.page);
        if (it != episodes_.end()) {
            it->second.ctx.post_number = p.wr.post_number;
            it->second.ctx.advance(FaultPhase::Posted);
        }
    }
    if (post_observer_) post_observer_(p.wr);
    if (qs.qp.batch_full()) {
        ring_doorbell(q);
    } else if (qs.qp.batch_counter() == 1) {
        std::uint64_t v = ++qs.flush_version;
        engine_.schedule(engine_.now() + cfg_.batch_flush_timeout, EventKind::WarpStep, q, [this, q, v] {
            auto& s = queues_[q];
            if (s.flush_version != v || s.qp.locked() || s.qp.batch_counter() == 0) return;
            s.qp.seal_batch();
            ring_doorbell(q);
        });
    }
}

void GpuvmRuntime::ring_doorbell(std::uint32_t q) {
    auto& qs = queues_[q];
    if (!qs.qp.try_lock()) throw ProtocolError("doorbell race on queue " + std::to_string(q));
    ++qs.flush_version;
    ring_doorbell_record(qs.qp, engine_.now());
    ++counters_.doorbells;
    auto batch = qs.qp.take_pending();
    qs.outstanding = static_cast<std::uint32_t>(batch.size());
    for (const auto& wr : batch) {
        nic_->submit(wr, q % cfg_.nic.nic_count,
                     [this, q, pn = wr.post_number](SimTime at) { on_nic_complete(q, pn, at); });
    }
}

void GpuvmRuntime::on_nic_complete(std::uint32_t q, std::uint64_t post_number, SimTime at) {
    auto& qs = queues_[q];
    qs.cq.complete(post_number, at);
    if (!qs.cq.poll(post_number, engine_.now()).complete) throw ProtocolError("completion not visible to poll");
    auto node = qs.callbacks.extract(post_number);
    auto cb = std::move(node.mapped());
    if (--qs.outstanding == 0) {
        qs.qp.unlock();
        while (!qs.waiting.empty() && queues_[q].qp.can_post()) {
            Post p = std::move(queues_[q].waiting.front());
            queues_[q].waiting.pop_front();
            do_post(q, std::move(p));
        }
    }
    cb(at);
}

std::string GpuvmRuntime::blocked_report() const {
    if (episodes_.empty()) return {};
    std::ostringstream os;
    os << episodes_.size() << " fault episodes open";
    std::size_t shown = 0;
    for (const auto& [page, ep] : episodes_) {
        if (shown++ == 4) break;
        os << "; page " << page << " phase " << to_string(ep.ctx.phase) << " queue " << ep.ctx.queue_index;
        if (ring_) {
            auto owner = ring_->owner(ep.frame);
            if (owner && *owner != page)
                os << " waiting on frame " << ep.frame << " held by page " << *owner << " (refs "
                   << pt_->entry(*owner).ref_count << ")";
        }
    }
    return os.str();
}

Duration idle_fault_latency(const RuntimeConfig& cfg) {
    auto transfer_ns = (cfg.page_size * 1'000'000'000ull + cfg.nic.per_nic_bandwidth - 1) / cfg.nic.per_nic_bandwidth;
    return cfg.protocol_overhead + cfg.nic.base_latency + Duration::nanos(static_cast<std::int64_t>(transfer_ns));
}

WarpExecutor::WarpExecutor(Engine& engine, MemorySystem& memory, const AccessProgram& program, Duration step_overhead)
    : engine_(engine), memory_(memory), program_(program), step_overhead_(step_overhead) {
    cursor_.assign(program.warp_count, 0);
    end_.assign(program.warp_count, 0);
    warp_steps_.resize(program.warp_count);
    if (program.has_dependencies) {
        step_done_at_.assign(program.steps.size(), std::nullopt);
    }
}

void WarpExecutor::start(SimTime at) {
    if (program_.steps.empty() || program_.warp_count == 0) {
        finished_ = true;
        finish_time_ = at;
        return;
    }
    engine_.schedule(at, EventKind::WarpStep, 0, [this, at] { start_phase(0, at); });
}

void WarpExecutor::start_phase(std::size_t phase, SimTime at) {
    while (phase < program_.phase_count() && program_.phase_begin[phase] == program_.phase_end(phase)) ++phase;
    if (phase >= program_.phase_count()) {
        finished_ = true;
        finish_time_ = at;
        return;
    }
    phase_ = phase;
    phase_end_ = at;
    for (auto& v : warp_steps_) v.clear();
    for (std::uint64_t i = program_.phase_begin[phase]; i < program_.phase_end(phase); ++i)
        warp_steps_[program_.steps[i].warp].push_back(i);
    running_ = 0;
    for (std::uint32_t w = 0; w < program_.warp_count; ++w) {
        cursor_[w] = 0;
        end_[w] = warp_steps_[w].size();
        if (end_[w] == 0) continue;
        ++running_;
        engine_.schedule(at, EventKind::WarpStep, w, [this, w] { run_step(w, engine_.now()); });
    }
}

void WarpExecutor::run_step(std::uint32_t warp, SimTime) {
    std::uint64_t idx = warp_steps_[warp][cursor_[warp]];
    const auto& step = program_.steps[idx];
    if (step.dependency != kNoStep && !step_done_at_.empty() && !step_done_at_[step.dependency]) {
        dependents_[step.dependency].push_back(warp);
        return;
    }
    program_.lane_elements(step, lanes_);
    memory_.access_step(warp, step, lanes_, [this, warp, idx](SimTime ready) { step_done(warp, idx, ready); });
}

void WarpExecutor::step_done(std::uint32_t warp, std::uint64_t step, SimTime ready) {
    SimTime next = ready + step_overhead_ + program_.compute_per_step;
    if (!step_done_at_.empty()) {
        step_done_at_[step] = ready;
        auto it = dependents_.find(step);
        if (it != dependents_.end()) {
            for (auto w : it->second)
                engine_.schedule(max_time(engine_.now(), ready), EventKind::WarpStep, w,
                                 [this, w] { run_step(w, engine_.now()); });
            dependents_.erase(it);
        }
    }
    if (++cursor_[warp] < end_[warp]) {
        engine_.schedule(max_time(engine_.now(), next), EventKind::WarpStep, warp,
                         [this, warp] { run_step(warp, engine_.now()); });
        return;
    }
    phase_end_ = max_time(phase_end_, next);
    if (--running_ == 0) {
        SimTime at = max_time(engine_.now(), phase_end_);
        std::size_t nxt = phase_ + 1;
        engine_.schedule(at, EventKind::WarpStep, nxt, [this, nxt, at] { start_phase(nxt, at); });
    }
}

std::string WarpExecutor::blocked_report() const {
    if (finished_) return {};
    std::ostringstream os;
    os << "phase " << phase_ << " has " << running_ << " warps unfinished";
    std::string mem = memory_.blocked_report();
    if (!mem.empty()) os << "; " << mem;
    return os.str();
}

}  // namespace gpuvm
