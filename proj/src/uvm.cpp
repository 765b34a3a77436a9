#include "gpuvm/uvm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

namespace gpuvm {

void UvmConfig::validate() const {
    if (fault_granularity == 0 || prefetch_bytes % fault_granularity != 0)
        throw std::invalid_argument("uvm.prefetch_bytes must be a multiple of the fault granularity");
    if (region_bytes() != 65536) throw std::invalid_argument("uvm fault granularity plus prefetch must equal 64KB");
    if (eviction_block == 0 || eviction_block % region_bytes() != 0)
        throw std::invalid_argument("uvm.eviction_block_bytes must be a multiple of 64KB");
    if (os_cost_curve.empty() || transfer_curve.size() < 2) throw std::invalid_argument("uvm cost curves need anchors");
    for (std::size_t i = 1; i < os_cost_curve.size(); ++i)
        if (os_cost_curve[i].bytes <= os_cost_curve[i - 1].bytes)
            throw std::invalid_argument("uvm os curve anchors must increase");
    for (std::size_t i = 1; i < transfer_curve.size(); ++i)
        if (transfer_curve[i].bytes <= transfer_curve[i - 1].bytes)
            throw std::invalid_argument("uvm transfer curve anchors must increase");
    if (!(read_mostly_os_scale > 0.0 && read_mostly_os_scale <= 1.0))
        throw std::invalid_argument("uvm read-mostly scale must be in (0, 1]");
    if (batch_capacity == 0) throw std::invalid_argument("uvm batch capacity must be positive");
    if (service_unit_bytes < region_bytes()) throw std::invalid_argument("uvm service unit must hold at least one 64KB region");
    if (gpu_memory_bytes != 0 && gpu_memory_bytes < eviction_block)
        throw std::invalid_argument("uvm gpu memory must hold at least one eviction block");
}

namespace {
std::int64_t lerp(const CurvePoint& a, const CurvePoint& b, std::uint64_t x) {
    // integer interpolation rounded to nearest ns
    auto dx = static_cast<__int128>(x) - static_cast<__int128>(a.bytes);
    auto span = static_cast<__int128>(b.bytes) - static_cast<__int128>(a.bytes);
    auto dy = static_cast<__int128>(b.cost.ns - a.cost.ns);
    __int128 num = dy * dx;
    __int128 q = num >= 0 ? (num + span / 2) / span : -((-num + span / 2) / span);
    return static_cast<std::int64_t>(a.cost.ns + q);
}
}  // namespace

Duration interpolate_clamped(const std::vector<CurvePoint>& c, std::uint64_t bytes) {
    if (bytes <= c.front().bytes) return c.front().cost;
    if (bytes >= c.back().bytes) return c.back().cost;
    for (std::size_t i = 1; i < c.size(); ++i)
        if (bytes <= c[i].bytes) return Duration::nanos(lerp(c[i - 1], c[i], bytes));
    return c.back().cost;
}

Duration interpolate_extended(const std::vector<CurvePoint>& c, std::uint64_t bytes) {
    if (c.size() == 1) return c.front().cost;
    std::size_t i = 1;
    while (i + 1 < c.size() && bytes > c[i].bytes) ++i;
    return Duration::nanos(std::max<std::int64_t>(0, lerp(c[i - 1], c[i], bytes)));
}

UvmServiceTime uvm_fault_service_time(std::uint64_t batch_bytes, const UvmConfig& cfg) {
    if (batch_bytes == 0) throw std::invalid_argument("batch_bytes must be positive");
    return UvmServiceTime{interpolate_clamped(cfg.os_cost_curve, batch_bytes),
                          interpolate_extended(cfg.transfer_curve, batch_bytes)};
}

AffineFit fit_transfer_affine(const std::vector<CurvePoint>& curve) {
    double n = static_cast<double>(curve.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (const auto& p : curve) {
        double x = static_cast<double>(p.bytes), y = p.cost.seconds();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double icept = (sy - slope * sx) / n;
    return AffineFit{Duration::nanos(static_cast<std::int64_t>(std::llround(icept * 1e9))), 1.0 / slope};
}

bool FaultBuffer::push(const FaultRecord& f) {
    if (!pending_.insert(f.region).second) return false;
    queue_.push_back(f);
    return true;
}

std::vector<FaultRecord> FaultBuffer::take_batch() {
    std::vector<FaultRecord> out;
    while (!queue_.empty() && out.size() < capacity_) {
        out.push_back(queue_.front());
        queue_.pop_front();
    }
    return out;
}

UvmModel::UvmModel(Engine& engine, UvmConfig cfg) : engine_(engine), cfg_(std::move(cfg)), buffer_(cfg_.batch_capacity) {
    cfg_.validate();
}

void UvmModel::bind(const AccessProgram& program) {
    const std::uint64_t rb = cfg_.region_bytes();
    const std::uint64_t per_block = cfg_.eviction_block / rb;
    buffer_base_.clear();
    element_size_.clear();
    std::uint64_t next = 0;
    for (const auto& b : program.buffers) {
        buffer_base_.push_back(next);
        element_size_.push_back(b.element_size);
        std::uint64_t regions = (b.bytes() + rb - 1) / rb;
        next += (regions + per_block - 1) / per_block * per_block;
    }
    regions_.assign(std::max<std::uint64_t>(next, 1), Region{});
    std::uint64_t blocks = (regions_.size() + per_block - 1) / per_block;
    block_last_fault_.assign(blocks, SimTime{});
    block_resident_.assign(blocks, 0);
    capacity_ = cfg_.gpu_memory_bytes ? cfg_.gpu_memory_bytes / rb : regions_.size();
    used_ = 0;
    counters_ = Counters{};
    counters_.resize_warps(program.warp_count);
}

std::uint64_t UvmModel::region_of(std::uint16_t buffer, std::uint64_t element) const {
    return buffer_base_.at(buffer) + element * element_size_.at(buffer) / cfg_.region_bytes();
}

void UvmModel::access_step(std::uint32_t warp, const AccessStep& step, std::span<const std::uint64_t> elements,
                           std::function<void(SimTime)> done) {
    auto w = std::make_shared<StepWait>();
    w->warp = warp;
    w->rw = step.rw;
    w->done = std::move(done);
    w->issued = engine_.now();
    const std::uint64_t rb = cfg_.region_bytes(), g = cfg_.fault_granularity;
    const std::uint64_t esz = element_size_.at(step.buffer);
    for (auto e : elements) {
        std::uint64_t off = e * esz;
        std::uint64_t region = buffer_base_[step.buffer] + off / rb;
        // elements may straddle 4KB pages; cover every page they touch
        std::uint64_t first = (off % rb) / g, last = ((off + esz - 1) % rb) / g;
        if ((off + esz - 1) / rb != off / rb) last = rb / g - 1;
        std::uint16_t mask = 0;
        for (auto p = first; p <= last; ++p) mask |= static_cast<std::uint16_t>(1u << p);
        auto it = std::find_if(w->needs.begin(), w->needs.end(), [&](const Need& n) { return n.region == region; });
        if (it == w->needs.end())
            w->needs.push_back(Need{region, mask, static_cast<std::uint8_t>(first)});
        else
            it->pages |= mask;
    }
    ++counters_.steps;
    ++waiting_steps_;
    check(w);
}

void UvmModel::check(const std::shared_ptr<StepWait>& w) {
    const std::uint64_t gen = ++w->generation;
    if (engine_.now() - w->issued > cfg_.livelock_horizon)
        throw StallError("uvm warp " + std::to_string(w->warp) + " made no progress for " +
                         std::to_string((engine_.now() - w->issued).ns) + "ns (replay livelock)");
    SimTime ready = engine_.now();
    bool missing = false;
    auto recheck = [this, w, gen] {
        if (w->generation == gen) check(w);
    };
    for (const auto& n : w->needs) {
        auto& r = regions_[n.region];
        switch (r.state) {
            case RegionState::Resident: {
                std::uint16_t demand = static_cast<std::uint16_t>(1u << r.demand_page);
                ready = max_time(ready, (n.pages & ~demand) ? r.full_ready : r.demand_ready);
                break;
            }
            case RegionState::Absent:
                raise_fault(n.region, n.first_page, w->rw);
                if (!w->faulted) {
                    w->faulted = true;
                    ++counters_.warp_faults_led.at(w->warp);
                }
                [[fallthrough]];
            case RegionState::Pending:
                if (!w->faulted) {
                    w->faulted = true;
                    ++counters_.warp_faults_followed.at(w->warp);
                }
                missing = true;
                r.waiters.push_back(recheck);
                break;
        }
    }
    if (missing) return;
    if (ready > engine_.now()) {
        engine_.schedule(ready, EventKind::WarpStep, w->warp, recheck);
        return;
    }
    for (const auto& n : w->needs) {
        auto& r = regions_[n.region];
        r.touched |= n.pages;
        if (w->rw == AccessKind::Write) r.dirty |= n.pages;
    }
    if (!w->faulted) ++counters_.hits;
    --waiting_steps_;
    w->done(engine_.now() + cfg_.resident_access_cost);
}

void UvmModel::raise_fault(std::uint64_t region, std::uint8_t page, AccessKind rw) {
    auto& r = regions_[region];
    r.state = RegionState::Pending;
    buffer_.push(FaultRecord{region, page, engine_.now(), rw == AccessKind::Write});
    if (!driver_busy_) {
        driver_busy_ = true;
        engine_.schedule(engine_.now() + cfg_.batching_window, EventKind::DriverService, 0, [this] { service_round(); });
    }
}

void UvmModel::service_round() {
    auto batch = buffer_.take_batch();
    if (batch.empty()) {
        driver_busy_ = false;
        return;
    }
    ++counters_.service_rounds;
    const std::uint64_t per_block = cfg_.eviction_block / cfg_.region_bytes();
    auto groups = std::make_shared<std::vector<std::vector<FaultRecord>>>();
    const std::uint64_t unit = std::max<std::uint64_t>(1, cfg_.service_unit_bytes / cfg_.region_bytes());
    std::unordered_map<std::uint64_t, std::size_t> open;  // block -> group currently filling
    bool reads_only = true;
    for (const auto& f : batch) {
        reads_only = reads_only && !f.write;
        std::uint64_t block = f.region / per_block;
        auto it = open.find(block);
        if (it == open.end() || (*groups)[it->second].size() >= unit) {
            open[block] = groups->size();
            groups->emplace_back();
            groups->back().push_back(f);
        } else {
            (*groups)[it->second].push_back(f);
        }
    }
    service_group(groups, 0, reads_only);
}

void UvmModel::service_group(std::shared_ptr<std::vector<std::vector<FaultRecord>>> groups, std::size_t index,
                             bool reads_only) {
    if (index == groups->size()) {
        if (buffer_.empty()) {
            driver_busy_ = false;
        } else {
            service_round();
        }
        return;
    }
    const auto& group = (*groups)[index];
    const std::uint64_t rb = cfg_.region_bytes();
    const std::uint64_t per_block = cfg_.eviction_block / rb;
    const std::uint64_t block = group.front().region / per_block;
    const auto k = static_cast<std::uint64_t>(group.size());
    if (k > capacity_)
        throw StallError("uvm batch group of " + std::to_string(k) + " regions exceeds GPU capacity of " +
                         std::to_string(capacity_) + " regions");
    Duration cpu{};
    while (capacity_ - used_ < k) {
        std::optional<std::uint64_t> victim;
        for (std::uint64_t b = 0; b < block_resident_.size(); ++b) {
            if (b == block || block_resident_[b] == 0) continue;
            if (!victim || block_last_fault_[b] < block_last_fault_[*victim]) victim = b;
        }
        if (!victim) {
            if (block_resident_[block] == 0)
                throw StallError("uvm cannot free " + std::to_string(k) + " regions for block " + std::to_string(block));
            victim = block;
        }
        evict_block(*victim, cpu);
    }
    Duration os = interpolate_clamped(cfg_.os_cost_curve, k * rb);
    if (cfg_.read_mostly && reads_only)
        os = Duration::nanos(static_cast<std::int64_t>(std::llround(static_cast<double>(os.ns) * cfg_.read_mostly_os_scale)));
    SimTime cpu_done = engine_.now() + cpu + os;
    SimTime start = max_time(cpu_done, dma_free_);
    SimTime demand = start + interpolate_extended(cfg_.transfer_curve, k * cfg_.fault_granularity);
    SimTime full = start + interpolate_extended(cfg_.transfer_curve, k * rb);
    dma_free_ = full;
    block_last_fault_[block] = engine_.now();
    for (const auto& f : group) {
        auto& r = regions_[f.region];
        r.state = RegionState::Resident;
        r.demand_page = static_cast<std::uint8_t>(f.page);
        r.demand_ready = demand;
        r.full_ready = full;
        r.dirty = 0;
        r.touched = 0;
        ++used_;
        ++block_resident_[block];
        ++counters_.faults;
        counters_.bytes_h2g += rb;
        if (migrate_observer_) migrate_observer_(f.region, rb);
        buffer_.retire(f.region);
        auto waiters = std::move(r.waiters);
        r.waiters.clear();
        for (auto& cb : waiters) engine_.schedule(demand, EventKind::DriverService, f.region, std::move(cb));
    }
    engine_.schedule(cpu_done, EventKind::DriverService, block,
                     [this, groups, index, reads_only] { service_group(groups, index + 1, reads_only); });
}

void UvmModel::evict_block(std::uint64_t block, Duration& cpu) {
    const std::uint64_t rb = cfg_.region_bytes(), g = cfg_.fault_granularity;
    const std::uint64_t per_block = cfg_.eviction_block / rb;
    std::vector<std::uint64_t> pages;
    std::uint64_t dirty_pages = 0;
    for (std::uint64_t r = block * per_block; r < (block + 1) * per_block && r < regions_.size(); ++r) {
        auto& reg = regions_[r];
        if (reg.state != RegionState::Resident) continue;
        for (std::uint64_t p = 0; p < rb / g; ++p) pages.push_back(r * (rb / g) + p);
        dirty_pages += static_cast<std::uint64_t>(std::popcount(reg.dirty));
        counters_.wasted_bytes += g * static_cast<std::uint64_t>(std::popcount(static_cast<std::uint16_t>(~reg.touched)));
        reg.state = RegionState::Absent;
        reg.dirty = 0;
        reg.touched = 0;
        --used_;
        --block_resident_[block];
    }
    ++counters_.evictions;
    if (dirty_pages) {
        counters_.dirty_evictions += dirty_pages;
        counters_.bytes_g2h += dirty_pages * g;
        cpu = cpu + interpolate_extended(cfg_.transfer_curve, dirty_pages * g);
    }
    if (evict_observer_) evict_observer_(block, pages);
}

std::vector<std::uint64_t> UvmModel::vablock_evict() {
    std::optional<std::uint64_t> victim;
    for (std::uint64_t b = 0; b < block_resident_.size(); ++b) {
        if (block_resident_[b] == 0) continue;
        if (!victim || block_last_fault_[b] < block_last_fault_[*victim]) victim = b;
    }
    if (!victim) return {};
    std::vector<std::uint64_t> dropped;
    auto keep = evict_observer_;
    evict_observer_ = [&dropped](std::uint64_t, const std::vector<std::uint64_t>& p) { dropped = p; };
    Duration cpu{};
    evict_block(*victim, cpu);
    evict_observer_ = std::move(keep);
    if (evict_observer_) evict_observer_(*victim, dropped);
    return dropped;
}

Duration UvmModel::apply_memadvise(bool read_mostly, std::uint64_t advised_bytes) const {
    if (!read_mostly) return Duration{};
    if (cfg_.memadvise_setup) return *cfg_.memadvise_setup;
    double s = cfg_.memadvise_seconds_per_gib * static_cast<double>(advised_bytes) / static_cast<double>(1ull << 30);
    return Duration::nanos(static_cast<std::int64_t>(std::llround(s * 1e9)));
}

std::string UvmModel::blocked_report() const {
    if (waiting_steps_ == 0) return {};
    std::ostringstream os;
    os << waiting_steps_ << " uvm warp steps waiting; fault buffer " << buffer_.size() << "; driver "
       << (driver_busy_ ? "busy" : "idle");
    return os.str();
}

}  // namespace gpuvm
