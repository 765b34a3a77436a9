#include "gpuvm/paging.hpp"

#include <cmath>
#include <unordered_map>

namespace gpuvm {

const char* to_string(PageState s) {
    switch (s) {
        case PageState::Unmapped: return "Unmapped";
        case PageState::Faulting: return "Faulting";
        case PageState::Resident: return "Resident";
    }
    return "?";
}

bool is_power_of_two(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

PageTable::PageTable(std::uint64_t total_pages, std::uint64_t page_size)
    : entries_(total_pages), page_size_(page_size) {
    if (!is_power_of_two(page_size) || page_size < 512)
        throw std::invalid_argument("page size must be a power of two >= 512");
}

const PageTableEntry& PageTable::entry(PageId page) const {
    if (page >= entries_.size()) throw std::out_of_range("page " + std::to_string(page) + " out of range");
    return entries_[page];
}

PageTableEntry& PageTable::at(PageId page) {
    if (page >= entries_.size()) throw std::out_of_range("page " + std::to_string(page) + " out of range");
    return entries_[page];
}

void PageTable::note(PageId page, PageState from, PageState to) {
    if (observer_) observer_(PageTransition{page, from, to, entries_[page].ref_count});
}

Translation PageTable::translate(PageId page) const {
    const auto& e = entry(page);
    return Translation{e.state, e.frame.value_or(0)};
}

std::uint32_t PageTable::add_ref(PageId page) {
    auto& e = at(page);
    ++add_calls_;
    ++total_refs_;
    return ++e.ref_count;
}

std::uint32_t PageTable::release_ref(PageId page) {
    auto& e = at(page);
    if (e.ref_count == 0) throw std::logic_error("release_ref underflow on page " + std::to_string(page));
    ++release_calls_;
    --total_refs_;
    return --e.ref_count;
}

void PageTable::begin_fault(PageId page) {
    auto& e = at(page);
    if (e.state != PageState::Unmapped)
        throw std::logic_error("begin_fault on " + std::string(to_string(e.state)) + " page " + std::to_string(page));
    e.state = PageState::Faulting;
    note(page, PageState::Unmapped, PageState::Faulting);
}

void PageTable::install_mapping(PageId page, FrameId frame) {
    auto& e = at(page);
    if (e.state == PageState::Resident)
        throw std::logic_error("install_mapping over resident page " + std::to_string(page));
    if (e.state != PageState::Faulting)
        throw std::logic_error("install_mapping on unmapped page " + std::to_string(page));
    e.frame = frame;
}

void PageTable::complete_fault(PageId page) {
    auto& e = at(page);
    if (e.state != PageState::Faulting)
        throw std::logic_error("complete_fault on " + std::string(to_string(e.state)) + " page " + std::to_string(page));
    if (!e.frame) throw std::logic_error("complete_fault without an installed frame on page " + std::to_string(page));
    e.state = PageState::Resident;
    ++resident_;
    note(page, PageState::Faulting, PageState::Resident);
}

bool PageTable::evict(PageId page) {
    auto& e = at(page);
    if (e.state != PageState::Resident) throw std::logic_error("evict on non-resident page " + std::to_string(page));
    if (e.ref_count > 0)
        throw std::logic_error("evict of page " + std::to_string(page) + " with ref_count " +
                               std::to_string(e.ref_count));
    note(page, PageState::Resident, PageState::Unmapped);
    bool dirty = e.dirty;
    e = PageTableEntry{};
    --resident_;
    return dirty;
}

void PageTable::mark_dirty(PageId page) {
    auto& e = at(page);
    if (e.state != PageState::Resident) throw std::logic_error("write to non-resident page " + std::to_string(page));
    e.dirty = true;
}

void PageTable::check_invariants(std::uint64_t frame_count) const {
    std::unordered_map<FrameId, PageId> seen;
    std::uint64_t resident = 0, refs = 0;
    for (PageId p = 0; p < entries_.size(); ++p) {
        const auto& e = entries_[p];
        refs += e.ref_count;
        if ((e.state == PageState::Resident) != e.frame.has_value() && e.state != PageState::Faulting)
            throw std::logic_error("frame presence mismatch on page " + std::to_string(p));
        if (e.ref_count > 0 && e.state == PageState::Unmapped)
            throw std::logic_error("referenced unmapped page " + std::to_string(p));
        if (e.dirty && e.state != PageState::Resident) throw std::logic_error("dirty non-resident page " + std::to_string(p));
        if (e.state == PageState::Resident) {
            ++resident;
            if (*e.frame >= frame_count) throw std::logic_error("frame out of range on page " + std::to_string(p));
            auto [it, fresh] = seen.emplace(*e.frame, p);
            if (!fresh)
                throw std::logic_error("frame " + std::to_string(*e.frame) + " mapped by pages " +
                                       std::to_string(it->second) + " and " + std::to_string(p));
        }
    }
    if (resident > frame_count) throw std::logic_error("more resident pages than frames");
    if (resident != resident_) throw std::logic_error("resident counter drift");
    if (refs != total_refs_ || add_calls_ - release_calls_ != refs) throw std::logic_error("ref count conservation broken");
}

FrameRing::FrameRing(std::uint64_t frame_count) : owner_(frame_count) {
    if (frame_count == 0) throw std::invalid_argument("frame ring needs at least one frame");
}

FrameId FrameRing::next() { return head_++ % owner_.size(); }

FrameGrant acquire_frame(FrameRing& ring, PageTable& pt, SimTime now,
                         const std::function<std::optional<SimTime>(PageId)>& release_at) {
    FrameGrant g;
    g.frame = ring.next();
    auto owner = ring.owner(g.frame);
    if (owner) {
        const auto& e = pt.entry(*owner);
        if (e.ref_count > 0) {
            std::optional<SimTime> t = release_at ? release_at(*owner) : std::nullopt;
            if (!t)
                throw StallError("frame " + std::to_string(g.frame) + " blocked: owner page " + std::to_string(*owner) +
                                 " holds " + std::to_string(e.ref_count) + " references that never drain");
            g.wait = *t - now;
            while (pt.entry(*owner).ref_count > 0) pt.release_ref(*owner);
        }
        pt.evict(*owner);
        g.evicted = owner;
    }
    ring.set_owner(g.frame, std::nullopt);
    return g;
}

double oversubscription_level(std::uint64_t workload_bytes, std::uint64_t gpu_bytes) {
    if (gpu_bytes == 0) throw std::invalid_argument("gpu_bytes must be positive");
    return static_cast<double>(workload_bytes) / static_cast<double>(gpu_bytes) - 1.0;
}

std::uint64_t gpu_bytes_for_level(std::uint64_t workload_bytes, double level) {
    if (!(level > -1.0) || !std::isfinite(level)) throw std::invalid_argument("oversubscription level must exceed -1");
    return static_cast<std::uint64_t>(std::floor(static_cast<double>(workload_bytes) / (1.0 + level)));
}

}  // namespace gpuvm
