#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gpuvm/engine.hpp"

namespace gpuvm {

using PageId = std::uint64_t;
using FrameId = std::uint64_t;

enum class PageState : std::uint8_t { Unmapped, Faulting, Resident };

const char* to_string(PageState s);

struct PageTableEntry {
    PageState state = PageState::Unmapped;
    std::optional<FrameId> frame;
    std::uint32_t ref_count = 0;
    bool dirty = false;
};

struct Translation {
    PageState state = PageState::Unmapped;
    FrameId frame = 0;  // meaningful only when Resident
};

struct PageTransition {
    PageId page;
    PageState from;
    PageState to;
    std::uint32_t ref_count;
};

class PageTable {
public:
    PageTable(std::uint64_t total_pages, std::uint64_t page_size);

    std::uint64_t page_size() const { return page_size_; }
    std::uint64_t size() const { return entries_.size(); }
    const PageTableEntry& entry(PageId page) const;

    Translation translate(PageId page) const;

    std::uint32_t add_ref(PageId page);
    std::uint32_t release_ref(PageId page);

    // Unmapped -> Faulting; the caller becomes the episode leader.
    void begin_fault(PageId page);
    void install_mapping(PageId page, FrameId frame);
    void complete_fault(PageId page);
    // Resident -> Unmapped; returns whether the page was dirty.
    bool evict(PageId page);
    void mark_dirty(PageId page);

    std::uint64_t resident_count() const { return resident_; }
    std::uint64_t total_refs() const { return total_refs_; }
    std::uint64_t add_ref_calls() const { return add_calls_; }
    std::uint64_t release_ref_calls() const { return release_calls_; }

    // Hook for property suites; sees every state change.
    void set_transition_observer(std::function<void(const PageTransition&)> f) { observer_ = std::move(f); }

    // Throws std::logic_error naming the first broken invariant.
    void check_invariants(std::uint64_t frame_count) const;

private:
    PageTableEntry& at(PageId page);
    void note(PageId page, PageState from, PageState to);

    std::vector<PageTableEntry> entries_;
    std::uint64_t page_size_;
    std::uint64_t resident_ = 0;
    std::uint64_t total_refs_ = 0;
    std::uint64_t add_calls_ = 0;
    std::uint64_t release_calls_ = 0;
    std::function<void(const PageTransition&)> observer_;
};

struct FrameGrant {
    FrameId frame = 0;
    std::optional<PageId> evicted;
    Duration wait{};
};

class FrameRing {
public:
    explicit FrameRing(std::uint64_t frame_count);

    std::uint64_t frame_count() const { return owner_.size(); }
    std::uint64_t head_cursor() const { return head_; }
    std::optional<PageId> owner(FrameId f) const { return owner_.at(f); }

    // Advances the cursor and returns the next frame in FIFO order.
    FrameId next();
    void set_owner(FrameId f, std::optional<PageId> page) { owner_.at(f) = page; }

    const std::vector<std::optional<PageId>>& owners() const { return owner_; }

private:
    std::vector<std::optional<PageId>> owner_;
    std::uint64_t head_ = 0;
};

// Synchronous form used outside the event engine: `release_at(page)` reports when an
// owner's references drain (nullopt if never). Evicts the owner and binds the frame to
// nothing; the caller installs the new page.
FrameGrant acquire_frame(FrameRing& ring, PageTable& pt, SimTime now,
                         const std::function<std::optional<SimTime>(PageId)>& release_at = {});

double oversubscription_level(std::uint64_t workload_bytes, std::uint64_t gpu_bytes);
// Inverse of the level formula, rounded down to whole bytes.
std::uint64_t gpu_bytes_for_level(std::uint64_t workload_bytes, double level);

bool is_power_of_two(std::uint64_t v);

}  // namespace gpuvm
