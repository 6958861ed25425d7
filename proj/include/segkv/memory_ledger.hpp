#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace segkv {

enum class ReusePolicy { NeverReuse, ExactFit, FirstFitGe };

const char* reuse_policy_name(ReusePolicy p);
ReusePolicy parse_reuse_policy(const std::string& name);

// Size-only model of a caching device allocator.
//
//   allocate    -> served from the free pool when the policy finds a block,
//                  otherwise new reserved memory
//   free        -> the block leaves the active set but stays reserved in the
//                  pool (reusable according to the policy)
//   empty_cache -> pooled blocks are handed back to the device; reserved
//                  memory shrinks by their size
//
// fragmentation = reserved - active.
class MemoryLedger {
public:
    enum class EventKind { Alloc, Reuse, Free, Release };
    struct Event {
        EventKind kind;
        std::uint64_t bytes;
    };
    using BlockId = std::int64_t;

    explicit MemoryLedger(ReusePolicy policy = ReusePolicy::FirstFitGe) : policy_(policy) {}

    BlockId allocate(std::uint64_t bytes);
    void free(BlockId block);
    // Release every pooled block; returns bytes released.
    std::uint64_t empty_cache();

    ReusePolicy policy() const { return policy_; }
    std::uint64_t active_bytes() const { return active_; }
    std::uint64_t reserved_bytes() const { return reserved_; }
    std::uint64_t peak_reserved() const { return peak_reserved_; }
    std::uint64_t fragmentation() const { return reserved_ - active_; }
    const std::vector<Event>& events() const { return events_; }
    std::vector<std::uint64_t> free_pool() const;
    std::size_t count(EventKind kind) const;

private:
    struct Block {
        BlockId id;
        std::uint64_t size;       // reserved size of the block
        std::uint64_t requested;  // bytes the live owner asked for
        bool live;
    };

    std::optional<std::size_t> find_reusable(std::uint64_t bytes) const;

    ReusePolicy policy_;
    std::vector<Block> blocks_;
    std::vector<Event> events_;
    std::uint64_t active_ = 0;
    std::uint64_t reserved_ = 0;
    std::uint64_t peak_reserved_ = 0;
    BlockId next_id_ = 0;
};

}  // namespace segkv
