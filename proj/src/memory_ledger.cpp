#include "segkv/memory_ledger.hpp"

#include <algorithm>
#include <stdexcept>

namespace segkv {

const char* reuse_policy_name(ReusePolicy p) {
    switch (p) {
        case ReusePolicy::NeverReuse: return "never-reuse";
        case ReusePolicy::ExactFit: return "exact-fit";
        case ReusePolicy::FirstFitGe: return "first-fit-ge";
    }
    return "?";
}

ReusePolicy parse_reuse_policy(const std::string& name) {
    if (name == "never-reuse") return ReusePolicy::NeverReuse;
    if (name == "exact-fit") return ReusePolicy::ExactFit;
    if (name == "first-fit-ge") return ReusePolicy::FirstFitGe;
    throw std::invalid_argument("unknown reuse policy '" + name + "'");
}

std::optional<std::size_t> MemoryLedger::find_reusable(std::uint64_t bytes) const {
    if (policy_ == ReusePolicy::NeverReuse) return std::nullopt;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const auto& b = blocks_[i];
        if (b.live) continue;
        if (policy_ == ReusePolicy::ExactFit ? b.size == bytes : b.size >= bytes) return i;
    }
    return std::nullopt;
}

MemoryLedger::BlockId MemoryLedger::allocate(std::uint64_t bytes) {
    if (const auto idx = find_reusable(bytes)) {
        auto& b = blocks_[*idx];
        b.live = true;
        b.requested = bytes;
        active_ += bytes;
        events_.push_back({EventKind::Reuse, bytes});
        return b.id;
    }
    const BlockId id = next_id_++;
    blocks_.push_back({id, bytes, bytes, true});
    active_ += bytes;
    reserved_ += bytes;
    peak_reserved_ = std::max(peak_reserved_, reserved_);
    events_.push_back({EventKind::Alloc, bytes});
    return id;
}

void MemoryLedger::free(BlockId block) {
    const auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.id == block; });
    if (it == blocks_.end() || !it->live) {
        throw std::logic_error("free of unknown or already-freed block " + std::to_string(block));
    }
    it->live = false;
    active_ -= it->requested;
    events_.push_back({EventKind::Free, it->requested});
}

std::uint64_t MemoryLedger::empty_cache() {
    std::uint64_t released = 0;
    std::erase_if(blocks_, [&](const Block& b) {
        if (b.live) return false;
        released += b.size;
        events_.push_back({EventKind::Release, b.size});
        return true;
    });
    reserved_ -= released;
    return released;
}

std::vector<std::uint64_t> MemoryLedger::free_pool() const {
    std::vector<std::uint64_t> out;
    for (const auto& b : blocks_) {
        if (!b.live) out.push_back(b.size);
    }
    return out;
}

std::size_t MemoryLedger::count(EventKind kind) const {
    return static_cast<std::size_t>(
        std::count_if(events_.begin(), events_.end(), [&](const Event& e) { return e.kind == kind; }));
}

}  // namespace segkv
