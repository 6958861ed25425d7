#pragma once

#include <cstdint>

namespace segkv {

// Instrumentation for the tensor-level operations the optimized path is
// supposed to eliminate.
struct OpCounters {
    std::int64_t layout_conversions = 0;  // BatchFirst <-> SequenceFirst
    std::int64_t transposes = 0;          // [B, N, H, D] <-> [B, H, N, D]
    std::int64_t cats = 0;
    std::int64_t index_selects = 0;

    OpCounters& operator+=(const OpCounters& o) {
        layout_conversions += o.layout_conversions;
        transposes += o.transposes;
        cats += o.cats;
        index_selects += o.index_selects;
        return *this;
    }
    bool operator==(const OpCounters&) const = default;
};

}  // namespace segkv
