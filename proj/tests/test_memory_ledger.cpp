#include <stdexcept>

#include "doctest.h"
#include "segkv/memory_ledger.hpp"

using namespace segkv;
using EK = MemoryLedger::EventKind;

TEST_CASE("free keeps memory reserved until empty_cache") {
    MemoryLedger l(ReusePolicy::FirstFitGe);
    const auto a = l.allocate(100);
    CHECK(l.active_bytes() == 100);
    CHECK(l.reserved_bytes() == 100);
    l.free(a);
    CHECK(l.active_bytes() == 0);
    CHECK(l.reserved_bytes() == 100);
    CHECK(l.fragmentation() == 100);
    CHECK(l.free_pool() == std::vector<std::uint64_t>{100});
    CHECK(l.empty_cache() == 100);
    CHECK(l.reserved_bytes() == 0);
    CHECK(l.peak_reserved() == 100);
    CHECK(l.count(EK::Release) == 1);
}

TEST_CASE("reuse policies") {
    SUBCASE("first-fit-ge reuses any block large enough") {
        MemoryLedger l(ReusePolicy::FirstFitGe);
        l.free(l.allocate(100));
        l.allocate(60);
        CHECK(l.count(EK::Reuse) == 1);
        CHECK(l.reserved_bytes() == 100);
        CHECK(l.active_bytes() == 60);
        CHECK(l.fragmentation() == 40);
    }
    SUBCASE("exact-fit needs the same size") {
        MemoryLedger l(ReusePolicy::ExactFit);
        l.free(l.allocate(100));
        l.allocate(60);
        CHECK(l.count(EK::Reuse) == 0);
        l.allocate(100);
        CHECK(l.count(EK::Reuse) == 1);
        CHECK(l.reserved_bytes() == 160);
    }
    SUBCASE("never-reuse always reserves") {
        MemoryLedger l(ReusePolicy::NeverReuse);
        l.free(l.allocate(100));
        l.allocate(10);
        CHECK(l.reserved_bytes() == 110);
    }
    SUBCASE("growing requests never fit a freed smaller block") {
        MemoryLedger l(ReusePolicy::FirstFitGe);
        auto prev = l.allocate(10);
        for (std::uint64_t s = 11; s <= 15; ++s) {
            const auto b = l.allocate(s);
            l.free(prev);
            prev = b;
        }
        CHECK(l.reserved_bytes() == 10 + 11 + 12 + 13 + 14 + 15);
    }
}

TEST_CASE("ledger errors and names") {
    MemoryLedger l;
    const auto a = l.allocate(1);
    l.free(a);
    CHECK_THROWS_AS(l.free(a), std::logic_error);
    CHECK_THROWS_AS(l.free(99), std::logic_error);
    for (auto p : {ReusePolicy::NeverReuse, ReusePolicy::ExactFit, ReusePolicy::FirstFitGe})
        CHECK(parse_reuse_policy(reuse_policy_name(p)) == p);
    CHECK_THROWS_AS(parse_reuse_policy("best-fit"), std::invalid_argument);
}
