#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <tuple>

#include "doctest.h"
#include "segkv/beam_search.hpp"

using namespace segkv;

namespace {

Tensor rows(std::vector<std::vector<float>> r) {
    std::vector<float> flat;
    for (const auto& x : r) flat.insert(flat.end(), x.begin(), x.end());
    return Tensor({static_cast<std::int64_t>(r.size()), static_cast<std::int64_t>(r[0].size())}, std::move(flat));
}

// Forward reconstruction: every slot carries its full ancestry as a list.
std::vector<std::vector<std::vector<std::int64_t>>> forward_paths(const std::vector<BeamTable>& parents,
                                                                  std::int64_t upto) {
    const auto bs = parents[0].size(), bw = parents[0][0].size();
    std::vector<std::vector<std::vector<std::int64_t>>> paths(bs, std::vector<std::vector<std::int64_t>>(bw));
    for (std::size_t b = 0; b < bs; ++b)
        for (std::size_t w = 0; w < bw; ++w) paths[b][w] = {static_cast<std::int64_t>(w)};
    for (std::int64_t t = 1; t < upto; ++t) {
        auto next = paths;
        for (std::size_t b = 0; b < bs; ++b)
            for (std::size_t w = 0; w < bw; ++w) {
                next[b][w] = paths[b][static_cast<std::size_t>(parents[static_cast<std::size_t>(t)][b][w])];
                next[b][w].push_back(static_cast<std::int64_t>(w));
            }
        paths = std::move(next);
    }
    return paths;
}

}  // namespace

TEST_CASE("greedy is argmax with parent 0") {
    BeamSearchState s(2, 1);
    const auto r = beam_step(rows({{0.1f, 0.7f, 0.2f}, {0.5f, -1.0f, 0.4f}}), s);
    CHECK(r.tokens == BeamTable{{1}, {0}});
    CHECK(r.parents == BeamTable{{0}, {0}});
    CHECK(r.selection_margin == doctest::Approx(0.1f));
}

TEST_CASE("two-beam hand example") {
    BeamSearchState s(1, 2);
    s.set_cum_log_probs({0.0f, -0.1f});
    const auto r = beam_step(rows({{-0.1f, -2.0f, -2.0f}, {-0.05f, -2.0f, -2.0f}}), s);
    CHECK(r.parents == BeamTable{{0, 1}});
    CHECK(r.tokens == BeamTable{{0, 0}});
    CHECK(s.cum_log_probs()[0] == doctest::Approx(-0.1f));
    CHECK(s.cum_log_probs()[1] == doctest::Approx(-0.15f));
}

TEST_CASE("brute force over all candidates") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const std::int64_t bw = 3, v = 5;
        BeamSearchState s(1, bw);
        std::vector<float> cum(bw);
        for (auto& c : cum) c = std::normal_distribution<float>(0.0f, 1.0f)(rng);
        s.set_cum_log_probs(cum);
        const auto lp = Tensor::random({bw, v}, {rng(), 1.0f});
        const auto r = beam_step(lp, s);
        std::vector<std::tuple<float, std::int64_t, std::int64_t>> all;
        for (std::int64_t w = 0; w < bw; ++w)
            for (std::int64_t t = 0; t < v; ++t) all.emplace_back(-(cum[w] + lp[w * v + t]), w, t);
        std::sort(all.begin(), all.end());
        for (std::int64_t k = 0; k < bw; ++k) {
            CHECK(r.parents[0][k] == std::get<1>(all[k]));
            CHECK(r.tokens[0][k] == std::get<2>(all[k]));
        }
    }
}

TEST_CASE("ties prefer the smaller parent then token") {
    BeamSearchState s(1, 2);
    const auto r = beam_step(rows({{-1.0f, -1.0f, -5.0f}, {-1.0f, -1.0f, -5.0f}}), s);
    CHECK(r.parents == BeamTable{{0, 0}});
    CHECK(r.tokens == BeamTable{{0, 1}});
    CHECK(r.selection_margin == 0.0f);
}

TEST_CASE("first step expands beam 0 only") {
    auto s = initial_beam_state(2, 4);
    const auto lp = Tensor::random({8, 10}, {4, 1.0f});
    const auto r = beam_step(lp, s);
    for (const auto& row : r.parents)
        for (auto p : row) CHECK(p == 0);
    CHECK(std::isfinite(r.selection_margin));
}

TEST_CASE("finished beams only propose padding") {
    BeamSearchState s(1, 2, /*pad_token=*/9);
    s.set_finished(0, 0);
    s.set_cum_log_probs({-0.5f, -3.0f});
    const auto r = beam_step(rows({{-0.1f, -0.2f}, {-0.1f, -0.2f}}), s);
    CHECK(r.tokens[0][0] == 9);
    CHECK(r.parents[0][0] == 0);
    CHECK(s.finished(0, 0));
    CHECK_FALSE(s.finished(0, 1));
}

TEST_CASE("beam_step errors") {
    BeamSearchState s(1, 4);
    CHECK_THROWS_AS(beam_step(Tensor::zeros({4, 3}), s), std::invalid_argument);
    CHECK_THROWS_AS(beam_step(Tensor::zeros({3, 8}), s), ShapeError);
}

TEST_CASE("hypothesis follows parent links") {
    BeamSearchState s(1, 2);
    beam_step(rows({{-1.0f, -0.1f, -3.0f}, {-9.0f, -9.0f, -9.0f}}), s);  // slots: (0,1) (0,0)
    beam_step(rows({{-5.0f, -5.0f, -5.0f}, {-0.1f, -0.2f, -9.0f}}), s);  // both extend slot 1
    CHECK(s.parents().back() == BeamTable{{1, 1}});
    CHECK(s.hypothesis(0, 0) == std::vector<std::int64_t>{0, 0});
    CHECK(s.hypothesis(0, 1) == std::vector<std::int64_t>{0, 1});
}

TEST_CASE("identity parents give identity indices") {
    const std::vector<BeamTable> parents(5, BeamTable{{0, 1, 2}, {0, 1, 2}});
    CHECK(build_gather_indices(parents, 5) == BeamIndices::identity(2, 3, 5));
}

TEST_CASE("slot 1 at step 1 descending from slot 3 reads slot 3 at step 0") {
    std::vector<BeamTable> parents{BeamTable{{0, 0, 0, 0}}, BeamTable{{0, 3, 2, 1}}};
    const auto idx = build_gather_indices(parents, 2);
    CHECK(idx.at(0, 1, 0) == 3);
    CHECK(idx.at(0, 1, 1) == 1);
    CHECK(idx.at(0, 3, 0) == 1);
}

TEST_CASE("gather indices match forward path reconstruction") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const std::int64_t bs = 2, bw = 4, steps = 6;
        std::vector<BeamTable> parents(steps, BeamTable(bs, std::vector<std::int64_t>(bw)));
        for (auto& table : parents)
            for (auto& row : table)
                for (auto& p : row) p = std::uniform_int_distribution<std::int64_t>(0, bw - 1)(rng);
        for (std::int64_t upto = 1; upto <= steps; ++upto) {
            const auto idx = build_gather_indices(parents, upto);
            const auto paths = forward_paths(parents, upto);
            for (std::int64_t b = 0; b < bs; ++b)
                for (std::int64_t w = 0; w < bw; ++w)
                    for (std::int64_t t = 0; t < upto; ++t)
                        CHECK(idx.at(b, w, t) == paths[static_cast<std::size_t>(b)][static_cast<std::size_t>(w)]
                                                     [static_cast<std::size_t>(t)]);
        }
    }
}

TEST_CASE("gather index errors") {
    std::vector<BeamTable> parents{BeamTable{{0, 0}}, BeamTable{{0, 2}}};
    CHECK_THROWS_AS(build_gather_indices(parents, 2), std::out_of_range);
    CHECK_THROWS_AS(build_gather_indices(parents, 3), std::invalid_argument);
    CHECK_THROWS_AS(build_gather_indices(parents, 0), std::invalid_argument);
}
