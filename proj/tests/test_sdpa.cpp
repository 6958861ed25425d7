#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "segkv/sdpa.hpp"

using namespace segkv;

namespace {

struct DecodeCase {
    std::int64_t bs, bw, h, d, np, nr;
    Tensor q, pk, pv, rk, rv;
    BeamIndices idx;

    DecodeCase(std::int64_t bs_, std::int64_t bw_, std::int64_t h_, std::int64_t d_, std::int64_t np_,
               std::int64_t nr_, std::uint64_t seed)
        : bs(bs_), bw(bw_), h(h_), d(d_), np(np_), nr(nr_),
          q(Tensor::random({1, bs * bw, h, d}, {seed, 1.0f}, Layout::SequenceFirst)),
          pk(Tensor::random({bs, np, h, d}, {seed + 1, 1.0f}, Layout::BatchFirst)),
          pv(Tensor::random({bs, np, h, d}, {seed + 2, 1.0f}, Layout::BatchFirst)),
          rk(Tensor::random({std::max<std::int64_t>(nr, 1), bs * bw, h, d}, {seed + 3, 1.0f}, Layout::SequenceFirst)),
          rv(Tensor::random({std::max<std::int64_t>(nr, 1), bs * bw, h, d}, {seed + 4, 1.0f}, Layout::SequenceFirst)),
          idx(bs, bw, nr) {
        std::mt19937_64 rng(seed + 5);
        for (std::int64_t b = 0; b < bs; ++b)
            for (std::int64_t w = 0; w < bw; ++w)
                for (std::int64_t t = 0; t < nr; ++t)
                    idx.at(b, w, t) = std::uniform_int_distribution<std::int64_t>(0, bw - 1)(rng);
    }

    SdpaDecodeInputs inputs() const {
        return {q, pk, pv, rk, rv, nr, idx, 1.0f / std::sqrt(static_cast<float>(d))};
    }
};

// Gathers every beam's key/value history into an explicit BatchFirst
// sequence, repeats the query at every position, and runs the non-causal
// prefill oracle: each output position is then the decode result.
Tensor gathered_prefill_oracle(const DecodeCase& c) {
    const auto rows = c.bs * c.bw, n = c.np + c.nr;
    Tensor k = Tensor::zeros({rows, n, c.h, c.d}, Layout::BatchFirst);
    Tensor v = k, q = k;
    for (std::int64_t b = 0; b < c.bs; ++b)
        for (std::int64_t w = 0; w < c.bw; ++w) {
            const auto r = b * c.bw + w;
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t hh = 0; hh < c.h; ++hh)
                    for (std::int64_t e = 0; e < c.d; ++e) {
                        q.at(r, j, hh, e) = c.q.at(0, r, hh, e);
                        if (j < c.np) {
                            k.at(r, j, hh, e) = c.pk.at(b, j, hh, e);
                            v.at(r, j, hh, e) = c.pv.at(b, j, hh, e);
                        } else {
                            const auto t = j - c.np;
                            const auto src = b * c.bw + c.idx.at(b, w, t);
                            k.at(r, j, hh, e) = c.rk.at(t, src, hh, e);
                            v.at(r, j, hh, e) = c.rv.at(t, src, hh, e);
                        }
                    }
        }
    const auto full = sdpa_prefill_oracle(q, k, v, /*causal=*/false);
    Tensor out = Tensor::zeros({1, rows, c.h, c.d}, Layout::SequenceFirst);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t hh = 0; hh < c.h; ++hh)
            for (std::int64_t e = 0; e < c.d; ++e) out.at(0, r, hh, e) = full.at(r, n - 1, hh, e);
    return out;
}

}  // namespace

TEST_CASE("online softmax state matches a two-pass softmax") {
    const std::vector<float> scores{0.3f, -1.0f, 2.5f, 0.0f};
    const std::vector<std::vector<float>> values{{1, 0}, {0, 1}, {2, 2}, {-1, 3}};
    OnlineSoftmaxState st(2);
    for (std::size_t i = 0; i < scores.size(); ++i) st.update(scores[i], values[i].data());
    float out[2];
    st.write(out);
    double den = 0.0, num0 = 0.0, num1 = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double e = std::exp(double(scores[i]) - 2.5);
        den += e;
        num0 += e * values[i][0];
        num1 += e * values[i][1];
    }
    CHECK(out[0] == doctest::Approx(num0 / den).epsilon(1e-6));
    CHECK(out[1] == doctest::Approx(num1 / den).epsilon(1e-6));
    CHECK(st.max_score() == 2.5f);
}

TEST_CASE("prefill with one key returns the value") {
    const auto q = Tensor::random({2, 1, 3, 4}, {1, 1.0f}, Layout::BatchFirst);
    const auto k = Tensor::random({2, 1, 3, 4}, {2, 1.0f}, Layout::BatchFirst);
    const auto v = Tensor::random({2, 1, 3, 4}, {3, 1.0f}, Layout::BatchFirst);
    CHECK(sdpa_prefill(q, k, v) == v);
}

TEST_CASE("causal prefill: position 0 sees only key 0") {
    const auto q = Tensor::random({1, 2, 1, 4}, {4, 1.0f}, Layout::BatchFirst);
    const auto k = Tensor::random({1, 2, 1, 4}, {5, 1.0f}, Layout::BatchFirst);
    const auto v = Tensor::random({1, 2, 1, 4}, {6, 1.0f}, Layout::BatchFirst);
    const auto out = sdpa_prefill(q, k, v, true);
    for (std::int64_t e = 0; e < 4; ++e) CHECK(out.at(0, 0, 0, e) == v.at(0, 0, 0, e));
    const auto full = sdpa_prefill(q, k, v, false);
    CHECK_FALSE(full.at(0, 0, 0, 0) == v.at(0, 0, 0, 0));
}

TEST_CASE("prefill matches the materialized oracle, parallel and serial") {
    const auto q = Tensor::random({2, 16, 4, 8}, {7, 1.0f}, Layout::BatchFirst);
    const auto k = Tensor::random({2, 16, 4, 8}, {8, 1.0f}, Layout::BatchFirst);
    const auto v = Tensor::random({2, 16, 4, 8}, {9, 1.0f}, Layout::BatchFirst);
    for (bool causal : {true, false}) {
        const auto oracle = sdpa_prefill_oracle(q, k, v, causal);
        const auto par = sdpa_prefill(q, k, v, causal, Exec::Parallel);
        CHECK(max_abs_diff(par, oracle) <= 1e-5f);
        CHECK(sdpa_prefill(q, k, v, causal, Exec::Serial) == par);
    }
}

TEST_CASE("prefill rejects bad shapes and tags") {
    const auto a = Tensor::zeros({1, 2, 1, 4}, Layout::BatchFirst);
    CHECK_THROWS_AS(sdpa_prefill(Tensor::zeros({1, 2, 1, 4}, Layout::SequenceFirst), a, a), LayoutError);
    CHECK_THROWS_AS(sdpa_prefill(a, Tensor::zeros({1, 3, 1, 4}, Layout::BatchFirst), a), ShapeError);
}

TEST_CASE("head-major attention matches the prefill oracle") {
    const auto q = Tensor::random({2, 5, 3, 8}, {10, 1.0f}, Layout::BatchFirst);
    const auto k = Tensor::random({2, 5, 3, 8}, {11, 1.0f}, Layout::BatchFirst);
    const auto v = Tensor::random({2, 5, 3, 8}, {12, 1.0f}, Layout::BatchFirst);
    const auto ctx = transpose_from_head_major(attention_head_major(
        transpose_to_head_major(q), transpose_to_head_major(k), transpose_to_head_major(v), true));
    CHECK(max_abs_diff(ctx, sdpa_prefill_oracle(q, k, v, true)) <= 1e-5f);
    CHECK(transpose_from_head_major(transpose_to_head_major(q)) == q);
}

TEST_CASE("decode with a single prompt key returns that value") {
    DecodeCase c(1, 1, 2, 8, 1, 0, 20);
    const auto out = sdpa_decode_fused(c.inputs());
    for (std::int64_t hh = 0; hh < 2; ++hh)
        for (std::int64_t e = 0; e < 8; ++e) CHECK(out.at(0, 0, hh, e) == c.pv.at(0, 0, hh, e));
}

TEST_CASE("decode reads the response slot named by the gather index") {
    // BW = 4; beam w = 1 at response step 0 points at slot 3.
    DecodeCase c(1, 4, 1, 4, 2, 2, 21);
    for (std::int64_t w = 0; w < 4; ++w)
        for (std::int64_t t = 0; t < 2; ++t) c.idx.at(0, w, t) = w;
    c.idx.at(0, 1, 0) = 3;
    // Sentinel: slot 3's key aligns with every query at huge magnitude, its
    // value is a recognisable constant.
    for (std::int64_t e = 0; e < 4; ++e) {
        c.rk.at(0, 3, 0, e) = 1000.0f * c.q.at(0, 1, 0, e);
        c.rv.at(0, 3, 0, e) = 42.0f;
    }
    const auto out = sdpa_decode_fused(c.inputs());
    for (std::int64_t e = 0; e < 4; ++e) CHECK(out.at(0, 1, 0, e) == doctest::Approx(42.0f));
    // Beam 0 follows its own slot and is unaffected by the sentinel.
    CHECK(out.at(0, 0, 0, 0) != doctest::Approx(42.0f));
}

TEST_CASE("fused decode matches both oracles on a fixed case") {
    DecodeCase c(2, 4, 2, 16, 8, 5, 22);
    const auto fused = sdpa_decode_fused(c.inputs());
    CHECK(max_abs_diff(fused, sdpa_decode_oracle(c.inputs())) <= 1e-5f);
    CHECK(max_abs_diff(fused, gathered_prefill_oracle(c)) <= 1e-5f);
    CHECK(sdpa_decode_fused(c.inputs(), Exec::Serial) == fused);
}

TEST_CASE("fused decode property over random cases") {
    std::mt19937_64 rng(23);
    auto u = [&](std::int64_t lo, std::int64_t hi) { return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng); };
    constexpr std::int64_t dims[] = {16, 32, 64};
    for (int i = 0; i < 200; ++i) {
        const auto np = u(0, 96);
        DecodeCase c(u(1, 4), u(1, 4), u(1, 8), dims[u(0, 2)], np, u(np == 0 ? 1 : 0, 64), rng());
        const auto fused = sdpa_decode_fused(c.inputs());
        CHECK(max_abs_diff(fused, sdpa_decode_oracle(c.inputs())) <= 1e-5f);
    }
}

TEST_CASE("identity indices with BW = 1 equal prefill over the concatenation") {
    DecodeCase c(2, 1, 3, 8, 6, 4, 24);
    for (std::int64_t b = 0; b < 2; ++b)
        for (std::int64_t t = 0; t < 4; ++t) c.idx.at(b, 0, t) = 0;
    CHECK(max_abs_diff(sdpa_decode_fused(c.inputs()), gathered_prefill_oracle(c)) <= 1e-5f);
}

TEST_CASE("zero values give zero output") {
    DecodeCase c(1, 2, 2, 16, 3, 3, 25);
    c.pv = Tensor::zeros(c.pv.shape(), Layout::BatchFirst);
    c.rv = Tensor::zeros(c.rv.shape(), Layout::SequenceFirst);
    const auto fused = sdpa_decode_fused(c.inputs());
    const auto oracle = sdpa_decode_oracle(c.inputs());
    for (float v : fused.data()) CHECK(v == 0.0f);
    for (float v : oracle.data()) CHECK(v == 0.0f);
}

TEST_CASE("decode errors") {
    DecodeCase c(1, 2, 1, 4, 2, 2, 26);
    c.idx.at(0, 1, 1) = 2;
    CHECK_THROWS_AS(sdpa_decode_fused(c.inputs()), std::out_of_range);
    CHECK_THROWS_AS(sdpa_decode_oracle(c.inputs()), std::out_of_range);
    c.idx.at(0, 1, 1) = -1;
    CHECK_THROWS_AS(sdpa_decode_fused(c.inputs()), std::out_of_range);

    DecodeCase empty(1, 1, 1, 4, 0, 0, 27);
    CHECK_THROWS_AS(sdpa_decode_fused(empty.inputs()), std::invalid_argument);
    CHECK_THROWS_AS(sdpa_decode_oracle(empty.inputs()), std::invalid_argument);

    DecodeCase short_idx(1, 2, 1, 4, 2, 3, 28);
    short_idx.idx = BeamIndices(1, 2, 2);
    CHECK_THROWS_AS(sdpa_decode_fused(short_idx.inputs()), ShapeError);
}
