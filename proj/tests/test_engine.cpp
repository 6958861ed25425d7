#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "segkv/engine.hpp"
#include "segkv/reports.hpp"

using namespace segkv;

namespace {

ModelConfig toy() { return ModelConfig{}; }

GenerationRequest request(std::int64_t bs, std::int64_t np, std::int64_t nr, std::int64_t bw, std::uint64_t seed,
                          std::int64_t vocab = 64) {
    GenerationRequest r;
    r.prompt = reports::random_prompt(bs, np, vocab, seed);
    r.n_response = nr;
    r.bw = bw;
    r.mode = bw > 1 ? DecodeMode::Beam : DecodeMode::Greedy;
    r.seed = seed;
    return r;
}

}  // namespace

TEST_CASE("greedy decoding agrees across engines") {
    const auto w = make_toy_weights(toy(), 7);
    const auto req = request(2, 8, 12, 1, 11);
    const auto opt = generate(w, req);
    const auto ref = reference_generate(w, req);
    CHECK(opt.tokens == ref.tokens);
    REQUIRE(opt.tokens.size() == 2);
    CHECK(opt.tokens[0].size() == 1);
    CHECK(opt.tokens[0][0].size() == 12);
    CHECK(max_abs_diff(opt.final_hidden, ref.final_hidden) < 1e-4f);
}

TEST_CASE("beam decoding agrees across engines") {
    const auto w = make_toy_weights(toy(), 7);
    const auto req = request(2, 32, 40, 4, 13);
    const auto opt = generate(w, req);
    const auto ref = reference_generate(w, req);
    CHECK(opt.tokens == ref.tokens);
    REQUIRE(opt.tokens.size() == 2);
    for (const auto& beams : opt.tokens) {
        CHECK(beams.size() == 4);
        for (const auto& seq : beams) CHECK(seq.size() == 40);
    }
    CHECK(max_abs_diff(opt.final_hidden, ref.final_hidden) < 1e-4f);
}

TEST_CASE("zero response length yields empty sequences") {
    const auto w = make_toy_weights(toy(), 1);
    const auto opt = generate(w, request(1, 4, 0, 1, 2));
    REQUIRE(opt.tokens.size() == 1);
    CHECK(opt.tokens[0][0].empty());
    CHECK(opt.step_counters.empty());
}

TEST_CASE("prefill logits agree across engines") {
    const auto w = make_toy_weights(toy(), 3);
    const auto prompt = reports::random_prompt(2, 10, 64, 4);
    OptimizedSession opt(w, 2, 3);
    ReferenceSession ref(w, 2, 3);
    const auto a = opt.prefill(prompt);  // [BS, V]
    const auto b = ref.prefill(prompt);  // [BS*BW, V]
    REQUIRE(a.shape() == Shape{2, 64});
    REQUIRE(b.shape() == Shape{6, 64});
    for (std::int64_t row = 0; row < 6; ++row)
        for (std::int64_t v = 0; v < 64; ++v) CHECK(std::abs(a[(row / 3) * 64 + v] - b[row * 64 + v]) < 1e-4f);
}

TEST_CASE("cache footprint follows the closed forms step by step") {
    const auto cfg = toy();
    const auto w = make_toy_weights(cfg, 5);
    const std::int64_t bs = 2, bw = 4, np = 9, nr = 35;
    const auto req = request(bs, np, nr, bw, 6);
    const auto opt = generate(w, req);
    const auto ref = reference_generate(w, req);
    CHECK(opt.prompt_cache_bytes == static_cast<std::uint64_t>(bs * np) * cache_token_bytes(cfg));
    CHECK(ref.prompt_cache_bytes == static_cast<std::uint64_t>(bs * bw * np) * cache_token_bytes(cfg));
    REQUIRE(opt.cache_bytes.size() == static_cast<std::size_t>(nr));
    REQUIRE(ref.cache_bytes.size() == static_cast<std::size_t>(nr));
    for (std::int64_t s = 0; s < nr; ++s) {
        const CacheShapeParams p{bs, bw, np, s};
        CHECK(opt.cache_bytes[static_cast<std::size_t>(s)] == segment_cache_bytes(cfg, p));
        CHECK(ref.cache_bytes[static_cast<std::size_t>(s)] == standard_cache_bytes(cfg, p));
    }
    CHECK(opt.response_capacity.front() == 16);
    CHECK(opt.response_capacity.back() == 48);
}

TEST_CASE("buffer growth does not change the output") {
    const auto w = make_toy_weights(toy(), 8);
    const auto req = request(1, 6, 36, 4, 9);
    const auto grow = generate(w, req);
    EngineOptions big;
    big.initial_response_capacity = 48;
    const auto fixed = generate(w, req, big);
    CHECK(grow.tokens == fixed.tokens);
    CHECK(max_abs_diff(grow.final_hidden, fixed.final_hidden) == 0.0f);
    EngineOptions odd;
    odd.initial_response_capacity = 32;
    CHECK(generate(w, req, odd).tokens == grow.tokens);
}

TEST_CASE("decode steps cost two layout conversions independent of depth") {
    for (std::int64_t layers : {1, 2, 5}) {
        auto cfg = toy();
        cfg.layers = layers;
        const auto w = make_toy_weights(cfg, 2);
        const auto r = generate(w, request(2, 5, 7, 4, 3));
        REQUIRE(r.step_counters.size() == 6);
        for (const auto& c : r.step_counters) {
            CHECK(c.layout_conversions == 2);
            CHECK(c.cats == 0);
            CHECK(c.index_selects == 0);
            CHECK(c.transposes == 0);
        }
        const auto ref = reference_generate(w, request(2, 5, 7, 4, 3));
        for (const auto& c : ref.step_counters) {
            CHECK(c.cats == 2 * layers);
            CHECK(c.index_selects == 2 * layers);
            CHECK(c.transposes == 4 * layers);
        }
    }
}

TEST_CASE("single layer, single prompt token by hand") {
    auto cfg = toy();
    cfg.layers = 1;
    const auto w = make_toy_weights(cfg, 21);
    const auto& lw = w.layers[0];
    const std::int64_t tok = 17, d = cfg.d_model();
    std::vector<float> e(w.embedding.ptr() + tok * d, w.embedding.ptr() + (tok + 1) * d);
    const Tensor x({1, d}, e);
    // One key: attention returns the value vector unchanged.
    const auto qkv = fused_qkv(rmsnorm(x, lw.rmsnorm_1, cfg.norm_eps), lw.w_qkv, cfg.heads);
    const Tensor y = add(x, linear(qkv.v.reshaped({1, d}), lw.w_o));
    const Tensor y2 = add(y, gated_mlp(rmsnorm(y, lw.rmsnorm_2, cfg.norm_eps), lw.w_gate, lw.w_up, lw.w_down));
    const Tensor expected = linear(rmsnorm(y2, w.final_norm, cfg.norm_eps), w.lm_head);

    OptimizedSession opt(w, 1, 1);
    ReferenceSession ref(w, 1, 1);
    CHECK(max_abs_diff(opt.prefill({{tok}}), expected) < 1e-5f);
    CHECK(max_abs_diff(ref.prefill({{tok}}), expected) < 1e-5f);

    GenerationRequest req;
    req.prompt = {{tok}};
    req.n_response = 1;
    const auto r = generate(w, req);
    const auto argmax = std::max_element(expected.data().begin(), expected.data().end()) - expected.data().begin();
    CHECK(r.tokens[0][0] == std::vector<std::int64_t>{argmax});
}

TEST_CASE("serial and parallel kernels give identical runs") {
    const auto w = make_toy_weights(toy(), 12);
    const auto req = request(2, 12, 10, 4, 14);
    EngineOptions serial;
    serial.exec = Exec::Serial;
    const auto a = generate(w, req);
    const auto b = generate(w, req, serial);
    CHECK(a.tokens == b.tokens);
    CHECK(max_abs_diff(a.final_hidden, b.final_hidden) < 1e-6f);
}

TEST_CASE("request validation") {
    const auto cfg = toy();
    const auto w = make_toy_weights(cfg, 1);
    auto bad_token = request(1, 4, 2, 1, 1);
    bad_token.prompt[0][2] = 64;
    CHECK_THROWS_AS(generate(w, bad_token), std::out_of_range);
    auto too_long = request(1, 4, cfg.max_pos, 1, 1);
    CHECK_THROWS_AS(generate(w, too_long), std::invalid_argument);
    auto greedy_wide = request(1, 4, 2, 1, 1);
    greedy_wide.bw = 2;
    CHECK_THROWS_AS(reference_generate(w, greedy_wide), std::invalid_argument);
    auto ragged = request(2, 4, 2, 1, 1);
    ragged.prompt[1].pop_back();
    CHECK_THROWS_AS(generate(w, ragged), std::invalid_argument);
    GenerationRequest empty;
    CHECK_THROWS_AS(generate(w, empty), std::invalid_argument);
}

TEST_CASE("decode_step rejects short gather indices") {
    const auto w = make_toy_weights(toy(), 1);
    OptimizedSession s(w, 1, 2);
    s.prefill({{1, 2, 3}});
    const std::vector<std::int64_t> tokens{4, 5};
    CHECK_THROWS_AS(s.decode_step(tokens, 3, BeamIndices::identity(1, 2, 0)), ShapeError);
    CHECK_THROWS_AS(s.decode_step(std::vector<std::int64_t>{4}, 3, BeamIndices::identity(1, 2, 1)), ShapeError);
}

TEST_CASE("weights survive a save/load round trip") {
    auto cfg = toy();
    cfg.rope_style = RopeStyle::Interleaved;
    const auto w = make_toy_weights(cfg, 99);
    const auto path = (std::filesystem::temp_directory_path() / "segkv_weights_roundtrip.bin").string();
    save_weights(path, w);
    const auto back = load_weights(path);
    std::filesystem::remove(path);
    CHECK(back.seed == 99);
    CHECK(back.config.rope_style == RopeStyle::Interleaved);
    CHECK(back.config.d_model() == cfg.d_model());
    CHECK(back.embedding == w.embedding);
    CHECK(back.lm_head == w.lm_head);
    REQUIRE(back.layers.size() == w.layers.size());
    CHECK(back.layers[1].w_down == w.layers[1].w_down);
    const auto req = request(1, 5, 6, 1, 2);
    CHECK(generate(back, req).tokens == generate(w, req).tokens);
    CHECK_THROWS(load_weights(path));
}

TEST_CASE("different seeds give different weights") {
    CHECK_FALSE(make_toy_weights(toy(), 1).embedding == make_toy_weights(toy(), 2).embedding);
    CHECK(make_toy_weights(toy(), 3).lm_head == make_toy_weights(toy(), 3).lm_head);
}
