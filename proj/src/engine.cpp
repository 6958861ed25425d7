#include "segkv/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace segkv {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Token ids -> [rows, d_model].
Tensor embed(const ToyWeights& w, std::span<const std::int64_t> tokens) {
    const auto d = w.config.d_model();
    std::vector<float> out(tokens.size() * static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto t = tokens[i];
        if (t < 0 || t >= w.config.vocab) {
            throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary of " +
                                    std::to_string(w.config.vocab));
        }
        std::copy_n(w.embedding.ptr() + t * d, d, out.data() + static_cast<std::int64_t>(i) * d);
    }
    return Tensor({static_cast<std::int64_t>(tokens.size()), d}, std::move(out));
}

Tensor lm_head(const ToyWeights& w, const Tensor& hidden_rows, Tensor* normed_out) {
    Tensor normed = rmsnorm(hidden_rows, w.final_norm, w.config.norm_eps);
    Tensor logits = linear(normed, w.lm_head);
    if (normed_out) *normed_out = std::move(normed);
    return logits;
}

// Replicate each row `times` times: [R, C] -> [R*times, C].
Tensor repeat_rows(const Tensor& t, std::int64_t times) {
    const auto rows = t.dim(0), cols = t.dim(1);
    std::vector<float> out(static_cast<std::size_t>(rows * times * cols));
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t k = 0; k < times; ++k)
            std::copy_n(t.ptr() + r * cols, cols, out.data() + (r * times + k) * cols);
    return Tensor({rows * times, cols}, std::move(out));
}

// Rows of the last sequence position of a [B, N, d] row stack.
Tensor last_position_rows(const Tensor& rows_2d, std::int64_t batch, std::int64_t n) {
    const auto d = rows_2d.dim(1);
    std::vector<float> out(static_cast<std::size_t>(batch * d));
    for (std::int64_t b = 0; b < batch; ++b) std::copy_n(rows_2d.ptr() + (b * n + n - 1) * d, d, out.data() + b * d);
    return Tensor({batch, d}, std::move(out));
}

Tensor split_columns(const Tensor& w, std::int64_t begin, std::int64_t count) {
    const auto rows = w.dim(0), cols = w.dim(1);
    std::vector<float> out(static_cast<std::size_t>(rows * count));
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(w.ptr() + r * cols + begin, count, out.data() + r * count);
    return Tensor({rows, count}, std::move(out));
}

OpCounters diff(const OpCounters& after, const OpCounters& before) {
    return {after.layout_conversions - before.layout_conversions, after.transposes - before.transposes,
            after.cats - before.cats, after.index_selects - before.index_selects};
}

}  // namespace

void ToyWeights::validate() const {
    config.validate();
    const auto d = config.d_model();
    if (embedding.shape() != Shape{config.vocab, d}) throw ShapeError("embedding shape " + shape_str(embedding.shape()));
    if (static_cast<std::int64_t>(layers.size()) != config.layers) throw ShapeError("layer count mismatch");
    for (const auto& l : layers) l.validate(config);
    if (final_norm.shape() != Shape{d}) throw ShapeError("final_norm shape " + shape_str(final_norm.shape()));
    if (lm_head.shape() != Shape{d, config.vocab}) throw ShapeError("lm_head shape " + shape_str(lm_head.shape()));
}

ToyWeights make_toy_weights(const ModelConfig& config, std::uint64_t seed, float scale) {
    config.validate();
    ToyWeights w;
    w.config = config;
    w.seed = seed;
    std::uint64_t counter = 0;
    auto draw = [&](Shape shape) { return Tensor::random(std::move(shape), {splitmix64(seed ^ (counter++ * 0x2545F4914F6CDD1Dull)), scale}); };
    const auto d = config.d_model(), f = config.ff_dim;
    w.embedding = draw({config.vocab, d});
    for (std::int64_t l = 0; l < config.layers; ++l) {
        LayerWeights lw;
        lw.rmsnorm_1 = Tensor::filled({d}, 1.0f);
        lw.rmsnorm_2 = Tensor::filled({d}, 1.0f);
        lw.w_qkv = draw({d, 3 * d});
        lw.w_o = draw({d, d});
        lw.w_gate = draw({d, f});
        lw.w_up = draw({d, f});
        lw.w_down = draw({f, d});
        w.layers.push_back(std::move(lw));
    }
    w.final_norm = Tensor::filled({d}, 1.0f);
    w.lm_head = draw({d, config.vocab});
    return w;
}

void GenerationRequest::validate(const ModelConfig& config) const {
    if (prompt.empty()) throw std::invalid_argument("request: empty batch");
    const auto np = n_prompt();
    if (np < 1) throw std::invalid_argument("request: prompt length must be >= 1");
    for (const auto& row : prompt) {
        if (static_cast<std::int64_t>(row.size()) != np) throw std::invalid_argument("request: ragged prompt batch");
        for (auto t : row) {
            if (t < 0 || t >= config.vocab) {
                throw std::out_of_range("request: token id " + std::to_string(t) + " outside vocabulary of " +
                                        std::to_string(config.vocab));
            }
        }
    }
    if (n_response < 0) throw std::invalid_argument("request: negative n_response");
    if (np + n_response > config.max_pos) {
        throw std::invalid_argument("request: prompt + response length " + std::to_string(np + n_response) +
                                    " exceeds max_pos " + std::to_string(config.max_pos));
    }
    if (bw < 1) throw std::invalid_argument("request: beam width must be >= 1");
    if (mode == DecodeMode::Greedy && bw != 1) throw std::invalid_argument("request: greedy mode requires BW = 1");
    if (bw > config.vocab) throw std::invalid_argument("request: beam width exceeds vocabulary");
}

// ---------------------------------------------------------------------------
// Optimized path

OptimizedSession::OptimizedSession(const ToyWeights& weights, std::int64_t bs, std::int64_t bw, EngineOptions options)
    : w_(weights), bs_(bs), bw_(bw), options_(options),
      cache_(weights.config, CacheShapeParams{bs, bw, 0, 0}, options.initial_response_capacity),
      ledger_(options.reuse) {}

Tensor OptimizedSession::prefill(const std::vector<std::vector<std::int64_t>>& prompt) {
    const auto& cfg = w_.config;
    const auto np = static_cast<std::int64_t>(prompt.at(0).size());
    const auto h = cfg.heads, dh = cfg.head_dim, d = cfg.d_model();
    const Shape bf{bs_, np, h, dh};

    std::vector<std::int64_t> flat, positions;
    for (const auto& row : prompt) {
        flat.insert(flat.end(), row.begin(), row.end());
        for (std::int64_t i = 0; i < np; ++i) positions.push_back(i);
    }
    Tensor x = embed(w_, flat);  // [BS*N, d], batch-major rows
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const auto& lw = w_.layers[static_cast<std::size_t>(l)];
        const Tensor normed = rmsnorm(x, lw.rmsnorm_1, cfg.norm_eps);
        auto qkv = fused_qkv(normed, lw.w_qkv, h);
        auto [q, k] = rope(qkv.q, qkv.k, positions, cfg.rope_theta, cfg.rope_style);
        Tensor q4 = std::move(q).reshaped(bf, Layout::BatchFirst);
        Tensor k4 = std::move(k).reshaped(bf, Layout::BatchFirst);
        Tensor v4 = std::move(qkv.v).reshaped(bf, Layout::BatchFirst);
        const Tensor ctx = sdpa_prefill(q4, k4, v4, /*causal=*/true, options_.exec);
        cache_.prompt.store(l, std::move(k4), std::move(v4), &ledger_);
        x = add(x, linear(ctx.reshaped({bs_ * np, d}), lw.w_o));
        x = add(x, gated_mlp(rmsnorm(x, lw.rmsnorm_2, cfg.norm_eps), lw.w_gate, lw.w_up, lw.w_down));
    }
    return lm_head(w_, last_position_rows(x, bs_, np), &last_hidden_);
}

Tensor OptimizedSession::decode_step(std::span<const std::int64_t> tokens, std::int64_t position,
                                     const BeamIndices& indices) {
    const auto& cfg = w_.config;
    const auto rows = bs_ * bw_;
    const auto h = cfg.heads, dh = cfg.head_dim, d = cfg.d_model();
    if (static_cast<std::int64_t>(tokens.size()) != rows) throw ShapeError("decode_step: need one token per beam row");
    const Shape sf{1, rows, h, dh};
    const std::vector<std::int64_t> positions(static_cast<std::size_t>(rows), position);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    // Hidden states enter the stack sequence-first and stay that way.
    Tensor hidden = to_sequence_first(embed(w_, tokens).reshaped({rows, 1, h, dh}, Layout::BatchFirst));
    ++counters_.layout_conversions;
    Tensor x = std::move(hidden).reshaped({rows, d});
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const auto& lw = w_.layers[static_cast<std::size_t>(l)];
        const Tensor normed = rmsnorm(x, lw.rmsnorm_1, cfg.norm_eps);
        auto qkv = fused_qkv(normed, lw.w_qkv, h);
        auto [q, k] = rope(qkv.q, qkv.k, positions, cfg.rope_theta, cfg.rope_style);
        const Tensor q4 = std::move(q).reshaped(sf, Layout::SequenceFirst);
        cache_.append_response_kv(l, std::move(k).reshaped(sf, Layout::SequenceFirst),
                                  std::move(qkv.v).reshaped(sf, Layout::SequenceFirst), &ledger_);
        const auto& resp = cache_.response[static_cast<std::size_t>(l)];
        const SdpaDecodeInputs in{q4,         cache_.prompt.k(l), cache_.prompt.v(l), resp.k(), resp.v(),
                                  resp.length(), indices,            scale};
        const Tensor ctx = sdpa_decode_fused(in, options_.exec);
        x = add(x, linear(ctx.reshaped({rows, d}), lw.w_o));
        x = add(x, gated_mlp(rmsnorm(x, lw.rmsnorm_2, cfg.norm_eps), lw.w_gate, lw.w_up, lw.w_down));
    }
    Tensor out = to_batch_first(std::move(x).reshaped(sf, Layout::SequenceFirst));
    ++counters_.layout_conversions;
    return lm_head(w_, std::move(out).reshaped({rows, d}), &last_hidden_);
}

// ---------------------------------------------------------------------------
// Reference path

ReferenceSession::ReferenceSession(const ToyWeights& weights, std::int64_t bs, std::int64_t bw, ReusePolicy reuse)
    : w_(weights), bs_(bs), bw_(bw), cache_(weights.config.layers, weights.config.dtype_bytes), ledger_(reuse) {
    const auto d = weights.config.d_model();
    for (const auto& lw : weights.layers) {
        w_q_.push_back(split_columns(lw.w_qkv, 0, d));
        w_k_.push_back(split_columns(lw.w_qkv, d, d));
        w_v_.push_back(split_columns(lw.w_qkv, 2 * d, d));
    }
}

Tensor ReferenceSession::layer_forward(std::int64_t layer, Tensor x, std::span<const std::int64_t> positions,
                                       bool is_prefill, std::span<const std::int64_t> beam_reorder) {
    const auto& cfg = w_.config;
    const auto& lw = w_.layers[static_cast<std::size_t>(layer)];
    const auto l = static_cast<std::size_t>(layer);
    const auto rows = x.dim(0), n = x.dim(1), h = cfg.heads, dh = cfg.head_dim, d = cfg.d_model();
    const Shape bf{rows, n, h, dh};

    const Tensor flat = x.reshaped({rows * n, d});
    const Tensor normed = rmsnorm(flat, lw.rmsnorm_1, cfg.norm_eps);
    Tensor q = linear(normed, w_q_[l]).reshaped({rows * n, h, dh});
    Tensor k = linear(normed, w_k_[l]).reshaped({rows * n, h, dh});
    Tensor v = linear(normed, w_v_[l]).reshaped(bf, Layout::BatchFirst);
    auto [q_rot, k_rot] = rope(q, k, positions, cfg.rope_theta, cfg.rope_style);
    Tensor q4 = std::move(q_rot).reshaped(bf, Layout::BatchFirst);
    Tensor k4 = std::move(k_rot).reshaped(bf, Layout::BatchFirst);

    if (is_prefill) {
        cache_.init_layer(layer, std::move(k4), std::move(v), &ledger_);
    } else {
        cache_.step(layer, k4, v, beam_reorder, &ledger_, &counters_);
    }
    const Tensor qt = transpose_to_head_major(q4);
    const Tensor kt = transpose_to_head_major(cache_.k(layer));
    const Tensor vt = transpose_to_head_major(cache_.v(layer));
    counters_.transposes += 3;
    const Tensor ctx_t = attention_head_major(qt, kt, vt, /*causal=*/true);
    const Tensor ctx = transpose_from_head_major(ctx_t);
    ++counters_.transposes;

    Tensor y = add(flat, linear(ctx.reshaped({rows * n, d}), lw.w_o));
    const Tensor normed2 = rmsnorm(y, lw.rmsnorm_2, cfg.norm_eps);
    Tensor gate = linear(normed2, lw.w_gate);
    const Tensor up = linear(normed2, lw.w_up);
    for (std::int64_t i = 0; i < gate.size(); ++i) gate[i] = silu(gate[i]) * up[i];
    y = add(y, linear(gate, lw.w_down));
    return std::move(y).reshaped({rows, n, d});
}

Tensor ReferenceSession::prefill(const std::vector<std::vector<std::int64_t>>& prompt) {
    const auto np = static_cast<std::int64_t>(prompt.at(0).size());
    const auto rows = bs_ * bw_;
    std::vector<std::int64_t> flat, positions;
    for (const auto& row : prompt) {
        for (std::int64_t w = 0; w < bw_; ++w) {
            flat.insert(flat.end(), row.begin(), row.end());
            for (std::int64_t i = 0; i < np; ++i) positions.push_back(i);
        }
    }
    Tensor x = embed(w_, flat).reshaped({rows, np, w_.config.d_model()});
    for (std::int64_t l = 0; l < w_.config.layers; ++l) x = layer_forward(l, std::move(x), positions, true, {});
    return lm_head(w_, last_position_rows(x.reshaped({rows * np, w_.config.d_model()}), rows, np), &last_hidden_);
}

Tensor ReferenceSession::decode_step(std::span<const std::int64_t> tokens, std::int64_t position,
                                     std::span<const std::int64_t> beam_reorder) {
    const auto rows = bs_ * bw_;
    if (static_cast<std::int64_t>(tokens.size()) != rows) throw ShapeError("decode_step: need one token per beam row");
    const std::vector<std::int64_t> positions(static_cast<std::size_t>(rows), position);
    Tensor x = embed(w_, tokens).reshaped({rows, 1, w_.config.d_model()});
    for (std::int64_t l = 0; l < w_.config.layers; ++l) x = layer_forward(l, std::move(x), positions, false, beam_reorder);
    return lm_head(w_, std::move(x).reshaped({rows, w_.config.d_model()}), &last_hidden_);
}

// ---------------------------------------------------------------------------
// Generation loop

namespace {

struct LoopHooks {
    // Returns logits [BS*BW, V] for the prompt.
    std::function<Tensor()> prefill;
    // Feeds one token per row at `position`; `step` counts decode steps from 1.
    std::function<Tensor(std::span<const std::int64_t>, std::int64_t position, std::int64_t step,
                         const BeamSearchState&)>
        decode;
    std::function<const Tensor&()> hidden;  // [BS*BW, d]
    std::function<OpCounters()> counters;
    std::function<std::uint64_t()> cache_bytes;
    std::function<std::int64_t()> capacity;  // -1 when not applicable
    std::function<LedgerSummary()> ledger;
};

GenerationResult run_loop(const GenerationRequest& req, std::int64_t bw, const LoopHooks& hooks) {
    const auto bs = req.bs(), np = req.n_prompt(), nr = req.n_response;
    GenerationResult result;
    result.min_selection_margin = std::numeric_limits<float>::infinity();

    const auto start = Clock::now();
    Tensor logits = hooks.prefill();
    result.cache_bytes.push_back(hooks.cache_bytes());
    result.prompt_cache_bytes = result.cache_bytes.back();

    BeamSearchState state = bw > 1 ? initial_beam_state(bs, bw) : BeamSearchState(bs, 1);
    if (nr > 0) {
        const auto r = beam_step(log_softmax(logits), state);
        result.min_selection_margin = std::min(result.min_selection_margin, r.selection_margin);
    }
    result.timing.first_token_ms = ms_since(start);

    double decode_ms = 0.0;
    std::vector<std::int64_t> tokens(static_cast<std::size_t>(bs * bw));
    for (std::int64_t step = 1; step < nr; ++step) {
        const auto& last = state.tokens().back();
        for (std::int64_t b = 0; b < bs; ++b)
            for (std::int64_t w = 0; w < bw; ++w)
                tokens[static_cast<std::size_t>(b * bw + w)] = last[static_cast<std::size_t>(b)][static_cast<std::size_t>(w)];
        const auto before = hooks.counters();
        const auto t0 = Clock::now();
        logits = hooks.decode(tokens, np + step - 1, step, state);
        const auto r = beam_step(log_softmax(logits), state);
        decode_ms += ms_since(t0);
        result.min_selection_margin = std::min(result.min_selection_margin, r.selection_margin);
        result.step_counters.push_back(diff(hooks.counters(), before));
        result.counters += result.step_counters.back();
        result.cache_bytes.push_back(hooks.cache_bytes());
        if (const auto cap = hooks.capacity(); cap >= 0) result.response_capacity.push_back(cap);
    }
    result.timing.next_token_ms = nr > 1 ? decode_ms / static_cast<double>(nr - 1) : 0.0;
    result.timing.total_ms = ms_since(start);

    result.tokens.assign(static_cast<std::size_t>(bs), {});
    for (std::int64_t b = 0; b < bs; ++b)
        for (std::int64_t w = 0; w < bw; ++w) result.tokens[static_cast<std::size_t>(b)].push_back(state.hypothesis(b, w));
    result.final_hidden = hooks.hidden();
    result.memory = hooks.ledger();
    return result;
}

LedgerSummary summarize(const MemoryLedger& l) { return {l.peak_reserved(), l.active_bytes(), l.fragmentation()}; }

}  // namespace

GenerationResult generate(const ToyWeights& weights, const GenerationRequest& request, EngineOptions options) {
    weights.validate();
    request.validate(weights.config);
    const auto bs = request.bs();
    const auto bw = request.mode == DecodeMode::Greedy ? std::int64_t{1} : request.bw;
    OptimizedSession session(weights, bs, bw, options);
    Tensor hidden;

    LoopHooks hooks;
    hooks.prefill = [&] {
        Tensor logits = session.prefill(request.prompt);
        hidden = repeat_rows(session.last_hidden(), bw);
        return repeat_rows(logits, bw);
    };
    hooks.decode = [&](std::span<const std::int64_t> tokens, std::int64_t position, std::int64_t step,
                       const BeamSearchState& state) {
        Tensor logits = session.decode_step(tokens, position, build_gather_indices(state.parents(), step));
        hidden = session.last_hidden();
        return logits;
    };
    hooks.hidden = [&]() -> const Tensor& { return hidden; };
    hooks.counters = [&] { return session.counters(); };
    hooks.cache_bytes = [&] { return session.cache().bytes(); };
    hooks.capacity = [&] { return session.cache().response.empty() ? std::int64_t{-1} : session.cache().response[0].capacity(); };
    hooks.ledger = [&] { return summarize(session.ledger()); };
    return run_loop(request, bw, hooks);
}

GenerationResult reference_generate(const ToyWeights& weights, const GenerationRequest& request, ReusePolicy reuse) {
    weights.validate();
    request.validate(weights.config);
    const auto bs = request.bs();
    const auto bw = request.mode == DecodeMode::Greedy ? std::int64_t{1} : request.bw;
    ReferenceSession session(weights, bs, bw, reuse);
    std::vector<std::int64_t> reorder(static_cast<std::size_t>(bs * bw));

    LoopHooks hooks;
    hooks.prefill = [&] { return session.prefill(request.prompt); };
    hooks.decode = [&](std::span<const std::int64_t> tokens, std::int64_t position, std::int64_t,
                       const BeamSearchState& state) {
        const auto& parents = state.parents().back();
        for (std::int64_t b = 0; b < bs; ++b)
            for (std::int64_t w = 0; w < bw; ++w)
                reorder[static_cast<std::size_t>(b * bw + w)] =
                    b * bw + parents[static_cast<std::size_t>(b)][static_cast<std::size_t>(w)];
        return session.decode_step(tokens, position, reorder);
    };
    hooks.hidden = [&]() -> const Tensor& { return session.last_hidden(); };
    hooks.counters = [&] { return session.counters(); };
    hooks.cache_bytes = [&] { return session.cache().bytes(); };
    hooks.capacity = [] { return std::int64_t{-1}; };
    hooks.ledger = [&] { return summarize(session.ledger()); };
    return run_loop(request, bw, hooks);
}

}  // namespace segkv
