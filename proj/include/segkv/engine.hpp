#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "segkv/beam_search.hpp"
#include "segkv/counters.hpp"
#include "segkv/kv_cache.hpp"
#include "segkv/memory_ledger.hpp"
#include "segkv/model_ops.hpp"
#include "segkv/sdpa.hpp"
#include "segkv/tensor.hpp"

namespace segkv {

struct ToyWeights {
    ModelConfig config;
    std::uint64_t seed = 0;
    Tensor embedding;  // [vocab, d_model]
    std::vector<LayerWeights> layers;
    Tensor final_norm;  // [d_model]
    Tensor lm_head;     // [d_model, vocab]

    void validate() const;
};

// Seeded Gaussian weights (std `scale`), norm scales set to one.
ToyWeights make_toy_weights(const ModelConfig& config, std::uint64_t seed, float scale = 0.02f);

nlohmann::ordered_json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

// One JSON header line (config, seed, tensor manifest with byte offsets into
// the blob) followed by the raw little-endian float32 blob.
void save_weights(const std::string& path, const ToyWeights& weights);
ToyWeights load_weights(const std::string& path);

enum class DecodeMode { Greedy, Beam };

struct GenerationRequest {
    std::vector<std::vector<std::int64_t>> prompt;  // [BS][N_prompt]
    std::int64_t n_response = 0;
    DecodeMode mode = DecodeMode::Greedy;
    std::int64_t bw = 1;
    std::uint64_t seed = 0;

    std::int64_t bs() const { return static_cast<std::int64_t>(prompt.size()); }
    std::int64_t n_prompt() const { return prompt.empty() ? 0 : static_cast<std::int64_t>(prompt[0].size()); }
    void validate(const ModelConfig& config) const;
};

struct GenerationTiming {
    double first_token_ms = 0.0;  // prefill + first selection
    double next_token_ms = 0.0;   // mean over decode steps 2..N
    double total_ms = 0.0;
};

struct GenerationResult {
    std::vector<std::vector<std::vector<std::int64_t>>> tokens;  // [BS][BW][N_response]
    GenerationTiming timing;
    Tensor final_hidden;  // [BS*BW, d_model], output of the final norm at the last forward
    float min_selection_margin = 0.0f;
    OpCounters counters;                      // summed over decode steps only
    std::vector<OpCounters> step_counters;    // one entry per decode step
    std::vector<std::uint64_t> cache_bytes;   // KV cache footprint after prefill and after each decode step
    std::vector<std::int64_t> response_capacity;  // segment engine: layer-0 capacity after each decode step
    std::uint64_t prompt_cache_bytes = 0;
    LedgerSummary memory;
};

struct EngineOptions {
    std::int64_t initial_response_capacity = 0;  // 0: start at one growth step
    ReusePolicy reuse = ReusePolicy::FirstFitGe;
    Exec exec = Exec::Parallel;
};

// Sequence-first decode with a segment cache and the fused decode SDPA.
class OptimizedSession {
public:
    OptimizedSession(const ToyWeights& weights, std::int64_t bs, std::int64_t bw, EngineOptions options = {});

    // prompt [BS][N_prompt] -> logits of the last prompt position [BS, vocab].
    Tensor prefill(const std::vector<std::vector<std::int64_t>>& prompt);
    // tokens: one per row of BS*BW, all at `position`. indices must cover the
    // response length after this step's append.
    Tensor decode_step(std::span<const std::int64_t> tokens, std::int64_t position, const BeamIndices& indices);

    const SegmentKVCache& cache() const { return cache_; }
    const MemoryLedger& ledger() const { return ledger_; }
    const OpCounters& counters() const { return counters_; }
    const Tensor& last_hidden() const { return last_hidden_; }

private:
    const ToyWeights& w_;
    std::int64_t bs_, bw_;
    EngineOptions options_;
    SegmentKVCache cache_;
    MemoryLedger ledger_;
    OpCounters counters_;
    Tensor last_hidden_;
};

// Batch-first decode with a contiguous cache rebuilt by index-select + cat,
// explicit head-major transposes and materialized attention.
class ReferenceSession {
public:
    ReferenceSession(const ToyWeights& weights, std::int64_t bs, std::int64_t bw,
                     ReusePolicy reuse = ReusePolicy::FirstFitGe);

    // Prompt replicated per beam -> logits [BS*BW, vocab].
    Tensor prefill(const std::vector<std::vector<std::int64_t>>& prompt);
    // beam_reorder: source row in the previous cache for every row.
    Tensor decode_step(std::span<const std::int64_t> tokens, std::int64_t position,
                       std::span<const std::int64_t> beam_reorder);

    const StandardKV& cache() const { return cache_; }
    const MemoryLedger& ledger() const { return ledger_; }
    const OpCounters& counters() const { return counters_; }
    const Tensor& last_hidden() const { return last_hidden_; }

private:
    Tensor layer_forward(std::int64_t layer, Tensor x, std::span<const std::int64_t> positions, bool prefill,
                         std::span<const std::int64_t> beam_reorder);

    const ToyWeights& w_;
    std::int64_t bs_, bw_;
    std::vector<Tensor> w_q_, w_k_, w_v_;
    StandardKV cache_;
    MemoryLedger ledger_;
    OpCounters counters_;
    Tensor last_hidden_;
};

GenerationResult generate(const ToyWeights& weights, const GenerationRequest& request, EngineOptions options = {});
GenerationResult reference_generate(const ToyWeights& weights, const GenerationRequest& request,
                                    ReusePolicy reuse = ReusePolicy::FirstFitGe);

}  // namespace segkv
