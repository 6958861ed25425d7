#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "segkv/engine.hpp"
#include "segkv/fusion_graph.hpp"
#include "segkv/kv_cache.hpp"

namespace segkv::reports {

// Decimal gigabytes (1e9 bytes), e.g. format_gb(137438953472) == "137 GB".
std::string format_gb(std::uint64_t bytes, int decimals = 0);

struct MemsimRow {
    std::string model;
    std::int64_t bs = 0, bw = 0, n_prompt = 0, n_response = 0, dtype_bytes = 0;
    std::uint64_t standard_bytes = 0;
    std::uint64_t segment_bytes = 0;
    double ratio = 0.0;  // segment / standard, 0 when standard is 0
    std::uint64_t saving_bytes = 0;
};

// One row per (model, BS), models outermost.
std::vector<MemsimRow> memsim(const std::vector<ModelConfig>& models, const std::vector<std::int64_t>& bs_list,
                              std::int64_t bw, std::int64_t n_prompt, std::int64_t n_response);

inline constexpr const char* kMemsimCsvHeader =
    "model,BS,BW,N_prompt,N_response,dtype_bytes,standard_bytes,segment_bytes,ratio,saving_bytes";

std::string memsim_csv(const std::vector<MemsimRow>& rows);
nlohmann::ordered_json memsim_json(const std::vector<MemsimRow>& rows);

// Largest BS whose cache fits in budget_bytes (inclusive). 0 when even BS = 1
// does not fit.
std::int64_t max_batch_size(CachePolicy policy, const ModelConfig& config, std::int64_t bw, std::int64_t n_prompt,
                            std::int64_t n_response, std::uint64_t budget_bytes);

struct BenchReport {
    std::string model;
    std::int64_t bs = 0;  // batch size actually run (= bs_max)
    std::int64_t bw = 0, n_prompt = 0, n_response = 0;
    std::uint64_t budget_bytes = 0;
    std::string engine;                // "optimized" or "reference"
    std::int64_t bs_max = 0;           // for the engine's cache policy
    std::int64_t bs_max_segment = 0;
    std::int64_t bs_max_standard = 0;
    std::string exec_model;            // desk-scale model that was actually timed
    double first_token_latency_ms = 0.0;
    double next_token_latency_ms = 0.0;
    double total_latency_s = 0.0;
    double throughput_tokens_per_s = 0.0;  // bs_max * n_response / total_latency_s
};

enum class EngineChoice { Optimized, Reference, Both };

// BS_max from the accounting config; timing from a run of `exec_config` at
// that batch size. Optimized uses the segment cache size, Reference the
// contiguous one.
BenchReport bench(const ModelConfig& accounting, const ModelConfig& exec_config, std::uint64_t budget_bytes,
                  std::int64_t bw, std::int64_t n_prompt, std::int64_t n_response, std::uint64_t seed,
                  EngineChoice engine = EngineChoice::Optimized);
nlohmann::ordered_json bench_json(const BenchReport& r);

// {"standard": ..., "optimized": ...} for one phase.
nlohmann::ordered_json fusion_report(const ModelConfig& config, graph::Phase phase);

// Random prompt [bs][n] with ids in [0, vocab).
std::vector<std::vector<std::int64_t>> random_prompt(std::int64_t bs, std::int64_t n, std::int64_t vocab,
                                                     std::uint64_t seed);
// Whitespace-separated ids, one batch item per non-empty line.
std::vector<std::vector<std::int64_t>> read_prompt_file(const std::string& path);

// Deterministic fields first; wall-clock numbers only under "timing".
nlohmann::ordered_json gen(const ToyWeights& weights, const GenerationRequest& request, EngineChoice engine);

}  // namespace segkv::reports
