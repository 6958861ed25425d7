#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "segkv/counters.hpp"
#include "segkv/memory_ledger.hpp"
#include "segkv/model_ops.hpp"
#include "segkv/tensor.hpp"

namespace segkv {

struct CacheShapeParams {
    std::int64_t bs = 1;
    std::int64_t bw = 1;
    std::int64_t n_prompt = 0;
    std::int64_t n_response = 0;

    void validate() const;
};

// Key + value bytes for one token across all layers.
std::uint64_t cache_token_bytes(const ModelConfig& config);
// Contiguous cache with the prompt replicated per beam, at the last step.
std::uint64_t standard_cache_bytes(const ModelConfig& config, const CacheShapeParams& p);
// Beam-shared prompt plus a response buffer rounded up to the growth step.
std::uint64_t segment_cache_bytes(const ModelConfig& config, const CacheShapeParams& p);

// Prompt keys/values for every layer, [BS, N_prompt, H, D] BatchFirst. No
// beam axis: all beams of a batch item read the same rows.
class PromptKV {
public:
    PromptKV() = default;
    PromptKV(std::int64_t layers, std::int64_t dtype_bytes) : k_(layers), v_(layers), dtype_bytes_(dtype_bytes) {}

    void store(std::int64_t layer, Tensor k, Tensor v, MemoryLedger* ledger = nullptr);

    const Tensor& k(std::int64_t layer) const { return k_.at(static_cast<std::size_t>(layer)); }
    const Tensor& v(std::int64_t layer) const { return v_.at(static_cast<std::size_t>(layer)); }
    std::int64_t layers() const { return static_cast<std::int64_t>(k_.size()); }
    // Accounting bytes of every stored layer (K and V).
    std::uint64_t bytes() const;

private:
    std::vector<Tensor> k_, v_;
    std::int64_t dtype_bytes_ = 2;
};

// Response keys/values of one layer in a pre-allocated SequenceFirst buffer
// [capacity, BS*BW, H, D]. Capacity grows by `step` rows when full; the old
// block is freed and the allocator cache emptied right after the copy.
class ResponseKV {
public:
    ResponseKV(std::int64_t rows, std::int64_t heads, std::int64_t head_dim, std::int64_t step,
               std::int64_t dtype_bytes, std::int64_t initial_capacity = 0);

    // k_t, v_t: [1, BS*BW, H, D] SequenceFirst. Written at row length().
    void append(const Tensor& k_t, const Tensor& v_t, MemoryLedger* ledger = nullptr);

    std::int64_t length() const { return length_; }
    std::int64_t capacity() const { return capacity_; }
    std::int64_t step() const { return step_; }
    std::int64_t rows() const { return rows_; }
    std::int64_t grow_count() const { return grow_count_; }
    // Full buffers including reserved rows [length, capacity).
    const Tensor& k() const { return k_; }
    const Tensor& v() const { return v_; }
    std::uint64_t bytes() const;

private:
    void grow(MemoryLedger* ledger);

    std::int64_t rows_, heads_, head_dim_, step_, dtype_bytes_, initial_capacity_;
    std::int64_t length_ = 0;
    std::int64_t capacity_ = 0;
    std::int64_t grow_count_ = 0;
    MemoryLedger::BlockId block_ = -1;
    Tensor k_, v_;
};

// Prompt + per-layer response buffers.
struct SegmentKVCache {
    PromptKV prompt;
    std::vector<ResponseKV> response;

    SegmentKVCache(const ModelConfig& config, const CacheShapeParams& p, std::int64_t initial_capacity = 0);
    void append_response_kv(std::int64_t layer, const Tensor& k_t, const Tensor& v_t, MemoryLedger* ledger = nullptr);
    std::uint64_t bytes() const;
};

// Gather along axis 0 (beam reorder) of a BatchFirst [B, N, H, D] tensor.
Tensor index_select_rows(const Tensor& t, std::span<const std::int64_t> indices);
// Concatenate two BatchFirst tensors along the sequence axis.
Tensor cat_sequence(const Tensor& a, const Tensor& b);

// Baseline contiguous cache [BS*BW, N_total, H, D] per layer, rebuilt every
// decode step by index-select + cat into a freshly allocated buffer.
class StandardKV {
public:
    StandardKV(std::int64_t layers, std::int64_t dtype_bytes)
        : k_(layers), v_(layers), blocks_(layers, -1), dtype_bytes_(dtype_bytes) {}

    // Prefill contents, [BS*BW, N_prompt, H, D] BatchFirst.
    void init_layer(std::int64_t layer, Tensor k, Tensor v, MemoryLedger* ledger = nullptr);
    // k_t, v_t: [BS*BW, 1, H, D] BatchFirst. beam_reorder holds, for each
    // destination row, the source row of the previous cache.
    void step(std::int64_t layer, const Tensor& k_t, const Tensor& v_t, std::span<const std::int64_t> beam_reorder,
              MemoryLedger* ledger = nullptr, OpCounters* counters = nullptr);

    const Tensor& k(std::int64_t layer) const { return k_.at(static_cast<std::size_t>(layer)); }
    const Tensor& v(std::int64_t layer) const { return v_.at(static_cast<std::size_t>(layer)); }
    std::int64_t length() const { return k_.empty() || k_[0].rank() != 4 ? 0 : k_[0].dim(1); }
    std::uint64_t bytes() const;

private:
    std::uint64_t layer_bytes(const Tensor& k) const;

    std::vector<Tensor> k_, v_;
    std::vector<MemoryLedger::BlockId> blocks_;
    std::int64_t dtype_bytes_;
};

enum class CachePolicy { Standard, Segment };

struct LedgerSummary {
    std::uint64_t peak_reserved = 0;
    std::uint64_t final_active = 0;
    std::uint64_t fragmentation = 0;
};

// Replays the allocation trace of a decode run (sizes only, whole model per
// block). Standard: one buffer of BS*BW*(N_prompt+t) tokens per step t,
// previous buffer freed afterwards. Segment: one prompt buffer, then a
// response buffer growing by `step` with empty-cache after each growth.
LedgerSummary simulate_decode_memory(CachePolicy policy, const ModelConfig& config, const CacheShapeParams& p,
                                     ReusePolicy reuse);

}  // namespace segkv
