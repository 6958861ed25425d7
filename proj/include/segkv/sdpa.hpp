#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "segkv/beam_search.hpp"
#include "segkv/tensor.hpp"

namespace segkv {

enum class Exec { Parallel, Serial };

// Streaming softmax accumulator for one query row:
//   m' = max(m, s)
//   l' = l * exp(m - m') + exp(s - m')
//   acc' = acc * exp(m - m') + exp(s - m') * v
// acc / l is the attention output over every key seen so far.
class OnlineSoftmaxState {
public:
    explicit OnlineSoftmaxState(std::int64_t dim) : acc_(static_cast<std::size_t>(dim), 0.0f) {}

    void update(float score, const float* value) {
        const float m_new = std::max(m_, score);
        const float carry = std::exp(m_ - m_new);  // 0 on the first key (m_ = -inf)
        const float p = std::exp(score - m_new);
        l_ = l_ * carry + p;
        for (std::size_t i = 0; i < acc_.size(); ++i) acc_[i] = acc_[i] * carry + p * value[i];
        m_ = m_new;
    }

    void write(float* out) const {
        const float inv = 1.0f / l_;
        for (std::size_t i = 0; i < acc_.size(); ++i) out[i] = acc_[i] * inv;
    }

    float max_score() const { return m_; }
    float denominator() const { return l_; }

private:
    float m_ = -std::numeric_limits<float>::infinity();
    float l_ = 0.0f;
    std::vector<float> acc_;
};

// Decode-step attention inputs, shapes as stored by the segment cache.
struct SdpaDecodeInputs {
    const Tensor& q;           // [1, BS*BW, H, D]
    const Tensor& prompt_k;    // [BS, N_prompt, H, D] BatchFirst
    const Tensor& prompt_v;
    const Tensor& resp_k;      // [>= n_response, BS*BW, H, D] SequenceFirst
    const Tensor& resp_v;
    std::int64_t n_response;   // rows of resp_k/resp_v in use
    const BeamIndices& indices;  // [BS][BW][>= n_response]
    float scale;
};

// Causal (or full) attention over BatchFirst [BS, N, H, D] inputs, streaming
// keys through the online softmax. No layout conversion.
Tensor sdpa_prefill(const Tensor& q, const Tensor& k, const Tensor& v, bool causal = true,
                    Exec exec = Exec::Parallel);

// Single pass over the shared prompt keys of batch item b, then over the
// response keys gathered through indices, with one normalization at the end.
// Output [1, BS*BW, H, D] SequenceFirst.
Tensor sdpa_decode_fused(const SdpaDecodeInputs& in, Exec exec = Exec::Parallel);

// Materializing oracles: gather/concat every key row explicitly and run a
// two-pass softmax in double precision.
Tensor sdpa_prefill_oracle(const Tensor& q, const Tensor& k, const Tensor& v, bool causal = true);
Tensor sdpa_decode_oracle(const SdpaDecodeInputs& in);

// Unfused attention over head-major [B, H, N, D] tensors: BatchGeMM, mask,
// softmax, BatchGeMM, each materialized. Query i sits at absolute position
// (Nk - Nq + i) when causal.
Tensor attention_head_major(const Tensor& q, const Tensor& k, const Tensor& v, bool causal);

// [B, N, H, D] <-> [B, H, N, D]. Input tag is ignored; output is Unlaid for
// the head-major side and BatchFirst for the sequence-major side.
Tensor transpose_to_head_major(const Tensor& t);
Tensor transpose_from_head_major(const Tensor& t);

}  // namespace segkv
