#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "segkv/tensor.hpp"

namespace segkv {

enum class RopeStyle { HalfRotation, Interleaved };

struct ModelConfig {
    std::string name = "toy";
    std::int64_t layers = 2;        // L
    std::int64_t heads = 4;         // H
    std::int64_t head_dim = 16;     // D
    std::int64_t ff_dim = 128;
    std::int64_t vocab = 64;
    std::int64_t max_pos = 4096;
    double rope_theta = 10000.0;
    RopeStyle rope_style = RopeStyle::HalfRotation;
    std::int64_t step = 16;         // response-cache growth quantum
    std::int64_t dtype_bytes = 2;   // accounting only; compute is fp32
    float norm_eps = 1e-5f;

    std::int64_t d_model() const { return heads * head_dim; }

    // Throws std::invalid_argument on inconsistent fields.
    void validate() const;
};

// Layer-count/head geometry for the four reference model sizes. Everything
// except L/H/D is a desk-scale placeholder; these presets exist for memory
// accounting.
ModelConfig preset(const std::string& name);
const std::vector<std::string>& preset_names();

struct LayerWeights {
    Tensor rmsnorm_1;  // [d_model]
    Tensor rmsnorm_2;  // [d_model]
    Tensor w_qkv;      // [d_model, 3*d_model], columns Q | K | V
    Tensor w_o;        // [d_model, d_model]
    Tensor w_gate;     // [d_model, ff_dim]
    Tensor w_up;       // [d_model, ff_dim]
    Tensor w_down;     // [ff_dim, d_model]

    void validate(const ModelConfig& cfg) const;
};

// All ops below treat their input as a stack of row vectors over the last
// axis; leading axes are preserved in the output shape and the layout tag is
// dropped (outputs are Unlaid).

// y = x / sqrt(mean(x^2) + eps) * weight, per trailing vector.
Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps);

// y = x . w (+ bias). w is [in, out].
Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias = std::nullopt);

// Triple-loop matmul with the same per-row summation order as linear(), kept
// serial for cross-checking the parallel kernel.
Tensor linear_serial(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias = std::nullopt);

struct QKV {
    Tensor q, k, v;  // [..., H, D]
};

// One matmul against the column-concatenated projection, split into Q/K/V.
QKV fused_qkv(const Tensor& x, const Tensor& w_qkv, std::int64_t heads);

// Rotary embedding applied to q and k, shaped [..., H, D]. positions holds one
// entry per token row (product of the leading axes).
std::pair<Tensor, Tensor> rope(const Tensor& q, const Tensor& k,
                               std::span<const std::int64_t> positions, double theta,
                               RopeStyle style);

float silu(float z);

// (silu(x.w_gate) * (x.w_up)) . w_down
Tensor gated_mlp(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down);

// Row-wise numerically stable log-softmax over the last axis.
Tensor log_softmax(const Tensor& logits);

// Elementwise a + b; shapes must match. Output keeps a's shape and tag.
Tensor add(const Tensor& a, const Tensor& b);

}  // namespace segkv
