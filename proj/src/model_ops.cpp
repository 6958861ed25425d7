#include "segkv/model_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace segkv {

void ModelConfig::validate() const {
    if (layers < 1 || heads < 1 || head_dim < 1 || ff_dim < 1 || vocab < 1 || max_pos < 1) {
        throw std::invalid_argument("model config '" + name + "': all dimensions must be >= 1");
    }
    if (step < 1) throw std::invalid_argument("model config '" + name + "': step must be >= 1");
    if (dtype_bytes < 1) throw std::invalid_argument("model config '" + name + "': dtype_bytes must be >= 1");
    if (head_dim % 2 != 0) throw std::invalid_argument("model config '" + name + "': head_dim must be even for RoPE");
}

namespace {

ModelConfig make_preset(std::string name, std::int64_t l, std::int64_t h, std::int64_t ff,
                        std::int64_t vocab, RopeStyle style) {
    ModelConfig c;
    c.name = std::move(name);
    c.layers = l;
    c.heads = h;
    c.head_dim = 128;
    c.ff_dim = ff;
    c.vocab = vocab;
    c.max_pos = 4096;
    c.rope_style = style;
    c.step = 16;
    c.dtype_bytes = 2;
    return c;
}

}  // namespace

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"gptj-6b", "llama2-13b", "opt-30b", "bloom-176b"};
    return names;
}

ModelConfig preset(const std::string& name) {
    if (name == "gptj-6b") return make_preset(name, 32, 32, 16384, 50400, RopeStyle::Interleaved);
    if (name == "llama2-13b") return make_preset(name, 40, 40, 13824, 32000, RopeStyle::HalfRotation);
    if (name == "opt-30b") return make_preset(name, 48, 56, 28672, 50272, RopeStyle::HalfRotation);
    if (name == "bloom-176b") return make_preset(name, 70, 112, 57344, 250880, RopeStyle::HalfRotation);
    if (name == "toy") return ModelConfig{};
    throw std::invalid_argument("unknown model preset '" + name + "'");
}

void LayerWeights::validate(const ModelConfig& cfg) const {
    const auto d = cfg.d_model(), f = cfg.ff_dim;
    auto expect = [](const Tensor& t, const Shape& s, const char* what) {
        if (t.shape() != s) {
            throw ShapeError(std::string(what) + " has shape " + shape_str(t.shape()) + ", expected " +
                             shape_str(s));
        }
    };
    expect(rmsnorm_1, {d}, "rmsnorm_1");
    expect(rmsnorm_2, {d}, "rmsnorm_2");
    expect(w_qkv, {d, 3 * d}, "w_qkv");
    expect(w_o, {d, d}, "w_o");
    expect(w_gate, {d, f}, "w_gate");
    expect(w_up, {d, f}, "w_up");
    expect(w_down, {f, d}, "w_down");
}

namespace {

std::int64_t last_dim(const Tensor& x, const char* op) {
    if (x.rank() == 0) throw ShapeError(std::string(op) + ": scalar input");
    return x.shape().back();
}

Shape with_last(const Shape& s, std::int64_t last) {
    Shape out = s;
    out.back() = last;
    return out;
}

void check_linear_args(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
    if (w.rank() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(w.shape()));
    if (last_dim(x, "linear") != w.dim(0)) {
        throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
    if (bias && bias->shape() != Shape{w.dim(1)}) {
        throw ShapeError("linear: bias " + shape_str(bias->shape()) + " does not match weight " +
                         shape_str(w.shape()));
    }
}

// y_row = x_row . w, accumulated over k in increasing order.
inline void matvec_row(const float* x, const float* w, float* y, std::int64_t in, std::int64_t out) {
    std::fill_n(y, out, 0.0f);
    for (std::int64_t k = 0; k < in; ++k) {
        const float xk = x[k];
        const float* wk = w + k * out;
        for (std::int64_t j = 0; j < out; ++j) y[j] += xk * wk[j];
    }
}

}  // namespace

Tensor rmsnorm(const Tensor& x, const Tensor& weight, float eps) {
    const auto d = last_dim(x, "rmsnorm");
    if (weight.shape() != Shape{d}) {
        throw ShapeError("rmsnorm: weight " + shape_str(weight.shape()) + " does not match input " +
                         shape_str(x.shape()));
    }
    Tensor y = Tensor::zeros(x.shape());
    const std::int64_t rows = d == 0 ? 0 : x.size() / d;
    const float* src = x.ptr();
    float* dst = y.ptr();
    const float* w = weight.ptr();
#pragma omp parallel for schedule(static) if (rows > 64)
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* xr = src + r * d;
        float ss = 0.0f;
        for (std::int64_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
        const float denom = std::sqrt(ss / static_cast<float>(d) + eps);
        // x = 0 with eps = 0 would divide 0/0; the zero vector maps to zero.
        const float inv = denom > 0.0f ? 1.0f / denom : 0.0f;
        float* yr = dst + r * d;
        for (std::int64_t i = 0; i < d; ++i) yr[i] = xr[i] * inv * w[i];
    }
    return y;
}

Tensor linear(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
    check_linear_args(x, w, bias);
    const auto in = w.dim(0), out = w.dim(1);
    Tensor y = Tensor::zeros(with_last(x.shape(), out));
    const std::int64_t rows = in == 0 ? numel(with_last(x.shape(), 1)) : x.size() / in;
    const float* xs = x.ptr();
    const float* ws = w.ptr();
    float* ys = y.ptr();
    const float* bs = bias ? bias->ptr() : nullptr;
#pragma omp parallel for schedule(static) if (rows * in * out > (1 << 16))
    for (std::int64_t r = 0; r < rows; ++r) {
        float* yr = ys + r * out;
        matvec_row(xs + r * in, ws, yr, in, out);
        if (bs) {
            for (std::int64_t j = 0; j < out; ++j) yr[j] += bs[j];
        }
    }
    return y;
}

Tensor linear_serial(const Tensor& x, const Tensor& w, const std::optional<Tensor>& bias) {
    check_linear_args(x, w, bias);
    const auto in = w.dim(0), out = w.dim(1);
    Tensor y = Tensor::zeros(with_last(x.shape(), out));
    const std::int64_t rows = in == 0 ? numel(with_last(x.shape(), 1)) : x.size() / in;
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t j = 0; j < out; ++j) {
            float acc = 0.0f;
            for (std::int64_t k = 0; k < in; ++k) acc += x[r * in + k] * w[k * out + j];
            if (bias) acc += (*bias)[j];
            y[r * out + j] = acc;
        }
    }
    return y;
}

QKV fused_qkv(const Tensor& x, const Tensor& w_qkv, std::int64_t heads) {
    const auto d = last_dim(x, "fused_qkv");
    if (w_qkv.shape() != Shape{d, 3 * d}) {
        throw ShapeError("fused_qkv: weight " + shape_str(w_qkv.shape()) + " does not match input " +
                         shape_str(x.shape()));
    }
    if (heads < 1 || d % heads != 0) {
        throw ShapeError("fused_qkv: d_model " + std::to_string(d) + " not divisible by heads " +
                         std::to_string(heads));
    }
    const Tensor y = linear(x, w_qkv);
    const std::int64_t rows = d == 0 ? 0 : x.size() / d;
    Shape out_shape(x.shape().begin(), x.shape().end() - 1);
    out_shape.push_back(heads);
    out_shape.push_back(d / heads);

    std::vector<float> q(static_cast<std::size_t>(rows * d)), k(q.size()), v(q.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* yr = y.ptr() + r * 3 * d;
        std::copy_n(yr, d, q.data() + r * d);
        std::copy_n(yr + d, d, k.data() + r * d);
        std::copy_n(yr + 2 * d, d, v.data() + r * d);
    }
    return {Tensor(out_shape, std::move(q)), Tensor(out_shape, std::move(k)),
            Tensor(out_shape, std::move(v))};
}

namespace {

void rope_inplace(Tensor& t, std::span<const std::int64_t> positions, double theta, RopeStyle style) {
    const auto h = t.dim(t.rank() - 2), d = t.dim(t.rank() - 1);
    const auto half = d / 2;
    const std::int64_t rows = h * d == 0 ? 0 : t.size() / (h * d);
    if (static_cast<std::int64_t>(positions.size()) != rows) {
        throw ShapeError("rope: " + std::to_string(positions.size()) + " positions for " +
                         std::to_string(rows) + " token rows");
    }
    std::vector<double> inv_freq(static_cast<std::size_t>(half));
    for (std::int64_t i = 0; i < half; ++i) {
        inv_freq[static_cast<std::size_t>(i)] =
            std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    }
    float* data = t.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
        const double pos = static_cast<double>(positions[static_cast<std::size_t>(r)]);
        for (std::int64_t i = 0; i < half; ++i) {
            const double angle = pos * inv_freq[static_cast<std::size_t>(i)];
            const auto c = static_cast<float>(std::cos(angle));
            const auto s = static_cast<float>(std::sin(angle));
            for (std::int64_t hh = 0; hh < h; ++hh) {
                float* row = data + (r * h + hh) * d;
                const auto a = style == RopeStyle::HalfRotation ? i : 2 * i;
                const auto b = style == RopeStyle::HalfRotation ? i + half : 2 * i + 1;
                const float x0 = row[a], x1 = row[b];
                row[a] = x0 * c - x1 * s;
                row[b] = x0 * s + x1 * c;
            }
        }
    }
}

}  // namespace

std::pair<Tensor, Tensor> rope(const Tensor& q, const Tensor& k, std::span<const std::int64_t> positions,
                               double theta, RopeStyle style) {
    if (q.rank() < 2 || k.rank() < 2) throw ShapeError("rope: inputs must be [..., H, D]");
    if (q.shape().back() % 2 != 0 || k.shape().back() % 2 != 0) {
        throw ShapeError("rope: head dim must be even, got " + std::to_string(q.shape().back()));
    }
    Tensor qo = q, ko = k;
    rope_inplace(qo, positions, theta, style);
    rope_inplace(ko, positions, theta, style);
    return {std::move(qo), std::move(ko)};
}

float silu(float z) { return z / (1.0f + std::exp(-z)); }

Tensor gated_mlp(const Tensor& x, const Tensor& w_gate, const Tensor& w_up, const Tensor& w_down) {
    const auto d = last_dim(x, "gated_mlp");
    if (w_gate.rank() != 2 || w_gate.dim(0) != d || w_up.shape() != w_gate.shape() ||
        w_down.rank() != 2 || w_down.dim(0) != w_gate.dim(1)) {
        throw ShapeError("gated_mlp: inconsistent weights gate " + shape_str(w_gate.shape()) + " up " +
                         shape_str(w_up.shape()) + " down " + shape_str(w_down.shape()) +
                         " for input " + shape_str(x.shape()));
    }
    const auto ff = w_gate.dim(1), out = w_down.dim(1);
    Tensor y = Tensor::zeros(with_last(x.shape(), out));
    const std::int64_t rows = d == 0 ? 0 : x.size() / d;
#pragma omp parallel for schedule(static) if (rows * d * ff > (1 << 16))
    for (std::int64_t r = 0; r < rows; ++r) {
        std::vector<float> gate(static_cast<std::size_t>(ff)), up(gate.size());
        const float* xr = x.ptr() + r * d;
        matvec_row(xr, w_gate.ptr(), gate.data(), d, ff);
        matvec_row(xr, w_up.ptr(), up.data(), d, ff);
        for (std::size_t j = 0; j < gate.size(); ++j) gate[j] = silu(gate[j]) * up[j];
        matvec_row(gate.data(), w_down.ptr(), y.ptr() + r * out, ff, out);
    }
    return y;
}

Tensor log_softmax(const Tensor& logits) {
    const auto v = last_dim(logits, "log_softmax");
    Tensor out = Tensor::zeros(logits.shape());
    const std::int64_t rows = v == 0 ? 0 : logits.size() / v;
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* x = logits.ptr() + r * v;
        float m = -std::numeric_limits<float>::infinity();
        for (std::int64_t i = 0; i < v; ++i) m = std::max(m, x[i]);
        double s = 0.0;
        for (std::int64_t i = 0; i < v; ++i) s += std::exp(static_cast<double>(x[i] - m));
        const auto lse = static_cast<float>(std::log(s)) + m;
        for (std::int64_t i = 0; i < v; ++i) out[r * v + i] = x[i] - lse;
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = a;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

}  // namespace segkv
