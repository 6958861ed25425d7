#include "segkv/sdpa.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace segkv {

namespace {

inline float dot(const float* a, const float* b, std::int64_t n) {
    float s = 0.0f;
    for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void check_prefill_args(const Tensor& q, const Tensor& k, const Tensor& v) {
    for (const Tensor* t : {&q, &k, &v}) {
        if (t->rank() != 4 || t->layout() != Layout::BatchFirst) {
            throw LayoutError("sdpa_prefill expects 4-D BatchFirst tensors, got " + shape_str(t->shape()) + " " +
                              layout_name(t->layout()));
        }
    }
    if (k.shape() != q.shape() || v.shape() != q.shape()) {
        throw ShapeError("sdpa_prefill: shape mismatch q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) +
                         " v " + shape_str(v.shape()));
    }
}

struct DecodeDims {
    std::int64_t bs, bw, heads, dim, n_prompt, n_response;
};

DecodeDims check_decode_args(const SdpaDecodeInputs& in) {
    const auto& q = in.q;
    if (q.rank() != 4 || q.dim(0) != 1) throw ShapeError("sdpa_decode: query must be [1, BS*BW, H, D], got " + shape_str(q.shape()));
    if (in.prompt_k.rank() != 4 || in.prompt_k.layout() != Layout::BatchFirst || in.prompt_v.shape() != in.prompt_k.shape() ||
        in.prompt_v.layout() != Layout::BatchFirst) {
        throw LayoutError("sdpa_decode: prompt key/value must be matching [BS, N_prompt, H, D] BatchFirst");
    }
    DecodeDims d{};
    d.bs = in.prompt_k.dim(0);
    d.heads = q.dim(2);
    d.dim = q.dim(3);
    d.n_prompt = in.prompt_k.dim(1);
    d.n_response = in.n_response;
    if (d.bs <= 0 || q.dim(1) % d.bs != 0) {
        throw ShapeError("sdpa_decode: query rows " + std::to_string(q.dim(1)) + " not a multiple of BS " + std::to_string(d.bs));
    }
    d.bw = q.dim(1) / d.bs;
    if (in.prompt_k.dim(2) != d.heads || in.prompt_k.dim(3) != d.dim) {
        throw ShapeError("sdpa_decode: prompt heads/dim do not match query");
    }
    if (d.n_response < 0) throw std::invalid_argument("sdpa_decode: negative n_response");
    if (d.n_prompt + d.n_response == 0) throw std::invalid_argument("sdpa_decode: no keys to attend to");
    if (d.n_response > 0) {
        const auto& rk = in.resp_k;
        if (rk.rank() != 4 || rk.layout() != Layout::SequenceFirst || in.resp_v.shape() != rk.shape() ||
            in.resp_v.layout() != Layout::SequenceFirst) {
            throw LayoutError("sdpa_decode: response key/value must be matching [N, BS*BW, H, D] SequenceFirst");
        }
        if (rk.dim(0) < d.n_response || rk.dim(1) != q.dim(1) || rk.dim(2) != d.heads || rk.dim(3) != d.dim) {
            throw ShapeError("sdpa_decode: response cache " + shape_str(rk.shape()) + " incompatible with query " +
                             shape_str(q.shape()) + " and n_response " + std::to_string(d.n_response));
        }
        const auto& idx = in.indices;
        if (idx.bs() != d.bs || idx.bw() != d.bw || idx.steps() < d.n_response) {
            throw ShapeError("sdpa_decode: beam indices do not cover [BS, BW, n_response]");
        }
        for (std::int64_t b = 0; b < d.bs; ++b)
            for (std::int64_t w = 0; w < d.bw; ++w)
                for (std::int64_t t = 0; t < d.n_response; ++t) {
                    const auto s = idx.at(b, w, t);
                    if (s < 0 || s >= d.bw) {
                        throw std::out_of_range("sdpa_decode: beam index " + std::to_string(s) + " outside [0, " +
                                                std::to_string(d.bw) + ")");
                    }
                }
    }
    return d;
}

}  // namespace

Tensor sdpa_prefill(const Tensor& q, const Tensor& k, const Tensor& v, bool causal, Exec exec) {
    check_prefill_args(q, k, v);
    const auto bs = q.dim(0), n = q.dim(1), heads = q.dim(2), dim = q.dim(3);
    const float scale = 1.0f / std::sqrt(static_cast<float>(dim));
    Tensor out = Tensor::zeros(q.shape(), Layout::BatchFirst);
    const float *qp = q.ptr(), *kp = k.ptr(), *vp = v.ptr();
    float* op = out.ptr();
    auto at = [&](std::int64_t b, std::int64_t i, std::int64_t h) { return ((b * n + i) * heads + h) * dim; };

#pragma omp parallel for collapse(2) schedule(static) if (exec == Exec::Parallel)
    for (std::int64_t b = 0; b < bs; ++b) {
        for (std::int64_t h = 0; h < heads; ++h) {
            for (std::int64_t i = 0; i < n; ++i) {
                OnlineSoftmaxState st(dim);
                const float* qi = qp + at(b, i, h);
                const auto last = causal ? i + 1 : n;
                for (std::int64_t j = 0; j < last; ++j) {
                    const auto off = at(b, j, h);
                    st.update(dot(qi, kp + off, dim) * scale, vp + off);
                }
                st.write(op + at(b, i, h));
            }
        }
    }
    return out;
}

Tensor sdpa_decode_fused(const SdpaDecodeInputs& in, Exec exec) {
    const auto d = check_decode_args(in);
    const auto rows = d.bs * d.bw;
    Tensor out = Tensor::zeros({1, rows, d.heads, d.dim}, Layout::SequenceFirst);
    const float* qp = in.q.ptr();
    const float* pk = in.prompt_k.ptr();
    const float* pv = in.prompt_v.ptr();
    const float* rk = d.n_response > 0 ? in.resp_k.ptr() : nullptr;
    const float* rv = d.n_response > 0 ? in.resp_v.ptr() : nullptr;
    float* op = out.ptr();

#pragma omp parallel for collapse(2) schedule(static) if (exec == Exec::Parallel)
    for (std::int64_t b = 0; b < d.bs; ++b) {
        for (std::int64_t h = 0; h < d.heads; ++h) {
            for (std::int64_t w = 0; w < d.bw; ++w) {
                const auto row = b * d.bw + w;
                const float* q = qp + (row * d.heads + h) * d.dim;
                OnlineSoftmaxState st(d.dim);
                // Prompt keys of batch item b, shared by all its beams.
                for (std::int64_t j = 0; j < d.n_prompt; ++j) {
                    const auto off = ((b * d.n_prompt + j) * d.heads + h) * d.dim;
                    st.update(dot(q, pk + off, d.dim) * in.scale, pv + off);
                }
                // Response keys on this beam's path.
                for (std::int64_t t = 0; t < d.n_response; ++t) {
                    const auto src = b * d.bw + in.indices.at(b, w, t);
                    const auto off = ((t * rows + src) * d.heads + h) * d.dim;
                    st.update(dot(q, rk + off, d.dim) * in.scale, rv + off);
                }
                st.write(op + (row * d.heads + h) * d.dim);
            }
        }
    }
    return out;
}

namespace {

// softmax(scale * q.K^T) . V over explicit key/value row lists, double precision.
void materialized_attention(const float* q, const std::vector<const float*>& keys,
                            const std::vector<const float*>& values, std::int64_t dim, double scale, float* out) {
    std::vector<double> scores(keys.size());
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < keys.size(); ++j) {
        double s = 0.0;
        for (std::int64_t i = 0; i < dim; ++i) s += static_cast<double>(q[i]) * keys[j][i];
        scores[j] = s * scale;
        m = std::max(m, scores[j]);
    }
    double denom = 0.0;
    for (auto& s : scores) {
        s = std::exp(s - m);
        denom += s;
    }
    for (std::int64_t i = 0; i < dim; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < values.size(); ++j) acc += scores[j] * values[j][i];
        out[i] = static_cast<float>(acc / denom);
    }
}

}  // namespace

Tensor sdpa_prefill_oracle(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
    check_prefill_args(q, k, v);
    const auto bs = q.dim(0), n = q.dim(1), heads = q.dim(2), dim = q.dim(3);
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    Tensor out = Tensor::zeros(q.shape(), Layout::BatchFirst);
    auto at = [&](std::int64_t b, std::int64_t i, std::int64_t h) { return ((b * n + i) * heads + h) * dim; };
    for (std::int64_t b = 0; b < bs; ++b)
        for (std::int64_t h = 0; h < heads; ++h)
            for (std::int64_t i = 0; i < n; ++i) {
                std::vector<const float*> keys, values;
                for (std::int64_t j = 0; j < (causal ? i + 1 : n); ++j) {
                    keys.push_back(k.ptr() + at(b, j, h));
                    values.push_back(v.ptr() + at(b, j, h));
                }
                materialized_attention(q.ptr() + at(b, i, h), keys, values, dim, scale, out.ptr() + at(b, i, h));
            }
    return out;
}

Tensor sdpa_decode_oracle(const SdpaDecodeInputs& in) {
    const auto d = check_decode_args(in);
    const auto rows = d.bs * d.bw;
    Tensor out = Tensor::zeros({1, rows, d.heads, d.dim}, Layout::SequenceFirst);
    const double scale = in.scale;
    for (std::int64_t b = 0; b < d.bs; ++b) {
        for (std::int64_t w = 0; w < d.bw; ++w) {
            const auto row = b * d.bw + w;
            for (std::int64_t h = 0; h < d.heads; ++h) {
                // Gathered [N_prompt + N_response] key/value sequence for this beam.
                std::vector<const float*> keys, values;
                for (std::int64_t j = 0; j < d.n_prompt; ++j) {
                    const auto off = ((b * d.n_prompt + j) * d.heads + h) * d.dim;
                    keys.push_back(in.prompt_k.ptr() + off);
                    values.push_back(in.prompt_v.ptr() + off);
                }
                for (std::int64_t t = 0; t < d.n_response; ++t) {
                    const auto src = b * d.bw + in.indices.at(b, w, t);
                    const auto off = ((t * rows + src) * d.heads + h) * d.dim;
                    keys.push_back(in.resp_k.ptr() + off);
                    values.push_back(in.resp_v.ptr() + off);
                }
                const auto qoff = (row * d.heads + h) * d.dim;
                materialized_attention(in.q.ptr() + qoff, keys, values, d.dim, scale, out.ptr() + qoff);
            }
        }
    }
    return out;
}

Tensor transpose_to_head_major(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("transpose_to_head_major: expected 4-D, got " + shape_str(t.shape()));
    const auto b = t.dim(0), n = t.dim(1), h = t.dim(2), d = t.dim(3);
    std::vector<float> out(static_cast<std::size_t>(t.size()));
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            for (std::int64_t k = 0; k < h; ++k)
                std::copy_n(t.ptr() + ((i * n + j) * h + k) * d, d, out.data() + ((i * h + k) * n + j) * d);
    return Tensor({b, h, n, d}, std::move(out), Layout::Unlaid);
}

Tensor transpose_from_head_major(const Tensor& t) {
    if (t.rank() != 4) throw ShapeError("transpose_from_head_major: expected 4-D, got " + shape_str(t.shape()));
    const auto b = t.dim(0), h = t.dim(1), n = t.dim(2), d = t.dim(3);
    std::vector<float> out(static_cast<std::size_t>(t.size()));
    for (std::int64_t i = 0; i < b; ++i)
        for (std::int64_t k = 0; k < h; ++k)
            for (std::int64_t j = 0; j < n; ++j)
                std::copy_n(t.ptr() + ((i * h + k) * n + j) * d, d, out.data() + ((i * n + j) * h + k) * d);
    return Tensor({b, n, h, d}, std::move(out), Layout::BatchFirst);
}

Tensor attention_head_major(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
    if (q.rank() != 4 || k.rank() != 4 || v.shape() != k.shape() || q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1) ||
        q.dim(3) != k.dim(3)) {
        throw ShapeError("attention_head_major: incompatible q " + shape_str(q.shape()) + " k " + shape_str(k.shape()));
    }
    const auto b = q.dim(0), h = q.dim(1), nq = q.dim(2), nk = k.dim(2), d = q.dim(3);
    if (nk == 0) throw std::invalid_argument("attention_head_major: no keys");
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));
    const auto offset = nk - nq;

    // scores = q . k^T * scale    [B, H, Nq, Nk]
    std::vector<float> probs(static_cast<std::size_t>(b * h * nq * nk));
    for (std::int64_t bh = 0; bh < b * h; ++bh)
        for (std::int64_t i = 0; i < nq; ++i)
            for (std::int64_t j = 0; j < nk; ++j)
                probs[static_cast<std::size_t>((bh * nq + i) * nk + j)] =
                    dot(q.ptr() + (bh * nq + i) * d, k.ptr() + (bh * nk + j) * d, d) * scale;
    // mask
    if (causal) {
        for (std::int64_t bh = 0; bh < b * h; ++bh)
            for (std::int64_t i = 0; i < nq; ++i)
                for (std::int64_t j = offset + i + 1; j < nk; ++j)
                    probs[static_cast<std::size_t>((bh * nq + i) * nk + j)] = -std::numeric_limits<float>::infinity();
    }
    // softmax
    for (std::int64_t r = 0; r < b * h * nq; ++r) {
        float* row = probs.data() + r * nk;
        const float m = *std::max_element(row, row + nk);
        float sum = 0.0f;
        for (std::int64_t j = 0; j < nk; ++j) {
            row[j] = std::exp(row[j] - m);
            sum += row[j];
        }
        for (std::int64_t j = 0; j < nk; ++j) row[j] /= sum;
    }
    // context = probs . v    [B, H, Nq, D]
    std::vector<float> ctx(static_cast<std::size_t>(b * h * nq * d), 0.0f);
    for (std::int64_t bh = 0; bh < b * h; ++bh)
        for (std::int64_t i = 0; i < nq; ++i) {
            float* out = ctx.data() + (bh * nq + i) * d;
            for (std::int64_t j = 0; j < nk; ++j) {
                const float p = probs[static_cast<std::size_t>((bh * nq + i) * nk + j)];
                const float* vr = v.ptr() + (bh * nk + j) * d;
                for (std::int64_t x = 0; x < d; ++x) out[x] += p * vr[x];
            }
        }
    return Tensor({b, h, nq, d}, std::move(ctx), Layout::Unlaid);
}

}  // namespace segkv
