#include "segkv/kv_cache.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace segkv {

void CacheShapeParams::validate() const {
    if (bs < 0 || bw < 1 || n_prompt < 0 || n_response < 0) {
        throw std::invalid_argument("cache shape params: need BS >= 0, BW >= 1, N_prompt >= 0, N_response >= 0");
    }
}

std::uint64_t cache_token_bytes(const ModelConfig& c) {
    return 2ull * static_cast<std::uint64_t>(c.layers) * static_cast<std::uint64_t>(c.heads) *
           static_cast<std::uint64_t>(c.head_dim) * static_cast<std::uint64_t>(c.dtype_bytes);
}

std::uint64_t standard_cache_bytes(const ModelConfig& c, const CacheShapeParams& p) {
    p.validate();
    return static_cast<std::uint64_t>(p.bs) * static_cast<std::uint64_t>(p.bw) *
           static_cast<std::uint64_t>(p.n_prompt + p.n_response) * cache_token_bytes(c);
}

std::uint64_t segment_cache_bytes(const ModelConfig& c, const CacheShapeParams& p) {
    p.validate();
    const auto step = static_cast<std::uint64_t>(c.step);
    const auto nr = static_cast<std::uint64_t>(p.n_response);
    const auto rounded = (nr + step - 1) / step * step;
    return static_cast<std::uint64_t>(p.bs) *
           (static_cast<std::uint64_t>(p.n_prompt) + static_cast<std::uint64_t>(p.bw) * rounded) *
           cache_token_bytes(c);
}

namespace {

std::uint64_t kv_bytes(const Tensor& k, std::int64_t dtype_bytes) {
    return 2ull * static_cast<std::uint64_t>(k.size()) * static_cast<std::uint64_t>(dtype_bytes);
}

void expect_shape(const Tensor& t, const Shape& s, Layout layout, const char* what) {
    if (t.shape() != s || t.layout() != layout) {
        throw ShapeError(std::string(what) + ": got " + shape_str(t.shape()) + " " + layout_name(t.layout()) +
                         ", expected " + shape_str(s) + " " + layout_name(layout));
    }
}

}  // namespace

void PromptKV::store(std::int64_t layer, Tensor k, Tensor v, MemoryLedger* ledger) {
    if (layer < 0 || layer >= layers()) throw std::out_of_range("PromptKV: layer out of range");
    if (k.rank() != 4 || k.layout() != Layout::BatchFirst) {
        throw LayoutError("PromptKV expects [BS, N_prompt, H, D] BatchFirst, got " + shape_str(k.shape()));
    }
    expect_shape(v, k.shape(), Layout::BatchFirst, "PromptKV value");
    const auto idx = static_cast<std::size_t>(layer);
    if (k_[idx].size() != 0) throw std::logic_error("PromptKV: layer already stored");
    if (ledger) ledger->allocate(kv_bytes(k, dtype_bytes_));
    k_[idx] = std::move(k);
    v_[idx] = std::move(v);
}

std::uint64_t PromptKV::bytes() const {
    std::uint64_t total = 0;
    for (const auto& k : k_) total += kv_bytes(k, dtype_bytes_);
    return total;
}

ResponseKV::ResponseKV(std::int64_t rows, std::int64_t heads, std::int64_t head_dim, std::int64_t step,
                       std::int64_t dtype_bytes, std::int64_t initial_capacity)
    : rows_(rows), heads_(heads), head_dim_(head_dim), step_(step), dtype_bytes_(dtype_bytes),
      initial_capacity_(initial_capacity) {
    if (step < 1) throw std::invalid_argument("ResponseKV: step must be >= 1");
    if (initial_capacity < 0 || initial_capacity % step != 0) {
        throw std::invalid_argument("ResponseKV: initial capacity must be a non-negative multiple of step");
    }
}

std::uint64_t ResponseKV::bytes() const { return capacity_ == 0 ? 0 : kv_bytes(k_, dtype_bytes_); }

void ResponseKV::grow(MemoryLedger* ledger) {
    const auto new_capacity =
        capacity_ == 0 ? (initial_capacity_ > 0 ? initial_capacity_ : step_) : capacity_ + step_;
    const Shape shape{new_capacity, rows_, heads_, head_dim_};
    Tensor k = Tensor::zeros(shape, Layout::SequenceFirst);
    Tensor v = Tensor::zeros(shape, Layout::SequenceFirst);
    const auto used = length_ * rows_ * heads_ * head_dim_;
    std::copy_n(k_.ptr(), used, k.ptr());
    std::copy_n(v_.ptr(), used, v.ptr());

    MemoryLedger::BlockId block = -1;
    if (ledger) {
        block = ledger->allocate(kv_bytes(k, dtype_bytes_));
        if (block_ >= 0) {
            ledger->free(block_);
            ledger->empty_cache();
        }
    }
    if (capacity_ > 0) ++grow_count_;
    block_ = block;
    k_ = std::move(k);
    v_ = std::move(v);
    capacity_ = new_capacity;
}

void ResponseKV::append(const Tensor& k_t, const Tensor& v_t, MemoryLedger* ledger) {
    const Shape s{1, rows_, heads_, head_dim_};
    expect_shape(k_t, s, Layout::SequenceFirst, "ResponseKV key");
    expect_shape(v_t, s, Layout::SequenceFirst, "ResponseKV value");
    if (length_ == capacity_) grow(ledger);
    const auto row = rows_ * heads_ * head_dim_;
    std::copy_n(k_t.ptr(), row, k_.ptr() + length_ * row);
    std::copy_n(v_t.ptr(), row, v_.ptr() + length_ * row);
    ++length_;
}

SegmentKVCache::SegmentKVCache(const ModelConfig& config, const CacheShapeParams& p, std::int64_t initial_capacity)
    : prompt(config.layers, config.dtype_bytes) {
    p.validate();
    response.reserve(static_cast<std::size_t>(config.layers));
    for (std::int64_t l = 0; l < config.layers; ++l) {
        response.emplace_back(p.bs * p.bw, config.heads, config.head_dim, config.step, config.dtype_bytes,
                              initial_capacity);
    }
}

void SegmentKVCache::append_response_kv(std::int64_t layer, const Tensor& k_t, const Tensor& v_t,
                                        MemoryLedger* ledger) {
    response.at(static_cast<std::size_t>(layer)).append(k_t, v_t, ledger);
}

std::uint64_t SegmentKVCache::bytes() const {
    std::uint64_t total = prompt.bytes();
    for (const auto& r : response) total += r.bytes();
    return total;
}

Tensor index_select_rows(const Tensor& t, std::span<const std::int64_t> indices) {
    if (t.rank() != 4 || t.layout() != Layout::BatchFirst) {
        throw LayoutError("index_select_rows expects a 4-D BatchFirst tensor, got " + shape_str(t.shape()));
    }
    const auto rows = t.dim(0);
    const auto row = t.dim(1) * t.dim(2) * t.dim(3);
    std::vector<float> out(indices.size() * static_cast<std::size_t>(row));
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = indices[i];
        if (src < 0 || src >= rows) {
            throw std::out_of_range("index_select_rows: index " + std::to_string(src) + " outside [0, " +
                                    std::to_string(rows) + ")");
        }
        std::copy_n(t.ptr() + src * row, row, out.data() + static_cast<std::int64_t>(i) * row);
    }
    return Tensor({static_cast<std::int64_t>(indices.size()), t.dim(1), t.dim(2), t.dim(3)}, std::move(out),
                  Layout::BatchFirst);
}

Tensor cat_sequence(const Tensor& a, const Tensor& b) {
    if (a.rank() != 4 || b.rank() != 4 || a.layout() != Layout::BatchFirst || b.layout() != Layout::BatchFirst ||
        a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw ShapeError("cat_sequence: incompatible " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const auto batch = a.dim(0), na = a.dim(1), nb = b.dim(1), row = a.dim(2) * a.dim(3);
    std::vector<float> out(static_cast<std::size_t>(batch * (na + nb) * row));
    for (std::int64_t i = 0; i < batch; ++i) {
        float* dst = out.data() + i * (na + nb) * row;
        std::copy_n(a.ptr() + i * na * row, na * row, dst);
        std::copy_n(b.ptr() + i * nb * row, nb * row, dst + na * row);
    }
    return Tensor({batch, na + nb, a.dim(2), a.dim(3)}, std::move(out), Layout::BatchFirst);
}

std::uint64_t StandardKV::layer_bytes(const Tensor& k) const { return kv_bytes(k, dtype_bytes_); }

void StandardKV::init_layer(std::int64_t layer, Tensor k, Tensor v, MemoryLedger* ledger) {
    const auto idx = static_cast<std::size_t>(layer);
    if (layer < 0 || idx >= k_.size()) throw std::out_of_range("StandardKV: layer out of range");
    if (k.rank() != 4 || k.layout() != Layout::BatchFirst) {
        throw LayoutError("StandardKV expects [BS*BW, N, H, D] BatchFirst, got " + shape_str(k.shape()));
    }
    expect_shape(v, k.shape(), Layout::BatchFirst, "StandardKV value");
    if (ledger) blocks_[idx] = ledger->allocate(layer_bytes(k));
    k_[idx] = std::move(k);
    v_[idx] = std::move(v);
}

void StandardKV::step(std::int64_t layer, const Tensor& k_t, const Tensor& v_t,
                      std::span<const std::int64_t> beam_reorder, MemoryLedger* ledger, OpCounters* counters) {
    const auto idx = static_cast<std::size_t>(layer);
    if (layer < 0 || idx >= k_.size()) throw std::out_of_range("StandardKV: layer out of range");
    auto& k = k_[idx];
    auto& v = v_[idx];
    if (k.rank() != 4) throw std::logic_error("StandardKV: step before init_layer");
    const Shape s{k.dim(0), 1, k.dim(2), k.dim(3)};
    expect_shape(k_t, s, Layout::BatchFirst, "StandardKV key");
    expect_shape(v_t, s, Layout::BatchFirst, "StandardKV value");
    if (static_cast<std::int64_t>(beam_reorder.size()) != k.dim(0)) {
        throw ShapeError("StandardKV: beam_reorder has " + std::to_string(beam_reorder.size()) + " entries for " +
                         std::to_string(k.dim(0)) + " rows");
    }

    Tensor nk = cat_sequence(index_select_rows(k, beam_reorder), k_t);
    Tensor nv = cat_sequence(index_select_rows(v, beam_reorder), v_t);
    if (counters) {
        counters->index_selects += 2;
        counters->cats += 2;
    }
    if (ledger) {
        const auto block = ledger->allocate(layer_bytes(nk));
        if (blocks_[idx] >= 0) ledger->free(blocks_[idx]);
        blocks_[idx] = block;
    }
    k = std::move(nk);
    v = std::move(nv);
}

std::uint64_t StandardKV::bytes() const {
    std::uint64_t total = 0;
    for (const auto& k : k_) total += layer_bytes(k);
    return total;
}

LedgerSummary simulate_decode_memory(CachePolicy policy, const ModelConfig& config, const CacheShapeParams& p,
                                     ReusePolicy reuse) {
    p.validate();
    const auto token = cache_token_bytes(config);
    const auto bs = static_cast<std::uint64_t>(p.bs), bw = static_cast<std::uint64_t>(p.bw);
    const auto np = static_cast<std::uint64_t>(p.n_prompt);
    MemoryLedger ledger(reuse);

    if (policy == CachePolicy::Standard) {
        if (p.n_response == 0) {
            ledger.allocate(bs * bw * np * token);
        }
        MemoryLedger::BlockId prev = -1;
        for (std::int64_t t = 1; t <= p.n_response; ++t) {
            const auto block = ledger.allocate(bs * bw * (np + static_cast<std::uint64_t>(t)) * token);
            if (prev >= 0) ledger.free(prev);
            prev = block;
        }
    } else {
        ledger.allocate(bs * np * token);
        const auto step = config.step;
        std::int64_t capacity = 0;
        MemoryLedger::BlockId prev = -1;
        for (std::int64_t t = 1; t <= p.n_response; ++t) {
            if (t <= capacity) continue;
            capacity += step;
            const auto block = ledger.allocate(bs * bw * static_cast<std::uint64_t>(capacity) * token);
            if (prev >= 0) {
                ledger.free(prev);
                ledger.empty_cache();
            }
            prev = block;
        }
    }
    return {ledger.peak_reserved(), ledger.active_bytes(), ledger.fragmentation()};
}

}  // namespace segkv
