#include "segkv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace segkv {

const char* layout_name(Layout layout) {
    switch (layout) {
        case Layout::BatchFirst: return "BatchFirst";
        case Layout::SequenceFirst: return "SequenceFirst";
        case Layout::Unlaid: return "Unlaid";
    }
    return "?";
}

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<float> data, Layout layout)
    : shape_(std::move(shape)), data_(std::move(data)), layout_(layout) {
    if (numel(shape_) != static_cast<std::int64_t>(data_.size())) {
        throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str(shape_));
    }
    if (layout_ != Layout::Unlaid && shape_.size() != 4) {
        throw LayoutError(std::string(layout_name(layout_)) + " tag requires a 4-D tensor, got " +
                          shape_str(shape_));
    }
}

Tensor Tensor::filled(Shape shape, float value, Layout layout) {
    const auto n = static_cast<std::size_t>(numel(shape));
    return Tensor(std::move(shape), std::vector<float>(n, value), layout);
}

Tensor Tensor::random(Shape shape, RandomFill fill, Layout layout) {
    const auto n = static_cast<std::size_t>(numel(shape));
    std::vector<float> data(n);
    std::mt19937_64 rng(fill.seed);
    std::normal_distribution<float> dist(0.0f, fill.scale);
    for (auto& v : data) v = dist(rng);
    return Tensor(std::move(shape), std::move(data), layout);
}

void Tensor::check_4d_index(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const {
    if (shape_.size() != 4) throw ShapeError("4-D access on tensor of shape " + shape_str(shape_));
    if (a < 0 || b < 0 || c < 0 || d < 0 || a >= shape_[0] || b >= shape_[1] || c >= shape_[2] ||
        d >= shape_[3]) {
        throw std::out_of_range("index out of range for shape " + shape_str(shape_));
    }
}

float& Tensor::at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
    check_4d_index(a, b, c, d);
    return data_[static_cast<std::size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
}

float Tensor::at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const {
    check_4d_index(a, b, c, d);
    return data_[static_cast<std::size_t>(((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d)];
}

Tensor Tensor::reshaped(Shape shape, Layout layout) const& {
    return Tensor(std::move(shape), data_, layout);
}

Tensor Tensor::reshaped(Shape shape, Layout layout) && {
    return Tensor(std::move(shape), std::move(data_), layout);
}

namespace {

// Swap the two leading axes of a 4-D tensor.
Tensor swap_leading_axes(const Tensor& t, Layout out_layout) {
    const auto a0 = t.dim(0), a1 = t.dim(1);
    const auto row = t.dim(2) * t.dim(3);
    std::vector<float> out(static_cast<std::size_t>(t.size()));
    const float* src = t.ptr();
    for (std::int64_t i = 0; i < a0; ++i) {
        for (std::int64_t j = 0; j < a1; ++j) {
            std::copy_n(src + (i * a1 + j) * row, row, out.data() + (j * a0 + i) * row);
        }
    }
    return Tensor({a1, a0, t.dim(2), t.dim(3)}, std::move(out), out_layout);
}

}  // namespace

Tensor to_sequence_first(const Tensor& t) {
    if (t.rank() != 4 || t.layout() != Layout::BatchFirst) {
        throw LayoutError("to_sequence_first expects a 4-D BatchFirst tensor, got " +
                          shape_str(t.shape()) + " " + layout_name(t.layout()));
    }
    return swap_leading_axes(t, Layout::SequenceFirst);
}

Tensor to_batch_first(const Tensor& t) {
    if (t.rank() != 4 || t.layout() != Layout::SequenceFirst) {
        throw LayoutError("to_batch_first expects a 4-D SequenceFirst tensor, got " +
                          shape_str(t.shape()) + " " + layout_name(t.layout()));
    }
    return swap_leading_axes(t, Layout::BatchFirst);
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    float m = 0.0f;
    for (std::int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace segkv
