#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace segkv {

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class LayoutError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Axis order of a 4-D activation tensor.
//   BatchFirst    [batch*beam, seq, head, dim]
//   SequenceFirst [seq, batch*beam, head, dim]
//   Unlaid        2-D/3-D tensors where the distinction does not apply
enum class Layout { BatchFirst, SequenceFirst, Unlaid };

const char* layout_name(Layout layout);

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct RandomFill {
    std::uint64_t seed = 0;
    float scale = 1.0f;  // standard deviation of the Gaussian draw
};

// Dense row-major float tensor. The layout tag is part of the value: two
// tensors with equal data but different tags are different tensors.
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<float> data, Layout layout = Layout::Unlaid);

    static Tensor filled(Shape shape, float value, Layout layout = Layout::Unlaid);
    static Tensor zeros(Shape shape, Layout layout = Layout::Unlaid) {
        return filled(std::move(shape), 0.0f, layout);
    }
    static Tensor random(Shape shape, RandomFill fill, Layout layout = Layout::Unlaid);

    const Shape& shape() const { return shape_; }
    std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const { return shape_.size(); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    Layout layout() const { return layout_; }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float* ptr() { return data_.data(); }
    const float* ptr() const { return data_.data(); }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // 4-D element access in storage order.
    float& at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d);
    float at(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const;

    // Same data, new shape. Element count must match.
    Tensor reshaped(Shape shape, Layout layout = Layout::Unlaid) const&;
    Tensor reshaped(Shape shape, Layout layout = Layout::Unlaid) &&;

    bool operator==(const Tensor& other) const = default;

private:
    void check_4d_index(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) const;

    Shape shape_;
    std::vector<float> data_;
    Layout layout_ = Layout::Unlaid;
};

// [B, N, H, D] BatchFirst -> [N, B, H, D] SequenceFirst (explicit copy).
Tensor to_sequence_first(const Tensor& t);
// [N, B, H, D] SequenceFirst -> [B, N, H, D] BatchFirst (explicit copy).
Tensor to_batch_first(const Tensor& t);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace segkv
