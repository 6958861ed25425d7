#include "doctest.h"
#include "segkv/tensor.hpp"

using namespace segkv;

namespace {

// Direct index permutation (a, b, h, d) -> (b, a, h, d).
Tensor swap_leading_oracle(const Tensor& t, Layout out_layout) {
    Tensor out = Tensor::zeros({t.dim(1), t.dim(0), t.dim(2), t.dim(3)}, out_layout);
    for (std::int64_t a = 0; a < t.dim(0); ++a)
        for (std::int64_t b = 0; b < t.dim(1); ++b)
            for (std::int64_t h = 0; h < t.dim(2); ++h)
                for (std::int64_t d = 0; d < t.dim(3); ++d) out.at(b, a, h, d) = t.at(a, b, h, d);
    return out;
}

Tensor iota(Shape shape, Layout layout) {
    const auto n = numel(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) data[static_cast<std::size_t>(i)] = static_cast<float>(i);
    return Tensor(std::move(shape), std::move(data), layout);
}

}  // namespace

TEST_CASE("new tensor fills") {
    CHECK(Tensor::zeros({2, 2}).data().size() == 4);
    const auto z = Tensor::zeros({2, 2});
    for (float v : z.data()) CHECK(v == 0.0f);
    const auto seven = Tensor::filled({1}, 7.0f);
    CHECK(seven[0] == 7.0f);
    CHECK(Tensor::random({2, 3}, {42, 1.0f}) == Tensor::random({2, 3}, {42, 1.0f}));
    CHECK_FALSE(Tensor::random({2, 3}, {42, 1.0f}) == Tensor::random({2, 3}, {43, 1.0f}));
}

TEST_CASE("zero-size tensors are allowed") {
    const auto t = Tensor::zeros({0, 3, 2, 2}, Layout::BatchFirst);
    CHECK(t.size() == 0);
    CHECK(to_sequence_first(t).shape() == Shape{3, 0, 2, 2});
}

TEST_CASE("constructor rejects inconsistent data and tags") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), ShapeError);
    CHECK_THROWS_AS(Tensor({-1}, {}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({2, 2}, Layout::BatchFirst), LayoutError);
}

TEST_CASE("4-D access is bounds checked") {
    auto t = Tensor::zeros({1, 2, 1, 1});
    CHECK_THROWS_AS(t.at(0, 2, 0, 0), std::out_of_range);
    CHECK_THROWS_AS(Tensor::zeros({2, 2}).at(0, 0, 0, 0), ShapeError);
}

TEST_CASE("to_sequence_first permutes the leading axes") {
    const auto t = iota({2, 3, 1, 1}, Layout::BatchFirst);
    const auto s = to_sequence_first(t);
    CHECK(s.shape() == Shape{3, 2, 1, 1});
    CHECK(s.layout() == Layout::SequenceFirst);
    CHECK(std::vector<float>(s.data().begin(), s.data().end()) == std::vector<float>{0, 3, 1, 4, 2, 5});
}

TEST_CASE("single batch and sequence entry only changes the tag") {
    const auto t = Tensor::random({1, 1, 3, 4}, {5, 1.0f}, Layout::BatchFirst);
    const auto s = to_sequence_first(t);
    CHECK(s.layout() == Layout::SequenceFirst);
    CHECK(std::equal(s.data().begin(), s.data().end(), t.data().begin()));
}

TEST_CASE("to_batch_first inverts the example") {
    const Tensor s({3, 2, 1, 1}, {0, 3, 1, 4, 2, 5}, Layout::SequenceFirst);
    const auto b = to_batch_first(s);
    CHECK(b == iota({2, 3, 1, 1}, Layout::BatchFirst));
}

TEST_CASE("layout conversions match the permutation oracle and round-trip") {
    const auto x = Tensor::random({4, 5, 2, 3}, {11, 1.0f}, Layout::BatchFirst);
    const auto s = to_sequence_first(x);
    CHECK(s == swap_leading_oracle(x, Layout::SequenceFirst));
    CHECK(to_batch_first(s) == x);

    const auto y = Tensor::random({5, 4, 2, 3}, {12, 1.0f}, Layout::SequenceFirst);
    CHECK(to_batch_first(y) == swap_leading_oracle(y, Layout::BatchFirst));
    CHECK(to_sequence_first(to_batch_first(y)) == y);
}

TEST_CASE("layout conversions reject wrong tag or rank") {
    const auto bf = Tensor::zeros({1, 2, 1, 1}, Layout::BatchFirst);
    const auto sf = Tensor::zeros({1, 2, 1, 1}, Layout::SequenceFirst);
    CHECK_THROWS_AS(to_sequence_first(sf), LayoutError);
    CHECK_THROWS_AS(to_batch_first(bf), LayoutError);
    CHECK_THROWS_AS(to_sequence_first(Tensor::zeros({2, 2})), LayoutError);
    CHECK_THROWS_AS(to_batch_first(Tensor::zeros({1, 2, 1, 1})), LayoutError);
}

TEST_CASE("reshaped keeps data and checks element count") {
    const auto t = iota({2, 3}, Layout::Unlaid);
    const auto r = t.reshaped({3, 2});
    CHECK(std::equal(r.data().begin(), r.data().end(), t.data().begin()));
    CHECK_THROWS_AS(t.reshaped({4, 2}), ShapeError);
}

TEST_CASE("tag is part of tensor equality") {
    const auto a = Tensor::zeros({1, 1, 1, 1}, Layout::BatchFirst);
    const auto b = Tensor::zeros({1, 1, 1, 1}, Layout::SequenceFirst);
    CHECK_FALSE(a == b);
}
