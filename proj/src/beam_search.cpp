#include "segkv/beam_search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace segkv {

BeamIndices BeamIndices::identity(std::int64_t bs, std::int64_t bw, std::int64_t steps) {
    BeamIndices idx(bs, bw, steps);
    for (std::int64_t b = 0; b < bs; ++b)
        for (std::int64_t w = 0; w < bw; ++w)
            for (std::int64_t t = 0; t < steps; ++t) idx.at(b, w, t) = w;
    return idx;
}

BeamSearchState::BeamSearchState(std::int64_t bs, std::int64_t bw, std::int64_t pad_token)
    : bs_(bs), bw_(bw), pad_token_(pad_token), cum_log_probs_(static_cast<std::size_t>(bs * bw), 0.0f),
      finished_(static_cast<std::size_t>(bs * bw), false) {
    if (bs < 0 || bw < 1) throw std::invalid_argument("beam search: need BS >= 0 and BW >= 1");
}

void BeamSearchState::set_finished(std::int64_t b, std::int64_t w, bool value) {
    finished_.at(static_cast<std::size_t>(b * bw_ + w)) = value;
}

void BeamSearchState::set_cum_log_probs(std::vector<float> values) {
    if (values.size() != cum_log_probs_.size()) throw ShapeError("beam search: cum_log_probs size mismatch");
    cum_log_probs_ = std::move(values);
}

std::vector<std::int64_t> BeamSearchState::hypothesis(std::int64_t b, std::int64_t w) const {
    std::vector<std::int64_t> out(tokens_.size());
    auto slot = w;
    for (auto t = static_cast<std::int64_t>(tokens_.size()) - 1; t >= 0; --t) {
        const auto ut = static_cast<std::size_t>(t);
        out[ut] = tokens_[ut][static_cast<std::size_t>(b)][static_cast<std::size_t>(slot)];
        slot = parents_[ut][static_cast<std::size_t>(b)][static_cast<std::size_t>(slot)];
    }
    return out;
}

BeamSearchState initial_beam_state(std::int64_t bs, std::int64_t bw, std::int64_t pad_token) {
    BeamSearchState state(bs, bw, pad_token);
    std::vector<float> cum(static_cast<std::size_t>(bs * bw), 0.0f);
    for (std::int64_t b = 0; b < bs; ++b)
        for (std::int64_t w = 1; w < bw; ++w)
            cum[static_cast<std::size_t>(b * bw + w)] = -std::numeric_limits<float>::infinity();
    state.set_cum_log_probs(std::move(cum));
    return state;
}

BeamStepResult beam_step(const Tensor& log_probs, BeamSearchState& state) {
    const auto bs = state.bs_, bw = state.bw_;
    if (log_probs.rank() != 2 || log_probs.dim(0) != bs * bw) {
        throw ShapeError("beam_step: log_probs must be [BS*BW, V] = [" + std::to_string(bs * bw) + ", V], got " +
                         shape_str(log_probs.shape()));
    }
    const auto vocab = log_probs.dim(1);
    if (vocab < bw) {
        throw std::invalid_argument("beam_step: vocabulary " + std::to_string(vocab) + " smaller than beam width " +
                                    std::to_string(bw));
    }

    struct Candidate {
        float score;
        std::int64_t parent, token;
    };
    // Descending score, then ascending (parent, token).
    const auto better = [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.parent != b.parent) return a.parent < b.parent;
        return a.token < b.token;
    };

    BeamStepResult result;
    result.tokens.assign(static_cast<std::size_t>(bs), std::vector<std::int64_t>(static_cast<std::size_t>(bw)));
    result.parents = result.tokens;
    result.selection_margin = std::numeric_limits<float>::infinity();
    std::vector<float> next_cum(state.cum_log_probs_.size());
    std::vector<bool> next_finished(state.finished_.size());

    std::vector<Candidate> cands;
    for (std::int64_t b = 0; b < bs; ++b) {
        cands.clear();
        for (std::int64_t w = 0; w < bw; ++w) {
            const auto row = static_cast<std::size_t>(b * bw + w);
            const float base = state.cum_log_probs_[row];
            if (state.finished_[row]) {
                cands.push_back({base, w, state.pad_token_});
                continue;
            }
            const float* lp = log_probs.ptr() + static_cast<std::int64_t>(row) * vocab;
            for (std::int64_t v = 0; v < vocab; ++v) cands.push_back({base + lp[v], w, v});
        }
        const auto keep = std::min<std::size_t>(static_cast<std::size_t>(bw), cands.size());
        if (keep < static_cast<std::size_t>(bw)) throw std::invalid_argument("beam_step: not enough candidates");
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
        if (cands.size() > keep) {
            const auto next_best = std::max_element(cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                                                    [&](const Candidate& a, const Candidate& c) { return better(c, a); });
            const float gap = cands[keep - 1].score - next_best->score;
            if (std::isfinite(gap)) result.selection_margin = std::min(result.selection_margin, gap);
        }
        for (std::size_t w = 0; w < keep; ++w) {
            const auto& c = cands[w];
            const auto ub = static_cast<std::size_t>(b);
            result.tokens[ub][w] = c.token;
            result.parents[ub][w] = c.parent;
            const auto dst = static_cast<std::size_t>(b * bw) + w;
            next_cum[dst] = c.score;
            next_finished[dst] = state.finished_[static_cast<std::size_t>(b * bw + c.parent)];
        }
    }
    state.cum_log_probs_ = std::move(next_cum);
    state.finished_ = std::move(next_finished);
    state.tokens_.push_back(result.tokens);
    state.parents_.push_back(result.parents);
    return result;
}

BeamIndices build_gather_indices(const std::vector<BeamTable>& parents, std::int64_t upto_step) {
    if (upto_step < 1 || upto_step > static_cast<std::int64_t>(parents.size())) {
        throw std::invalid_argument("build_gather_indices: step " + std::to_string(upto_step) + " outside [1, " +
                                    std::to_string(parents.size()) + "]");
    }
    const auto bs = static_cast<std::int64_t>(parents[0].size());
    const auto bw = bs == 0 ? std::int64_t{1} : static_cast<std::int64_t>(parents[0][0].size());
    BeamIndices idx(bs, bw, upto_step);
    for (std::int64_t b = 0; b < bs; ++b) {
        for (std::int64_t w = 0; w < bw; ++w) {
            auto cursor = w;
            for (auto t = upto_step - 1; t >= 0; --t) {
                idx.at(b, w, t) = cursor;
                const auto& row = parents[static_cast<std::size_t>(t)].at(static_cast<std::size_t>(b));
                if (static_cast<std::int64_t>(row.size()) != bw) throw ShapeError("build_gather_indices: ragged parents");
                cursor = row[static_cast<std::size_t>(cursor)];
                if (cursor < 0 || cursor >= bw) {
                    throw std::out_of_range("build_gather_indices: parent " + std::to_string(cursor) +
                                            " outside [0, " + std::to_string(bw) + ") at step " + std::to_string(t));
                }
            }
        }
    }
    return idx;
}

}  // namespace segkv
