#pragma once

#include <cstdint>
#include <vector>

#include "segkv/tensor.hpp"

namespace segkv {

// Per batch item, a [BW, steps] map from response step to the cache slot
// holding that step's key/value on each beam's surviving path.
class BeamIndices {
public:
    BeamIndices() = default;
    BeamIndices(std::int64_t bs, std::int64_t bw, std::int64_t steps)
        : bs_(bs), bw_(bw), steps_(steps), data_(static_cast<std::size_t>(bs * bw * steps), 0) {}

    // indices[b][w][t] = w for every t.
    static BeamIndices identity(std::int64_t bs, std::int64_t bw, std::int64_t steps);

    std::int64_t bs() const { return bs_; }
    std::int64_t bw() const { return bw_; }
    std::int64_t steps() const { return steps_; }

    std::int64_t& at(std::int64_t b, std::int64_t w, std::int64_t t) { return data_[offset(b, w, t)]; }
    std::int64_t at(std::int64_t b, std::int64_t w, std::int64_t t) const { return data_[offset(b, w, t)]; }

    bool operator==(const BeamIndices&) const = default;

private:
    std::size_t offset(std::int64_t b, std::int64_t w, std::int64_t t) const {
        return static_cast<std::size_t>((b * bw_ + w) * steps_ + t);
    }

    std::int64_t bs_ = 0, bw_ = 0, steps_ = 0;
    std::vector<std::int64_t> data_;
};

// [BS, BW] table of per-beam values (tokens or parent slots) for one step.
using BeamTable = std::vector<std::vector<std::int64_t>>;

struct BeamStepResult {
    BeamTable tokens;
    BeamTable parents;
    // Score gap between the last kept and first rejected candidate, minimum
    // over batch items (infinity when nothing was rejected).
    float selection_margin = 0.0f;
};

class BeamSearchState {
public:
    BeamSearchState(std::int64_t bs, std::int64_t bw, std::int64_t pad_token = 0);

    std::int64_t bs() const { return bs_; }
    std::int64_t bw() const { return bw_; }
    std::int64_t steps() const { return static_cast<std::int64_t>(tokens_.size()); }
    std::int64_t pad_token() const { return pad_token_; }

    const std::vector<float>& cum_log_probs() const { return cum_log_probs_; }
    float cum_log_prob(std::int64_t b, std::int64_t w) const {
        return cum_log_probs_[static_cast<std::size_t>(b * bw_ + w)];
    }
    const std::vector<BeamTable>& tokens() const { return tokens_; }
    const std::vector<BeamTable>& parents() const { return parents_; }

    bool finished(std::int64_t b, std::int64_t w) const { return finished_[static_cast<std::size_t>(b * bw_ + w)]; }
    void set_finished(std::int64_t b, std::int64_t w, bool value = true);

    // Overwrite cumulative scores (rows of BS*BW), e.g. to mask duplicated
    // initial beams with -inf.
    void set_cum_log_probs(std::vector<float> values);

    // Token sequence of final slot w of batch item b, oldest first, following
    // the parent links back through every step.
    std::vector<std::int64_t> hypothesis(std::int64_t b, std::int64_t w) const;

private:
    friend BeamStepResult beam_step(const Tensor& log_probs, BeamSearchState& state);

    std::int64_t bs_, bw_, pad_token_;
    std::vector<float> cum_log_probs_;
    std::vector<bool> finished_;
    std::vector<BeamTable> tokens_;
    std::vector<BeamTable> parents_;
};

// Starting state where beams 1..BW-1 are masked to -inf, so the first step
// expands beam 0 only.
BeamSearchState initial_beam_state(std::int64_t bs, std::int64_t bw, std::int64_t pad_token = 0);

// One selection step over log_probs [BS*BW, V]: the BW best (parent, token)
// candidates by cumulative score, ties broken toward smaller (parent, token).
// Finished beams propose only the pad token at log-prob 0.
BeamStepResult beam_step(const Tensor& log_probs, BeamSearchState& state);

// parents[t][b][w] is the slot at step t-1 that slot w at step t extends.
// Walks back from every final slot: indices[b][w][t'] is the slot at step t'
// on that path, for t' in [0, upto_step).
BeamIndices build_gather_indices(const std::vector<BeamTable>& parents, std::int64_t upto_step);

}  // namespace segkv
