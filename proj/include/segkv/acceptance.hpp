#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace segkv::acceptance {

struct Options {
    int sdpa_cases = 200;
    int engine_configs = 20;
    std::uint64_t seed = 20240601;
    // Runs whose selection margin falls below this are redrawn: the two
    // engines may then legitimately pick different tokens. Observed
    // cross-engine hidden-state gaps are around 1e-6.
    float tie_margin = 1e-5f;

    static Options quick() { return {20, 4}; }
    static Options full() { return {}; }
};

struct CriterionResult {
    int id = 0;
    std::string title;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
    double time_limit_s = 0.0;
};

CriterionResult memory_golden_values();
CriterionResult fused_sdpa_equivalence(const Options& opt);
CriterionResult cross_engine_equivalence(const Options& opt);
CriterionResult segment_growth_semantics();
CriterionResult fusion_count();
CriterionResult fragmentation_model();
CriterionResult bs_max_inversion();
CriterionResult decode_counters();

// Runs every criterion in order, writing one line per criterion to `out`
// as it finishes.
std::vector<CriterionResult> run_all(const Options& opt, std::ostream* out = nullptr);
std::string format_line(const CriterionResult& r);
bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace segkv::acceptance
