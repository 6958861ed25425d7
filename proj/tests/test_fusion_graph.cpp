#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "segkv/fusion_graph.hpp"
#include "segkv/reports.hpp"

using namespace segkv;
using namespace segkv::graph;

namespace {

// Node count of the unfused decoder layer, frozen from the builder and
// matched by the hand enumeration below.
constexpr std::int64_t kStandardDecodeNodes = 43;
constexpr std::int64_t kStandardPrefillNodes = 39;

std::map<OpKind, std::int64_t> histogram(const OpGraph& g) {
    std::map<OpKind, std::int64_t> h;
    for (const auto& n : g.nodes()) ++h[n.kind];
    return h;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const OpNode& only(const OpGraph& g, OpKind kind) {
    const OpNode* found = nullptr;
    for (const auto& n : g.nodes()) {
        if (n.kind == kind) {
            REQUIRE(found == nullptr);
            found = &n;
        }
    }
    REQUIRE(found != nullptr);
    return *found;
}

}  // namespace

TEST_CASE("standard decode graph has the gather and concat nodes") {
    const auto g = build_standard_decoder_graph(ModelConfig{}, Phase::Decode);
    const auto r = op_count_report(g);
    CHECK(r.count(OpKind::Cat) == 2);
    CHECK(r.count(OpKind::IndexSelect) == 2);
    CHECK(r.count(OpKind::Transpose) >= 1);
    CHECK(r.total == kStandardDecodeNodes);
    CHECK(r.total > 9);
    CHECK(g.is_acyclic());
}

TEST_CASE("standard prefill graph has no past key/value handling") {
    const auto r = op_count_report(build_standard_decoder_graph(ModelConfig{}, Phase::Prefill));
    CHECK(r.count(OpKind::IndexSelect) == 0);
    CHECK(r.count(OpKind::Cat) == 0);
    CHECK(r.total == kStandardPrefillNodes);
}

TEST_CASE("standard decode histogram matches the hand enumeration") {
    // RMSNorm: pow, mean, add-eps, rsqrt, mul, mul-weight (x2).
    // RoPE on q and k: mul-cos, rotate-half, mul-sin, add (x2).
    // Linear: q, k, v, o, gate, up, down.
    // Transposes: q, k, v in; context out.
    const std::map<OpKind, std::int64_t> expected{
        {OpKind::RMSNormPrimitive, 12}, {OpKind::Linear, 7},        {OpKind::RoPEPrimitive, 8},
        {OpKind::Transpose, 4},         {OpKind::IndexSelect, 2},   {OpKind::Cat, 2},
        {OpKind::BatchGeMM, 2},         {OpKind::Mask, 1},          {OpKind::Softmax, 1},
        {OpKind::ElementwiseAdd, 2},    {OpKind::ElementwiseMul, 1}, {OpKind::Activation, 1},
    };
    CHECK(histogram(build_standard_decoder_graph(preset("llama2-13b"), Phase::Decode)) == expected);
}

TEST_CASE("fusion reduces the decode layer to nine nodes") {
    const auto fused = apply_fusion_passes(build_standard_decoder_graph(ModelConfig{}, Phase::Decode));
    const auto r = op_count_report(fused);
    CHECK(r.total == 9);
    CHECK(r.count(OpTag::DataMovement) == 0);
    CHECK(r.count(OpTag::ElementWise) == 0);
    CHECK(r.count(OpTag::FusedModule) == 9);
    CHECK(fused.is_acyclic());

    const std::map<OpKind, std::int64_t> expected{
        {OpKind::FusedRMSNorm, 2},      {OpKind::FusedQKVLinear, 1},   {OpKind::FusedRoPE, 1},
        {OpKind::FusedSDPA, 1},         {OpKind::LinearAddResidual, 2}, {OpKind::LinearActivation, 1},
        {OpKind::LinearMul, 1},
    };
    CHECK(histogram(fused) == expected);
}

TEST_CASE("prefill fuses to the same nine modules") {
    const auto fused = apply_fusion_passes(build_standard_decoder_graph(ModelConfig{}, Phase::Prefill));
    CHECK(fused.size() == 9);
}

TEST_CASE("fused graph wiring") {
    const auto fused = apply_fusion_passes(build_standard_decoder_graph(ModelConfig{}, Phase::Decode));
    const auto& qkv = only(fused, OpKind::FusedQKVLinear);
    const auto& rope = only(fused, OpKind::FusedRoPE);
    const auto& sdpa = only(fused, OpKind::FusedSDPA);
    CHECK(rope.inputs == std::vector<int>{qkv.id});
    // SDPA reads rotated Q/K and the raw V straight from the projection.
    CHECK(std::set<int>(sdpa.inputs.begin(), sdpa.inputs.end()) == std::set<int>{qkv.id, rope.id});
    // Past key/value and gather indices now feed the kernel directly.
    CHECK(fused.readers_of("past_key") == std::vector<int>{sdpa.id});
    CHECK(fused.readers_of("beam_indices") == std::vector<int>{sdpa.id});
    CHECK(fused.sinks().size() == 1);
}

TEST_CASE("passes are idempotent") {
    const auto once = apply_fusion_passes(build_standard_decoder_graph(ModelConfig{}, Phase::Decode));
    CHECK(apply_fusion_passes(once) == once);
    CHECK(pass_remove_data_movement(once) == once);
    CHECK(pass_merge_qkv(once) == once);
    CHECK(pass_collapse_chains(once) == once);
    CHECK(pass_absorb_elementwise(once) == once);
}

TEST_CASE("individual passes") {
    const auto g = build_standard_decoder_graph(ModelConfig{}, Phase::Decode);
    const auto no_dm = pass_remove_data_movement(g);
    CHECK(op_count_report(no_dm).count(OpTag::DataMovement) == 0);
    CHECK(no_dm.size() == g.size() - 8);
    CHECK(no_dm.is_acyclic());
    const auto merged = pass_merge_qkv(no_dm);
    CHECK(op_count_report(merged).count(OpKind::FusedQKVLinear) == 1);
    CHECK(op_count_report(merged).count(OpKind::Linear) == 4);
    // Merging before transposes are gone still works: q/k/v share one input.
    CHECK(op_count_report(pass_merge_qkv(g)).count(OpKind::FusedQKVLinear) == 1);
}

TEST_CASE("empty graph report is all zeros") {
    const auto r = op_count_report(OpGraph(Phase::Decode));
    CHECK(r.total == 0);
    for (auto c : r.by_kind) CHECK(c == 0);
    for (auto c : r.by_tag) CHECK(c == 0);
}

TEST_CASE("graph editing primitives") {
    OpGraph g(Phase::Decode);
    const int a = g.add(OpKind::Linear, "a", {}, {"x"});
    const int t = g.add(OpKind::Transpose, "t", {a});
    const int b = g.add(OpKind::Linear, "b", {t});
    CHECK(g.consumers(a) == std::vector<int>{t});
    g.bypass(t);
    CHECK(g.node(b).inputs == std::vector<int>{a});
    CHECK(g.size() == 2);
    const int c = g.contract({a, b}, OpKind::FusedQKVLinear, "ab");
    CHECK(g.size() == 1);
    CHECK(g.readers_of("x") == std::vector<int>{c});
    CHECK_THROWS(g.node(a));
}

TEST_CASE("fusion report matches the golden files") {
    const auto cfg = preset("llama2-13b");
    CHECK(reports::fusion_report(cfg, Phase::Decode).dump(2) + "\n" ==
          read_file(std::string(SEGKV_GOLDEN_DIR) + "/fusion_report_decode.json"));
    CHECK(reports::fusion_report(cfg, Phase::Prefill).dump(2) + "\n" ==
          read_file(std::string(SEGKV_GOLDEN_DIR) + "/fusion_report_prefill.json"));
    // Geometry does not change the operator graph.
    CHECK(reports::fusion_report(ModelConfig{}, Phase::Decode) == reports::fusion_report(cfg, Phase::Decode));
}
