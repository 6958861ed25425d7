#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "segkv/model_ops.hpp"

namespace segkv::graph {

enum class OpKind {
    Linear,
    RMSNormPrimitive,
    RoPEPrimitive,
    BatchGeMM,
    Softmax,
    Mask,
    Transpose,
    Cat,
    IndexSelect,
    ElementwiseAdd,
    ElementwiseMul,
    Activation,
    FusedRMSNorm,
    FusedQKVLinear,
    FusedRoPE,
    FusedSDPA,
    LinearAddResidual,
    LinearActivation,
    LinearMul,
};
inline constexpr std::size_t kNumOpKinds = 19;

enum class OpTag { DataMovement, ElementWise, FusedModule };
inline constexpr std::size_t kNumOpTags = 3;

enum class Phase { Prefill, Decode };

const char* kind_name(OpKind kind);
const char* tag_name(OpTag tag);
const char* phase_name(Phase phase);
std::vector<OpTag> tags_of(OpKind kind);
bool has_tag(OpKind kind, OpTag tag);

struct OpNode {
    int id = 0;
    OpKind kind = OpKind::Linear;
    std::string label;    // e.g. "q_proj", "rmsnorm_1.rsqrt"
    std::string module;   // primitive chain this node belongs to ("attn.sdpa"), empty if none
    std::vector<int> inputs;              // producer node ids
    std::vector<std::string> externals;   // graph inputs read: "hidden", "past_key", ...

    bool operator==(const OpNode&) const = default;
};

// One decoder layer. Nodes are kept in a deterministic topological order;
// ids are stable handles, not positions.
class OpGraph {
public:
    explicit OpGraph(Phase phase) : phase_(phase) {}

    Phase phase() const { return phase_; }
    const std::vector<OpNode>& nodes() const { return nodes_; }
    std::size_t size() const { return nodes_.size(); }

    int add(OpKind kind, std::string label, std::vector<int> inputs,
            std::vector<std::string> externals = {}, std::string module = {});

    const OpNode& node(int id) const;
    std::vector<int> consumers(int id) const;

    // Replace `group` with a single node of `kind`. The new node reads every
    // input of the group that comes from outside it and feeds every consumer
    // of any member. Placed at the position of the earliest member.
    int contract(const std::vector<int>& group, OpKind kind, std::string label);

    // Drop a node, forwarding its producers and externals to its consumers.
    void bypass(int id);

    bool is_acyclic() const;
    std::vector<int> sinks() const;
    std::vector<int> readers_of(const std::string& external) const;

    bool operator==(const OpGraph&) const = default;

private:
    std::size_t index_of(int id) const;

    Phase phase_;
    std::vector<OpNode> nodes_;
    int next_id_ = 0;
};

// Llama-style decoder layer as executed by an unfused framework: primitive
// RMSNorm/RoPE/SDPA chains, separate Q/K/V projections, layout transposes,
// and (decode only) index-select + cat on the past key/value.
OpGraph build_standard_decoder_graph(const ModelConfig& config, Phase phase);

// Layout propagation, QKV merge, primitive-chain collapse, element-wise
// absorption, in that order. Idempotent.
OpGraph apply_fusion_passes(OpGraph g);

// Individual passes, exposed for testing.
OpGraph pass_remove_data_movement(OpGraph g);
OpGraph pass_merge_qkv(OpGraph g);
OpGraph pass_collapse_chains(OpGraph g);
OpGraph pass_absorb_elementwise(OpGraph g);

struct OpCountReport {
    Phase phase = Phase::Decode;
    std::array<std::int64_t, kNumOpKinds> by_kind{};
    std::array<std::int64_t, kNumOpTags> by_tag{};
    std::int64_t total = 0;

    std::int64_t count(OpKind k) const { return by_kind[static_cast<std::size_t>(k)]; }
    std::int64_t count(OpTag t) const { return by_tag[static_cast<std::size_t>(t)]; }
};

OpCountReport op_count_report(const OpGraph& g);

// {phase, nodes:[{kind, tags}], counts:{by_kind, by_tag}, total}
nlohmann::ordered_json report_json(const OpGraph& g);

}  // namespace segkv::graph
