#include "segkv/fusion_graph.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace segkv::graph {

const char* kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::Linear: return "Linear";
        case OpKind::RMSNormPrimitive: return "RMSNormPrimitive";
        case OpKind::RoPEPrimitive: return "RoPEPrimitive";
        case OpKind::BatchGeMM: return "BatchGeMM";
        case OpKind::Softmax: return "Softmax";
        case OpKind::Mask: return "Mask";
        case OpKind::Transpose: return "Transpose";
        case OpKind::Cat: return "Cat";
        case OpKind::IndexSelect: return "IndexSelect";
        case OpKind::ElementwiseAdd: return "ElementwiseAdd";
        case OpKind::ElementwiseMul: return "ElementwiseMul";
        case OpKind::Activation: return "Activation";
        case OpKind::FusedRMSNorm: return "FusedRMSNorm";
        case OpKind::FusedQKVLinear: return "FusedQKVLinear";
        case OpKind::FusedRoPE: return "FusedRoPE";
        case OpKind::FusedSDPA: return "FusedSDPA";
        case OpKind::LinearAddResidual: return "LinearAddResidual";
        case OpKind::LinearActivation: return "LinearActivation";
        case OpKind::LinearMul: return "LinearMul";
    }
    return "?";
}

const char* tag_name(OpTag tag) {
    switch (tag) {
        case OpTag::DataMovement: return "data-movement";
        case OpTag::ElementWise: return "element-wise";
        case OpTag::FusedModule: return "fused-module";
    }
    return "?";
}

const char* phase_name(Phase phase) { return phase == Phase::Prefill ? "prefill" : "decode"; }

std::vector<OpTag> tags_of(OpKind kind) {
    switch (kind) {
        case OpKind::Transpose:
        case OpKind::Cat:
        case OpKind::IndexSelect: return {OpTag::DataMovement};
        case OpKind::ElementwiseAdd:
        case OpKind::ElementwiseMul:
        case OpKind::Activation: return {OpTag::ElementWise};
        case OpKind::FusedRMSNorm:
        case OpKind::FusedQKVLinear:
        case OpKind::FusedRoPE:
        case OpKind::FusedSDPA:
        case OpKind::LinearAddResidual:
        case OpKind::LinearActivation:
        case OpKind::LinearMul: return {OpTag::FusedModule};
        default: return {};
    }
}

bool has_tag(OpKind kind, OpTag tag) {
    const auto tags = tags_of(kind);
    return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

int OpGraph::add(OpKind kind, std::string label, std::vector<int> inputs, std::vector<std::string> externals,
                 std::string module) {
    for (int in : inputs) (void)index_of(in);  // producers must already exist
    const int id = next_id_++;
    nodes_.push_back(OpNode{id, kind, std::move(label), std::move(module), std::move(inputs), std::move(externals)});
    return id;
}

std::size_t OpGraph::index_of(int id) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].id == id) return i;
    }
    throw std::out_of_range("no node with id " + std::to_string(id));
}

const OpNode& OpGraph::node(int id) const { return nodes_[index_of(id)]; }

std::vector<int> OpGraph::consumers(int id) const {
    std::vector<int> out;
    for (const auto& n : nodes_) {
        if (std::find(n.inputs.begin(), n.inputs.end(), id) != n.inputs.end()) out.push_back(n.id);
    }
    return out;
}

namespace {

template <typename T>
void append_unique(std::vector<T>& dst, const T& v) {
    if (std::find(dst.begin(), dst.end(), v) == dst.end()) dst.push_back(v);
}

// Kahn's algorithm, always taking the ready node that came first in the
// current order. Returns false if a cycle remains.
bool stable_topo_sort(std::vector<OpNode>& nodes) {
    std::vector<OpNode> sorted;
    std::vector<bool> done(nodes.size(), false);
    std::set<int> placed;
    while (sorted.size() < nodes.size()) {
        bool progressed = false;
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            if (done[i]) continue;
            const bool ready = std::all_of(nodes[i].inputs.begin(), nodes[i].inputs.end(),
                                           [&](int in) { return placed.count(in) > 0; });
            if (ready) {
                done[i] = true;
                placed.insert(nodes[i].id);
                sorted.push_back(nodes[i]);
                progressed = true;
                break;
            }
        }
        if (!progressed) return false;
    }
    nodes = std::move(sorted);
    return true;
}

}  // namespace

int OpGraph::contract(const std::vector<int>& group, OpKind kind, std::string label) {
    if (group.empty()) throw std::invalid_argument("contract: empty group");
    const std::set<int> members(group.begin(), group.end());
    std::size_t first = nodes_.size();
    OpNode fused{next_id_++, kind, std::move(label), {}, {}, {}};
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& n = nodes_[i];
        if (!members.count(n.id)) continue;
        first = std::min(first, i);
        for (int in : n.inputs) {
            if (!members.count(in)) append_unique(fused.inputs, in);
        }
        for (const auto& e : n.externals) append_unique(fused.externals, e);
    }
    if (first == nodes_.size()) throw std::out_of_range("contract: group has no nodes in graph");

    std::vector<OpNode> rebuilt;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (i == first) rebuilt.push_back(fused);
        auto n = nodes_[i];
        if (members.count(n.id)) continue;
        std::vector<int> inputs;
        for (int in : n.inputs) append_unique(inputs, members.count(in) ? fused.id : in);
        n.inputs = std::move(inputs);
        rebuilt.push_back(std::move(n));
    }
    if (!stable_topo_sort(rebuilt)) throw std::logic_error("contract: grouping introduces a cycle");
    nodes_ = std::move(rebuilt);
    return fused.id;
}

void OpGraph::bypass(int id) {
    const auto idx = index_of(id);
    const OpNode removed = nodes_[idx];
    nodes_.erase(nodes_.begin() + static_cast<std::ptrdiff_t>(idx));
    for (auto& n : nodes_) {
        const auto it = std::find(n.inputs.begin(), n.inputs.end(), id);
        if (it == n.inputs.end()) continue;
        std::vector<int> inputs;
        for (int in : n.inputs) {
            if (in == id) {
                for (int p : removed.inputs) append_unique(inputs, p);
            } else {
                append_unique(inputs, in);
            }
        }
        n.inputs = std::move(inputs);
        for (const auto& e : removed.externals) append_unique(n.externals, e);
    }
}

bool OpGraph::is_acyclic() const {
    auto copy = nodes_;
    return stable_topo_sort(copy);
}

std::vector<int> OpGraph::sinks() const {
    std::vector<int> out;
    for (const auto& n : nodes_) {
        if (consumers(n.id).empty()) out.push_back(n.id);
    }
    return out;
}

std::vector<int> OpGraph::readers_of(const std::string& external) const {
    std::vector<int> out;
    for (const auto& n : nodes_) {
        if (std::find(n.externals.begin(), n.externals.end(), external) != n.externals.end()) out.push_back(n.id);
    }
    return out;
}

namespace {

int add_rmsnorm_chain(OpGraph& g, const std::string& name, int input, const std::string& external) {
    std::vector<int> src_nodes;
    std::vector<std::string> src_ext;
    if (input >= 0) src_nodes.push_back(input); else src_ext.push_back(external);
    const auto K = OpKind::RMSNormPrimitive;
    const int pow = g.add(K, name + ".pow", src_nodes, src_ext, name);
    const int mean = g.add(K, name + ".mean", {pow}, {}, name);
    const int eps = g.add(K, name + ".add_eps", {mean}, {}, name);
    const int rsqrt = g.add(K, name + ".rsqrt", {eps}, {}, name);
    auto scale_in = src_nodes;
    scale_in.push_back(rsqrt);
    const int norm = g.add(K, name + ".mul", scale_in, src_ext, name);
    return g.add(K, name + ".mul_weight", {norm}, {"weight"}, name);
}

int add_rope_chain(OpGraph& g, const std::string& name, int input) {
    const std::string module = "attn.rope";
    const auto K = OpKind::RoPEPrimitive;
    const int cos = g.add(K, name + ".mul_cos", {input}, {"position_ids"}, module);
    const int rot = g.add(K, name + ".rotate_half", {input}, {}, module);
    const int sin = g.add(K, name + ".mul_sin", {rot}, {"position_ids"}, module);
    return g.add(K, name + ".add", {cos, sin}, {}, module);
}

}  // namespace

OpGraph build_standard_decoder_graph(const ModelConfig& config, Phase phase) {
    config.validate();
    OpGraph g(phase);
    const bool decode = phase == Phase::Decode;

    // Attention block.
    const int norm1 = add_rmsnorm_chain(g, "attn_norm", -1, "hidden");
    const int q = g.add(OpKind::Linear, "q_proj", {norm1});
    const int k = g.add(OpKind::Linear, "k_proj", {norm1});
    const int v = g.add(OpKind::Linear, "v_proj", {norm1});
    const int q_rot = add_rope_chain(g, "q_rope", q);
    const int k_rot = add_rope_chain(g, "k_rope", k);
    const int q_t = g.add(OpKind::Transpose, "transpose_q", {q_rot});
    int key = g.add(OpKind::Transpose, "transpose_k", {k_rot});
    int value = g.add(OpKind::Transpose, "transpose_v", {v});
    if (decode) {
        const int past_k = g.add(OpKind::IndexSelect, "index_select_past_key", {}, {"past_key", "beam_indices"});
        const int past_v = g.add(OpKind::IndexSelect, "index_select_past_value", {}, {"past_value", "beam_indices"});
        key = g.add(OpKind::Cat, "cat_key", {past_k, key});
        value = g.add(OpKind::Cat, "cat_value", {past_v, value});
    }
    const std::string sdpa = "attn.sdpa";
    const int scores = g.add(OpKind::BatchGeMM, "qk_matmul", {q_t, key}, {}, sdpa);
    const int masked = g.add(OpKind::Mask, "mask", {scores}, {"attention_mask"}, sdpa);
    const int probs = g.add(OpKind::Softmax, "softmax", {masked}, {}, sdpa);
    const int ctx = g.add(OpKind::BatchGeMM, "av_matmul", {probs, value}, {}, sdpa);
    const int ctx_t = g.add(OpKind::Transpose, "transpose_context", {ctx});
    const int o = g.add(OpKind::Linear, "o_proj", {ctx_t});
    const int resid1 = g.add(OpKind::ElementwiseAdd, "residual_attn", {o}, {"hidden"});

    // Feed-forward block.
    const int norm2 = add_rmsnorm_chain(g, "ffn_norm", resid1, "");
    const int gate = g.add(OpKind::Linear, "gate_proj", {norm2});
    const int act = g.add(OpKind::Activation, "silu", {gate});
    const int up = g.add(OpKind::Linear, "up_proj", {norm2});
    const int mul = g.add(OpKind::ElementwiseMul, "gate_mul", {act, up});
    const int down = g.add(OpKind::Linear, "down_proj", {mul});
    g.add(OpKind::ElementwiseAdd, "residual_ffn", {down, resid1});
    return g;
}

OpGraph pass_remove_data_movement(OpGraph g) {
    // Segment cache + batch-first SDPA make every layout/concat/gather node
    // redundant; their consumers read the producers directly.
    for (;;) {
        const auto& nodes = g.nodes();
        const auto it = std::find_if(nodes.begin(), nodes.end(),
                                     [](const OpNode& n) { return has_tag(n.kind, OpTag::DataMovement); });
        if (it == nodes.end()) break;
        g.bypass(it->id);
    }
    return g;
}

OpGraph pass_merge_qkv(OpGraph g) {
    std::vector<int> group;
    for (const char* label : {"q_proj", "k_proj", "v_proj"}) {
        for (const auto& n : g.nodes()) {
            if (n.kind == OpKind::Linear && n.label == label) group.push_back(n.id);
        }
    }
    if (group.size() != 3) return g;
    const auto& first = g.node(group[0]);
    for (int id : group) {
        if (g.node(id).inputs != first.inputs) return g;
    }
    g.contract(group, OpKind::FusedQKVLinear, "qkv_proj");
    return g;
}

OpGraph pass_collapse_chains(OpGraph g) {
    auto fused_kind = [](OpKind k) -> std::optional<OpKind> {
        switch (k) {
            case OpKind::RMSNormPrimitive: return OpKind::FusedRMSNorm;
            case OpKind::RoPEPrimitive: return OpKind::FusedRoPE;
            case OpKind::BatchGeMM:
            case OpKind::Mask:
            case OpKind::Softmax: return OpKind::FusedSDPA;
            default: return std::nullopt;
        }
    };
    for (;;) {
        const auto& nodes = g.nodes();
        const auto seed = std::find_if(nodes.begin(), nodes.end(), [&](const OpNode& n) {
            return fused_kind(n.kind).has_value() && !n.module.empty();
        });
        if (seed == nodes.end()) break;
        const std::string module = seed->module;
        const OpKind target = *fused_kind(seed->kind);
        std::vector<int> group;
        for (const auto& n : nodes) {
            if (n.module == module && fused_kind(n.kind) == target) group.push_back(n.id);
        }
        g.contract(group, target, module);
    }
    return g;
}

OpGraph pass_absorb_elementwise(OpGraph g) {
    auto fused_kind = [](OpKind k) {
        switch (k) {
            case OpKind::ElementwiseAdd: return OpKind::LinearAddResidual;
            case OpKind::Activation: return OpKind::LinearActivation;
            default: return OpKind::LinearMul;
        }
    };
    for (bool changed = true; changed;) {
        changed = false;
        for (const auto& n : g.nodes()) {
            if (!has_tag(n.kind, OpTag::ElementWise)) continue;
            const auto producer = std::find_if(n.inputs.begin(), n.inputs.end(), [&](int in) {
                return g.node(in).kind == OpKind::Linear && g.consumers(in) == std::vector<int>{n.id};
            });
            if (producer == n.inputs.end()) continue;
            const int linear_id = *producer;
            const int ew_id = n.id;
            const OpKind kind = fused_kind(n.kind);
            const std::string label = g.node(linear_id).label + "+" + n.label;
            g.contract({linear_id, ew_id}, kind, label);
            changed = true;
            break;
        }
    }
    return g;
}

OpGraph apply_fusion_passes(OpGraph g) {
    g = pass_remove_data_movement(std::move(g));
    g = pass_merge_qkv(std::move(g));
    g = pass_collapse_chains(std::move(g));
    g = pass_absorb_elementwise(std::move(g));
    return g;
}

OpCountReport op_count_report(const OpGraph& g) {
    OpCountReport r;
    r.phase = g.phase();
    for (const auto& n : g.nodes()) {
        ++r.by_kind[static_cast<std::size_t>(n.kind)];
        for (auto t : tags_of(n.kind)) ++r.by_tag[static_cast<std::size_t>(t)];
    }
    r.total = static_cast<std::int64_t>(g.size());
    return r;
}

nlohmann::ordered_json report_json(const OpGraph& g) {
    const auto counts = op_count_report(g);
    nlohmann::ordered_json j;
    j["phase"] = phase_name(g.phase());
    auto nodes = nlohmann::ordered_json::array();
    for (const auto& n : g.nodes()) {
        nlohmann::ordered_json entry;
        entry["kind"] = kind_name(n.kind);
        auto tags = nlohmann::ordered_json::array();
        for (auto t : tags_of(n.kind)) tags.push_back(tag_name(t));
        entry["tags"] = tags;
        nodes.push_back(std::move(entry));
    }
    j["nodes"] = std::move(nodes);
    nlohmann::ordered_json by_kind, by_tag;
    for (std::size_t k = 0; k < kNumOpKinds; ++k) by_kind[kind_name(static_cast<OpKind>(k))] = counts.by_kind[k];
    for (std::size_t t = 0; t < kNumOpTags; ++t) by_tag[tag_name(static_cast<OpTag>(t))] = counts.by_tag[t];
    j["counts"]["by_kind"] = std::move(by_kind);
    j["counts"]["by_tag"] = std::move(by_tag);
    j["total"] = counts.total;
    return j;
}

}  // namespace segkv::graph
