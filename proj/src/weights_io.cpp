#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "segkv/engine.hpp"

namespace segkv {

static_assert(std::endian::native == std::endian::little, "weight blobs are written in host order");

nlohmann::ordered_json config_to_json(const ModelConfig& c) {
    nlohmann::ordered_json j;
    j["name"] = c.name;
    j["layers"] = c.layers;
    j["heads"] = c.heads;
    j["head_dim"] = c.head_dim;
    j["ff_dim"] = c.ff_dim;
    j["vocab"] = c.vocab;
    j["max_pos"] = c.max_pos;
    j["rope_theta"] = c.rope_theta;
    j["rope_style"] = c.rope_style == RopeStyle::HalfRotation ? "half-rotation" : "interleaved";
    j["step"] = c.step;
    j["dtype_bytes"] = c.dtype_bytes;
    j["norm_eps"] = c.norm_eps;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.name = j.at("name").get<std::string>();
    c.layers = j.at("layers").get<std::int64_t>();
    c.heads = j.at("heads").get<std::int64_t>();
    c.head_dim = j.at("head_dim").get<std::int64_t>();
    c.ff_dim = j.at("ff_dim").get<std::int64_t>();
    c.vocab = j.at("vocab").get<std::int64_t>();
    c.max_pos = j.at("max_pos").get<std::int64_t>();
    c.rope_theta = j.at("rope_theta").get<double>();
    const auto style = j.at("rope_style").get<std::string>();
    if (style == "half-rotation") {
        c.rope_style = RopeStyle::HalfRotation;
    } else if (style == "interleaved") {
        c.rope_style = RopeStyle::Interleaved;
    } else {
        throw std::invalid_argument("unknown rope_style '" + style + "'");
    }
    c.step = j.at("step").get<std::int64_t>();
    c.dtype_bytes = j.at("dtype_bytes").get<std::int64_t>();
    c.norm_eps = j.at("norm_eps").get<float>();
    c.validate();
    return c;
}

namespace {

std::vector<std::pair<std::string, Tensor*>> manifest(ToyWeights& w) {
    std::vector<std::pair<std::string, Tensor*>> out{{"embedding", &w.embedding}};
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        auto& lw = w.layers[l];
        const auto p = "layers." + std::to_string(l) + ".";
        out.emplace_back(p + "rmsnorm_1", &lw.rmsnorm_1);
        out.emplace_back(p + "rmsnorm_2", &lw.rmsnorm_2);
        out.emplace_back(p + "w_qkv", &lw.w_qkv);
        out.emplace_back(p + "w_o", &lw.w_o);
        out.emplace_back(p + "w_gate", &lw.w_gate);
        out.emplace_back(p + "w_up", &lw.w_up);
        out.emplace_back(p + "w_down", &lw.w_down);
    }
    out.emplace_back("final_norm", &w.final_norm);
    out.emplace_back("lm_head", &w.lm_head);
    return out;
}

}  // namespace

void save_weights(const std::string& path, const ToyWeights& weights) {
    weights.validate();
    auto copy = weights;
    nlohmann::ordered_json header;
    header["config"] = config_to_json(weights.config);
    header["seed"] = weights.seed;
    auto tensors = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    const auto entries = manifest(copy);
    for (const auto& [name, t] : entries) {
        nlohmann::ordered_json e;
        e["name"] = name;
        e["shape"] = t->shape();
        e["offset"] = offset;
        tensors.push_back(std::move(e));
        offset += static_cast<std::uint64_t>(t->size()) * sizeof(float);
    }
    header["tensors"] = std::move(tensors);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << header.dump() << '\n';
    for (const auto& [name, t] : entries) {
        out.write(reinterpret_cast<const char*>(t->ptr()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

ToyWeights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("'" + path + "': missing header");
    const auto header = nlohmann::json::parse(line);
    const std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    ToyWeights w;
    w.config = config_from_json(header.at("config"));
    w.seed = header.at("seed").get<std::uint64_t>();
    w.layers.resize(static_cast<std::size_t>(w.config.layers));
    auto entries = manifest(w);
    const auto& tensors = header.at("tensors");
    if (tensors.size() != entries.size()) throw std::runtime_error("'" + path + "': tensor manifest size mismatch");
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = tensors[i];
        if (e.at("name").get<std::string>() != entries[i].first) {
            throw std::runtime_error("'" + path + "': expected tensor " + entries[i].first);
        }
        const auto shape = e.at("shape").get<Shape>();
        const auto offset = e.at("offset").get<std::uint64_t>();
        const auto bytes = static_cast<std::uint64_t>(numel(shape)) * sizeof(float);
        if (offset + bytes > blob.size()) throw std::runtime_error("'" + path + "': truncated blob");
        std::vector<float> data(static_cast<std::size_t>(numel(shape)));
        std::memcpy(data.data(), blob.data() + offset, bytes);
        *entries[i].second = Tensor(shape, std::move(data));
    }
    w.validate();
    return w;
}

}  // namespace segkv
