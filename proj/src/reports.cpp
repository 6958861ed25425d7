#include "segkv/reports.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

namespace segkv::reports {

std::string format_gb(std::uint64_t bytes, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f GB", decimals, static_cast<double>(bytes) / 1e9);
    return buf;
}

std::vector<MemsimRow> memsim(const std::vector<ModelConfig>& models, const std::vector<std::int64_t>& bs_list,
                              std::int64_t bw, std::int64_t n_prompt, std::int64_t n_response) {
    std::vector<MemsimRow> rows;
    for (const auto& m : models) {
        m.validate();
        for (auto bs : bs_list) {
            const CacheShapeParams p{bs, bw, n_prompt, n_response};
            MemsimRow r;
            r.model = m.name;
            r.bs = bs;
            r.bw = bw;
            r.n_prompt = n_prompt;
            r.n_response = n_response;
            r.dtype_bytes = m.dtype_bytes;
            r.standard_bytes = standard_cache_bytes(m, p);
            r.segment_bytes = segment_cache_bytes(m, p);
            r.ratio = r.standard_bytes == 0
                          ? 0.0
                          : static_cast<double>(r.segment_bytes) / static_cast<double>(r.standard_bytes);
            // Rounding can make the segment cache larger for BW = 1.
            r.saving_bytes = r.standard_bytes > r.segment_bytes ? r.standard_bytes - r.segment_bytes : 0;
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::string memsim_csv(const std::vector<MemsimRow>& rows) {
    std::ostringstream os;
    os << kMemsimCsvHeader << '\n';
    char ratio[32];
    for (const auto& r : rows) {
        std::snprintf(ratio, sizeof ratio, "%.6f", r.ratio);
        os << r.model << ',' << r.bs << ',' << r.bw << ',' << r.n_prompt << ',' << r.n_response << ','
           << r.dtype_bytes << ',' << r.standard_bytes << ',' << r.segment_bytes << ',' << ratio << ','
           << r.saving_bytes << '\n';
    }
    return os.str();
}

nlohmann::ordered_json memsim_json(const std::vector<MemsimRow>& rows) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : rows) {
        nlohmann::ordered_json j;
        j["model"] = r.model;
        j["BS"] = r.bs;
        j["BW"] = r.bw;
        j["N_prompt"] = r.n_prompt;
        j["N_response"] = r.n_response;
        j["dtype_bytes"] = r.dtype_bytes;
        j["standard_bytes"] = r.standard_bytes;
        j["segment_bytes"] = r.segment_bytes;
        j["ratio"] = r.ratio;
        j["saving_bytes"] = r.saving_bytes;
        j["standard_gb"] = format_gb(r.standard_bytes);
        j["segment_gb"] = format_gb(r.segment_bytes);
        j["saving_gb"] = format_gb(r.saving_bytes, 1);
        arr.push_back(std::move(j));
    }
    return arr;
}

std::int64_t max_batch_size(CachePolicy policy, const ModelConfig& config, std::int64_t bw, std::int64_t n_prompt,
                            std::int64_t n_response, std::uint64_t budget_bytes) {
    const CacheShapeParams one{1, bw, n_prompt, n_response};
    const auto per_bs =
        policy == CachePolicy::Segment ? segment_cache_bytes(config, one) : standard_cache_bytes(config, one);
    if (per_bs == 0) throw std::invalid_argument("max_batch_size: zero-size cache per batch item");
    // Both formulas are linear in BS.
    return static_cast<std::int64_t>(budget_bytes / per_bs);
}

BenchReport bench(const ModelConfig& accounting, const ModelConfig& exec_config, std::uint64_t budget_bytes,
                  std::int64_t bw, std::int64_t n_prompt, std::int64_t n_response, std::uint64_t seed,
                  EngineChoice engine) {
    if (budget_bytes == 0) throw std::invalid_argument("bench: budget must be > 0");
    if (engine == EngineChoice::Both) throw std::invalid_argument("bench: pick one engine");
    const bool optimized = engine == EngineChoice::Optimized;
    BenchReport r;
    r.model = accounting.name;
    r.engine = optimized ? "optimized" : "reference";
    r.bw = bw;
    r.n_prompt = n_prompt;
    r.n_response = n_response;
    r.budget_bytes = budget_bytes;
    r.bs_max_segment = max_batch_size(CachePolicy::Segment, accounting, bw, n_prompt, n_response, budget_bytes);
    r.bs_max_standard = max_batch_size(CachePolicy::Standard, accounting, bw, n_prompt, n_response, budget_bytes);
    r.bs_max = optimized ? r.bs_max_segment : r.bs_max_standard;
    if (r.bs_max < 1) {
        const CacheShapeParams one{1, bw, n_prompt, n_response};
        const auto need = optimized ? segment_cache_bytes(accounting, one) : standard_cache_bytes(accounting, one);
        throw std::invalid_argument("bench: budget of " + std::to_string(budget_bytes) +
                                    " bytes does not fit BS = 1 (needs " + std::to_string(need) + ")");
    }
    r.bs = r.bs_max;
    r.exec_model = exec_config.name;

    const auto weights = make_toy_weights(exec_config, seed);
    GenerationRequest req;
    req.prompt = random_prompt(r.bs, n_prompt, exec_config.vocab, seed);
    req.n_response = n_response;
    req.mode = bw > 1 ? DecodeMode::Beam : DecodeMode::Greedy;
    req.bw = bw;
    req.seed = seed;
    const auto result = optimized ? generate(weights, req) : reference_generate(weights, req);
    r.first_token_latency_ms = result.timing.first_token_ms;
    r.next_token_latency_ms = result.timing.next_token_ms;
    r.total_latency_s = result.timing.total_ms / 1e3;
    r.throughput_tokens_per_s = static_cast<double>(r.bs_max * n_response) / r.total_latency_s;
    return r;
}

nlohmann::ordered_json bench_json(const BenchReport& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    j["BS"] = r.bs;
    j["BW"] = r.bw;
    j["N_prompt"] = r.n_prompt;
    j["N_response"] = r.n_response;
    j["budget_bytes"] = r.budget_bytes;
    j["engine"] = r.engine;
    j["BS_max"] = r.bs_max;
    j["BS_max_segment"] = r.bs_max_segment;
    j["BS_max_standard"] = r.bs_max_standard;
    j["exec_model"] = r.exec_model;
    j["first_token_latency_ms"] = r.first_token_latency_ms;
    j["next_token_latency_ms"] = r.next_token_latency_ms;
    j["total_latency_s"] = r.total_latency_s;
    j["throughput_tokens_per_s"] = r.throughput_tokens_per_s;
    return j;
}

nlohmann::ordered_json fusion_report(const ModelConfig& config, graph::Phase phase) {
    const auto standard = graph::build_standard_decoder_graph(config, phase);
    const auto optimized = graph::apply_fusion_passes(standard);
    nlohmann::ordered_json j;
    j["standard"] = graph::report_json(standard);
    j["optimized"] = graph::report_json(optimized);
    return j;
}

std::vector<std::vector<std::int64_t>> random_prompt(std::int64_t bs, std::int64_t n, std::int64_t vocab,
                                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::int64_t> dist(0, vocab - 1);
    std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(bs));
    for (auto& row : out) {
        row.resize(static_cast<std::size_t>(n));
        for (auto& t : row) t = dist(rng);
    }
    return out;
}

std::vector<std::vector<std::int64_t>> read_prompt_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open prompt file '" + path + "'");
    std::vector<std::vector<std::int64_t>> out;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::vector<std::int64_t> row;
        std::string tok;
        while (ls >> tok) {
            std::size_t used = 0;
            const auto v = std::stoll(tok, &used);
            if (used != tok.size()) throw std::invalid_argument("prompt file: bad token '" + tok + "'");
            row.push_back(v);
        }
        if (!row.empty()) out.push_back(std::move(row));
    }
    if (out.empty()) throw std::invalid_argument("prompt file '" + path + "' has no tokens");
    return out;
}

namespace {

nlohmann::ordered_json counters_json(const OpCounters& c) {
    nlohmann::ordered_json j;
    j["layout_conversions"] = c.layout_conversions;
    j["transposes"] = c.transposes;
    j["cat"] = c.cats;
    j["index_select"] = c.index_selects;
    return j;
}

nlohmann::ordered_json result_json(const GenerationResult& r) {
    nlohmann::ordered_json j;
    j["tokens"] = r.tokens;
    j["decode_counters"] = counters_json(r.counters);
    nlohmann::ordered_json mem;
    mem["prompt_cache_bytes"] = r.prompt_cache_bytes;
    mem["final_cache_bytes"] = r.cache_bytes.empty() ? 0 : r.cache_bytes.back();
    mem["peak_reserved"] = r.memory.peak_reserved;
    mem["final_active"] = r.memory.final_active;
    mem["fragmentation"] = r.memory.fragmentation;
    j["memory"] = std::move(mem);
    return j;
}

nlohmann::ordered_json timing_json(const GenerationTiming& t) {
    nlohmann::ordered_json j;
    j["first_token_ms"] = t.first_token_ms;
    j["next_token_ms"] = t.next_token_ms;
    j["total_ms"] = t.total_ms;
    return j;
}

}  // namespace

nlohmann::ordered_json gen(const ToyWeights& weights, const GenerationRequest& request, EngineChoice engine) {
    nlohmann::ordered_json j;
    j["config"] = config_to_json(weights.config);
    nlohmann::ordered_json req;
    req["BS"] = request.bs();
    req["BW"] = request.bw;
    req["mode"] = request.mode == DecodeMode::Greedy ? "greedy" : "beam";
    req["N_prompt"] = request.n_prompt();
    req["N_response"] = request.n_response;
    req["seed"] = request.seed;
    j["request"] = std::move(req);

    nlohmann::ordered_json timing;
    std::optional<GenerationResult> opt, ref;
    if (engine != EngineChoice::Reference) opt = generate(weights, request);
    if (engine != EngineChoice::Optimized) ref = reference_generate(weights, request);
    if (opt) {
        j["optimized"] = result_json(*opt);
        timing["optimized"] = timing_json(opt->timing);
    }
    if (ref) {
        j["reference"] = result_json(*ref);
        timing["reference"] = timing_json(ref->timing);
    }
    if (opt && ref) j["match"] = opt->tokens == ref->tokens;
    j["timing"] = std::move(timing);
    return j;
}

}  // namespace segkv::reports
