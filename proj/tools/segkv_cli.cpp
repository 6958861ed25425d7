// segkv: memory simulation, generation, benchmark, fusion report, verification.
//
// Exit codes: 0 success, 1 runtime failure (including failed verification),
// 2 usage or input error.

#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "segkv/acceptance.hpp"
#include "segkv/reports.hpp"

namespace {

using namespace segkv;

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct ConfigFlags {
    std::string model = "toy";
    std::optional<std::int64_t> layers, heads, head_dim, ff, vocab, dtype_bytes;

    void add_to(CLI::App& app, bool model_flag = true) {
        if (model_flag) app.add_option("--model", model, "preset name or 'toy'")->capture_default_str();
        app.add_option("--L,--layers", layers, "override layer count");
        app.add_option("--H,--heads", heads, "override head count");
        app.add_option("--D,--head-dim", head_dim, "override head dim");
        app.add_option("--ff", ff, "override MLP width");
        app.add_option("--vocab", vocab, "override vocabulary size");
        app.add_option("--dtype-bytes", dtype_bytes, "bytes per cached element");
    }

    ModelConfig resolve(const std::string& name) const {
        ModelConfig c = name == "toy" ? ModelConfig{} : preset(name);
        if (layers) c.layers = *layers;
        if (heads) c.heads = *heads;
        if (head_dim) c.head_dim = *head_dim;
        if (ff) c.ff_dim = *ff;
        if (vocab) c.vocab = *vocab;
        if (dtype_bytes) c.dtype_bytes = *dtype_bytes;
        c.validate();
        return c;
    }
    ModelConfig resolve() const { return resolve(model); }
};

void write_output(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << text;
}

reports::EngineChoice parse_engine(const std::string& s) {
    if (s == "optimized") return reports::EngineChoice::Optimized;
    if (s == "reference") return reports::EngineChoice::Reference;
    if (s == "both") return reports::EngineChoice::Both;
    throw UsageError("unknown engine '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Segment KV cache inference runtime"};
    app.require_subcommand(1);

    // memsim
    auto* memsim = app.add_subcommand("memsim", "standard vs segment KV cache bytes");
    std::vector<std::string> ms_models{"gptj-6b"};
    std::vector<std::int64_t> ms_bs{32};
    std::int64_t ms_bw = 4, ms_np = 1024, ms_nr = 1024;
    std::string ms_format = "csv", ms_out;
    ConfigFlags ms_cfg;
    memsim->add_option("--model", ms_models, "presets (repeatable), or 'all'")->capture_default_str();
    ms_cfg.add_to(*memsim, false);
    memsim->add_option("--bs", ms_bs, "batch sizes (repeatable)")->capture_default_str();
    memsim->add_option("--bw", ms_bw)->capture_default_str();
    memsim->add_option("--n-prompt", ms_np)->capture_default_str();
    memsim->add_option("--n-response", ms_nr)->capture_default_str();
    memsim->add_option("--format", ms_format)->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    memsim->add_option("--out", ms_out, "output path (stdout if omitted)");

    // gen
    auto* gen = app.add_subcommand("gen", "generate tokens with a toy model");
    ConfigFlags g_cfg;
    g_cfg.add_to(*gen);
    std::string g_prompt_file, g_mode = "greedy", g_engine = "both", g_out, g_weights, g_save_weights;
    std::optional<std::int64_t> g_random;
    std::int64_t g_bs = 1, g_bw = 1, g_nr = 16;
    std::uint64_t g_seed = 0;
    auto* g_src = gen->add_option("--prompt-file", g_prompt_file, "token ids, one batch item per line")
                      ->check(CLI::ExistingFile);
    gen->add_option("--random", g_random, "random prompt of N tokens")->excludes(g_src);
    gen->add_option("--bs", g_bs, "batch size for --random")->capture_default_str();
    gen->add_option("--mode", g_mode)->check(CLI::IsMember({"greedy", "beam"}))->capture_default_str();
    gen->add_option("--bw", g_bw)->capture_default_str();
    gen->add_option("--n-response", g_nr)->capture_default_str();
    gen->add_option("--seed", g_seed)->capture_default_str();
    gen->add_option("--engine", g_engine)->check(CLI::IsMember({"optimized", "reference", "both"}))
        ->capture_default_str();
    gen->add_option("--weights", g_weights, "load weights instead of seeding them")->check(CLI::ExistingFile);
    gen->add_option("--save-weights", g_save_weights, "write the weights used");
    gen->add_option("--out", g_out);

    // bench
    auto* bench = app.add_subcommand("bench", "largest batch under a byte budget, then a timed run");
    std::string b_model = "gptj-6b", b_engine = "optimized", b_out;
    ConfigFlags b_exec;
    std::uint64_t b_budget = 64'000'000'000ULL, b_seed = 0;
    std::int64_t b_bw = 4, b_np = 1024, b_nr = 128;
    bench->add_option("--model", b_model, "preset used for the byte accounting")->capture_default_str();
    b_exec.add_to(*bench, false);
    bench->add_option("--budget-bytes", b_budget)->capture_default_str();
    bench->add_option("--bw", b_bw)->capture_default_str();
    bench->add_option("--n-prompt", b_np)->capture_default_str();
    bench->add_option("--n-response", b_nr)->capture_default_str();
    bench->add_option("--seed", b_seed)->capture_default_str();
    bench->add_option("--engine", b_engine)->check(CLI::IsMember({"optimized", "reference"}))->capture_default_str();
    bench->add_option("--out", b_out);
    bench->footer("--L/--H/--D/--ff/--vocab describe the toy model that is actually timed.");

    // fusion-report
    auto* fusion = app.add_subcommand("fusion-report", "operator counts before and after fusion");
    ConfigFlags f_cfg;
    f_cfg.model = "llama2-13b";
    std::string f_phase = "decode", f_out;
    f_cfg.add_to(*fusion);
    fusion->add_option("--phase", f_phase)->check(CLI::IsMember({"prefill", "decode"}))->capture_default_str();
    fusion->add_option("--out", f_out);

    // verify
    auto* verify = app.add_subcommand("verify", "run the acceptance suite");
    bool v_quick = false, v_full = false;
    auto* q = verify->add_flag("--quick", v_quick, "cap random cases at 20");
    verify->add_flag("--full", v_full, "full case counts (default)")->excludes(q);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*memsim) {
            std::vector<ModelConfig> models;
            for (const auto& m : ms_models) {
                if (m == "all") {
                    for (const auto& n : preset_names()) models.push_back(ms_cfg.resolve(n));
                } else {
                    models.push_back(ms_cfg.resolve(m));
                }
            }
            const auto rows = reports::memsim(models, ms_bs, ms_bw, ms_np, ms_nr);
            write_output(ms_format == "csv" ? reports::memsim_csv(rows) : reports::memsim_json(rows).dump(2) + "\n",
                         ms_out);
        } else if (*gen) {
            const auto weights = g_weights.empty() ? make_toy_weights(g_cfg.resolve(), g_seed) : load_weights(g_weights);
            if (!g_save_weights.empty()) save_weights(g_save_weights, weights);
            GenerationRequest req;
            if (!g_prompt_file.empty()) {
                req.prompt = reports::read_prompt_file(g_prompt_file);
            } else {
                req.prompt = reports::random_prompt(g_bs, g_random.value_or(8), weights.config.vocab, g_seed);
            }
            req.mode = g_mode == "beam" ? DecodeMode::Beam : DecodeMode::Greedy;
            req.bw = g_bw;
            req.n_response = g_nr;
            req.seed = g_seed;
            req.validate(weights.config);
            write_output(reports::gen(weights, req, parse_engine(g_engine)).dump(2) + "\n", g_out);
        } else if (*bench) {
            auto exec = b_exec.resolve("toy");
            const auto report = reports::bench(preset(b_model), exec, b_budget, b_bw, b_np, b_nr, b_seed,
                                               parse_engine(b_engine));
            write_output(reports::bench_json(report).dump(2) + "\n", b_out);
        } else if (*fusion) {
            const auto phase = f_phase == "prefill" ? graph::Phase::Prefill : graph::Phase::Decode;
            write_output(reports::fusion_report(f_cfg.resolve(), phase).dump(2) + "\n", f_out);
        } else if (*verify) {
            const auto opt = v_quick ? acceptance::Options::quick() : acceptance::Options::full();
            const auto results = acceptance::run_all(opt, &std::cout);
            const bool ok = acceptance::all_passed(results);
            std::cout << (ok ? "all criteria passed" : "some criteria FAILED") << '\n';
            return ok ? 0 : 1;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
