// OpenMP kernels against their serial counterparts and the materializing
// oracles. Run with OMP_NUM_THREADS to vary the thread count.

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

#include "segkv/engine.hpp"
#include "segkv/model_ops.hpp"
#include "segkv/reports.hpp"
#include "segkv/sdpa.hpp"

using namespace segkv;

namespace {

struct DecodeFixture {
    Tensor q, pk, pv, rk, rv;
    BeamIndices idx;
    std::int64_t nr;

    // args: BS, BW, N_prompt, N_response; H = 8, D = 64.
    explicit DecodeFixture(const benchmark::State& st)
        : nr(st.range(3)) {
        const auto bs = st.range(0), bw = st.range(1), np = st.range(2);
        const std::int64_t h = 8, d = 64;
        q = Tensor::random({1, bs * bw, h, d}, {1, 1.0f}, Layout::SequenceFirst);
        pk = Tensor::random({bs, np, h, d}, {2, 1.0f}, Layout::BatchFirst);
        pv = Tensor::random({bs, np, h, d}, {3, 1.0f}, Layout::BatchFirst);
        rk = Tensor::random({nr, bs * bw, h, d}, {4, 1.0f}, Layout::SequenceFirst);
        rv = Tensor::random({nr, bs * bw, h, d}, {5, 1.0f}, Layout::SequenceFirst);
        idx = BeamIndices(bs, bw, nr);
        std::mt19937_64 rng(6);
        for (std::int64_t b = 0; b < bs; ++b)
            for (std::int64_t w = 0; w < bw; ++w)
                for (std::int64_t t = 0; t < nr; ++t)
                    idx.at(b, w, t) = std::uniform_int_distribution<std::int64_t>(0, bw - 1)(rng);
    }

    SdpaDecodeInputs inputs() const { return {q, pk, pv, rk, rv, nr, idx, 0.125f}; }
};

void decode_args(benchmark::internal::Benchmark* b) {
    b->Args({4, 4, 256, 64})->Args({8, 4, 1024, 128})->Unit(benchmark::kMicrosecond);
}

void BM_SdpaDecodeFusedParallel(benchmark::State& st) {
    const DecodeFixture f(st);
    for (auto _ : st) benchmark::DoNotOptimize(sdpa_decode_fused(f.inputs(), Exec::Parallel));
}
BENCHMARK(BM_SdpaDecodeFusedParallel)->Apply(decode_args);

void BM_SdpaDecodeFusedSerial(benchmark::State& st) {
    const DecodeFixture f(st);
    for (auto _ : st) benchmark::DoNotOptimize(sdpa_decode_fused(f.inputs(), Exec::Serial));
}
BENCHMARK(BM_SdpaDecodeFusedSerial)->Apply(decode_args);

void BM_SdpaDecodeOracle(benchmark::State& st) {
    const DecodeFixture f(st);
    for (auto _ : st) benchmark::DoNotOptimize(sdpa_decode_oracle(f.inputs()));
}
BENCHMARK(BM_SdpaDecodeOracle)->Apply(decode_args);

void prefill_bench(benchmark::State& st, Exec exec) {
    const auto bs = st.range(0), n = st.range(1);
    const std::int64_t h = 8, d = 64;
    const auto q = Tensor::random({bs, n, h, d}, {1, 1.0f}, Layout::BatchFirst);
    const auto k = Tensor::random({bs, n, h, d}, {2, 1.0f}, Layout::BatchFirst);
    const auto v = Tensor::random({bs, n, h, d}, {3, 1.0f}, Layout::BatchFirst);
    for (auto _ : st) benchmark::DoNotOptimize(sdpa_prefill(q, k, v, true, exec));
}
void BM_SdpaPrefillParallel(benchmark::State& st) { prefill_bench(st, Exec::Parallel); }
void BM_SdpaPrefillSerial(benchmark::State& st) { prefill_bench(st, Exec::Serial); }
BENCHMARK(BM_SdpaPrefillParallel)->Args({2, 256})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SdpaPrefillSerial)->Args({2, 256})->Unit(benchmark::kMillisecond);

void linear_bench(benchmark::State& st, bool parallel) {
    const auto rows = st.range(0), in = st.range(1), out = st.range(2);
    const auto x = Tensor::random({rows, in}, {1, 1.0f});
    const auto w = Tensor::random({in, out}, {2, 0.02f});
    for (auto _ : st) benchmark::DoNotOptimize(parallel ? linear(x, w) : linear_serial(x, w));
}
void BM_LinearParallel(benchmark::State& st) { linear_bench(st, true); }
void BM_LinearSerial(benchmark::State& st) { linear_bench(st, false); }
BENCHMARK(BM_LinearParallel)->Args({32, 512, 1536})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_LinearSerial)->Args({32, 512, 1536})->Unit(benchmark::kMicrosecond);

// Whole decode loop on the toy model, both engines.
void engine_bench(benchmark::State& st, bool optimized) {
    const auto w = make_toy_weights(ModelConfig{}, 1);
    GenerationRequest req;
    req.prompt = reports::random_prompt(st.range(0), st.range(1), w.config.vocab, 2);
    req.mode = DecodeMode::Beam;
    req.bw = 4;
    req.n_response = st.range(2);
    for (auto _ : st) benchmark::DoNotOptimize(optimized ? generate(w, req) : reference_generate(w, req));
}
void BM_GenerateOptimized(benchmark::State& st) { engine_bench(st, true); }
void BM_GenerateReference(benchmark::State& st) { engine_bench(st, false); }
BENCHMARK(BM_GenerateOptimized)->Args({4, 128, 32})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GenerateReference)->Args({4, 128, 32})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
