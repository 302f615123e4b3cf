#include <benchmark/benchmark.h>

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "hlq/lut.hpp"
#include "hlq/quant.hpp"

using namespace hlq;

namespace {

Matrix gaussian_matrix(int64_t rows, int64_t cols, float sigma, uint64_t seed) {
    Matrix m(rows, cols);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> dist(0.0f, sigma);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

struct GemvSetup {
    PackedWeights packed;
    MirroredParams mp;
    Matrix w_hat;
    std::vector<float> x;
};

GemvSetup make_gemv_setup(int64_t n, int64_t k, int q) {
    const Matrix w = gaussian_matrix(n, k, 0.02f, 42);
    QuantConfig cfg;
    cfg.q = q;
    cfg.g = 128;
    cfg.t_max = 1;
    const auto [p, b] = hlq_alternating(w, cfg);
    GemvSetup s;
    s.packed = rearrange_tiles(decompose_bitplanes(b));
    s.mp = mirror_transform(p);
    s.w_hat = hlq_dequantize(b, p);
    s.x = gaussian_matrix(1, k, 1.0f, 43).data;
    return s;
}

}  // namespace

static void bench_lut_gemv(benchmark::State& state) {
    const int64_t n = state.range(0), k = state.range(1);
    const int q = int(state.range(2));
    const GemvSetup s = make_gemv_setup(n, k, q);
    for (auto _ : state) {
        auto y = lut_gemv(s.packed, s.mp, std::span<const float>(s.x));
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * n * k);
    state.counters["lookups_per_call"] = double(n) * q * double(k / kGroupA);
}

static void bench_lut_gemv_int8(benchmark::State& state) {
    const int64_t n = state.range(0), k = state.range(1);
    const int q = int(state.range(2));
    const GemvSetup s = make_gemv_setup(n, k, q);
    for (auto _ : state) {
        auto y = lut_gemv(s.packed, s.mp, std::span<const float>(s.x), TableMode::i8);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * n * k);
}

static void bench_reference_gemv(benchmark::State& state) {
    const int64_t n = state.range(0), k = state.range(1);
    const GemvSetup s = make_gemv_setup(n, k, 2);
    Matrix x(1, k);
    x.data = s.x;
    for (auto _ : state) {
        Matrix y = reference_gemm(x, s.w_hat);
        benchmark::DoNotOptimize(y.data.data());
    }
    state.SetItemsProcessed(state.iterations() * n * k);
}

static void bench_build_lut(benchmark::State& state) {
    const int64_t k = state.range(0);
    const std::vector<float> x = gaussian_matrix(1, k, 1.0f, 44).data;
    for (auto _ : state) {
        LookupTable t = build_lut(std::span<const float>(x), int(k));
        benchmark::DoNotOptimize(t.entries.data());
    }
    state.SetItemsProcessed(state.iterations() * k);
}

static void bench_alternating(benchmark::State& state) {
    const int64_t n = state.range(0), k = state.range(1);
    const int q = int(state.range(2));
    const Matrix w = gaussian_matrix(n, k, 0.02f, 45);
    QuantConfig cfg;
    cfg.q = q;
    cfg.g = 128;
    for (auto _ : state) {
        auto r = hlq_alternating(w, cfg);
        benchmark::DoNotOptimize(r.first.scales.data());
    }
    state.SetItemsProcessed(state.iterations() * n * k);
}

BENCHMARK(bench_lut_gemv)->Args({512, 512, 2})->Args({512, 512, 3})->Args({1024, 1024, 2})->Args({1024, 1024, 3});
BENCHMARK(bench_lut_gemv_int8)->Args({512, 512, 2})->Args({1024, 1024, 2});
BENCHMARK(bench_reference_gemv)->Args({512, 512})->Args({1024, 1024});
BENCHMARK(bench_build_lut)->Arg(512)->Arg(4096);
BENCHMARK(bench_alternating)->Args({64, 512, 2})->Args({64, 512, 3});

BENCHMARK_MAIN();
