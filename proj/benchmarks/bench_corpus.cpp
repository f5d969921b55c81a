#include <benchmark/benchmark.h>

#include "macnet/corpus.hpp"

using namespace macnet;

static void BM_GenPatch(benchmark::State& state) {
    const auto cats = default_categories();
    uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(gen_patch(cats[seed % cats.size()], seed, 32));
        ++seed;
    }
}
BENCHMARK(BM_GenPatch);

static void BM_GenCanvas128(benchmark::State& state) {
    const auto cats = default_categories();
    uint64_t seed = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(gen_patch(cats[seed % cats.size()], seed, 128));
        ++seed;
    }
}
BENCHMARK(BM_GenCanvas128);
