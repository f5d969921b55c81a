#include <benchmark/benchmark.h>

#include <random>

#include "macnet/percept.hpp"
#include "macnet/rng.hpp"

using namespace macnet;

static void BM_EmbedSolve(benchmark::State& state) {
    const int k = static_cast<int>(state.range(0));
    const int m = static_cast<int>(state.range(1));
    PerceptualDistanceMatrix d;
    d.k = k;
    d.d.assign(static_cast<size_t>(k) * k, 0.0);
    std::mt19937_64 eng(splitmix64(4));
    std::uniform_real_distribution<double> uni(0.1, 0.9);
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) {
            const double v = uni(eng);
            d.at(i, j) = v;
            d.at(j, i) = v;
        }
    EmbedConfig cfg;
    cfg.restarts = 1;
    cfg.iterations = 200;
    for (auto _ : state) {
        benchmark::DoNotOptimize(solve_category_attribute_matrix(d, m, cfg));
    }
}
BENCHMARK(BM_EmbedSolve)->Args({6, 4})->Args({8, 12});

static void BM_KdeEval(benchmark::State& state) {
    std::mt19937_64 eng(splitmix64(5));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> samples(static_cast<size_t>(state.range(0)));
    for (double& v : samples) v = uni(eng);
    const DensityGrid grid = DensityGrid::midpoints(32);
    for (auto _ : state) {
        benchmark::DoNotOptimize(kde_eval(samples, grid));
    }
}
BENCHMARK(BM_KdeEval)->Arg(100)->Arg(10000);
