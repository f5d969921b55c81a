#include <benchmark/benchmark.h>

#include <random>

#include "macnet/network.hpp"
#include "macnet/ops.hpp"
#include "macnet/optim.hpp"
#include "macnet/percept.hpp"
#include "macnet/rng.hpp"

using namespace macnet;

namespace {

Tensor random_batch(int n, int size, uint64_t seed) {
    Tensor t = Tensor::zeros({n, 3, size, size});
    std::mt19937_64 eng(splitmix64(seed));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& v : t.values()) v = uni(eng);
    return t;
}

CategoryAttributeMatrix random_a(int k, int m) {
    CategoryAttributeMatrix a;
    a.k = k;
    a.m = m;
    a.a.resize(static_cast<size_t>(k) * m);
    std::mt19937_64 eng(7);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& v : a.a) v = uni(eng);
    return a;
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
    Tensor x16 = Tensor::full({state.range(0), 16, 32, 32}, 0.5);
    Tensor w = Tensor::full({32, 16, 3, 3}, 0.01);
    Tensor b = Tensor::zeros({32});
    for (auto _ : state) {
        benchmark::DoNotOptimize(ops::conv2d(x16, w, b, 1, 1));
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(16)->Arg(64);

static void BM_ForwardDefault(benchmark::State& state) {
    NetworkConfig cfg;
    MacNetwork net = MacNetwork::build(cfg, 1);
    Tensor batch = random_batch(static_cast<int>(state.range(0)), cfg.patch_size, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(net.forward(batch));
    }
}
BENCHMARK(BM_ForwardDefault)->Arg(64);

static void BM_TrainStepDefault(benchmark::State& state) {
    NetworkConfig cfg;
    MacNetwork net = MacNetwork::build(cfg, 1);
    const CategoryAttributeMatrix a = random_a(cfg.categories, cfg.attributes);
    Tensor batch = random_batch(64, cfg.patch_size, 3);
    std::vector<int> labels;
    for (int i = 0; i < 64; ++i) labels.push_back(i % cfg.categories);
    auto params = net.trainable_parameters();
    OptimizerState opt{1e-5, 0.9, 5e-4};
    for (auto _ : state) {
        const ForwardOutputs out = net.forward(batch);
        const LossBreakdown loss = net.compute_loss(out, labels, a);
        loss.total.backward();
        sgd_step(params, opt);
    }
}
BENCHMARK(BM_TrainStepDefault);

static void BM_KdeLoss(benchmark::State& state) {
    Tensor samples = Tensor::zeros({768}, true);
    std::mt19937_64 eng(9);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (double& v : samples.values()) v = uni(eng);
    const DensityGrid grid = DensityGrid::midpoints(32);
    std::vector<double> beta_vals;
    for (double p : grid.points) beta_vals.push_back(beta_pdf(p, {0.5, 0.5}));
    for (auto _ : state) {
        samples.zero_grad();
        Tensor kl = ops::kl_beta_vs_kde(ops::kde_density(samples, grid.points, 0.1), beta_vals);
        kl.backward();
        benchmark::DoNotOptimize(kl.scalar());
    }
}
BENCHMARK(BM_KdeLoss);

BENCHMARK_MAIN();
