#include <benchmark/benchmark.h>

#include "sfs/datagen.hpp"
#include "sfs/gmm.hpp"
#include "sfs/metrics.hpp"
#include "sfs/network.hpp"
#include "sfs/swd.hpp"

namespace {

using namespace sfs;

Grid<double> bench_image(int w, int h) {
    Rng rng(1);
    Grid<double> img(w, h);
    for (double& v : img.data) v = rng.normal();
    return img;
}

void BM_Forward32(benchmark::State& state) {
    const SegNetwork net = SegNetwork::init(16, 8, 4, 1);
    const Grid<double> img = bench_image(32, 32);
    for (auto _ : state) {
        const ForwardPass fp = forward(net, img);
        benchmark::DoNotOptimize(fp.probs.v.data());
    }
}
BENCHMARK(BM_Forward32);

void BM_ForwardBackward32(benchmark::State& state) {
    const SegNetwork net = SegNetwork::init(16, 8, 4, 1);
    const Grid<double> img = bench_image(32, 32);
    Rng rng(2);
    Mask mask(32, 32);
    for (auto& v : mask.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    for (auto _ : state) {
        const ForwardPass fp = forward(net, img);
        LossGradientSpec spec;
        spec.ce_mask = &mask;
        const GradientSet g = backward(net, fp, spec);
        benchmark::DoNotOptimize(g.conv1_w.data());
    }
}
BENCHMARK(BM_ForwardBackward32);

void BM_Swd(benchmark::State& state) {
    Rng rng(3);
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    Points a(8, m), b(8, m);
    for (double& v : a.coords) v = rng.normal();
    for (double& v : b.coords) v = rng.normal();
    const ProjectionBank bank = sample_projections(8, 64, rng);
    for (auto _ : state) {
        const SwdResult res = swd(a, b, bank);
        benchmark::DoNotOptimize(res.distance);
    }
}
BENCHMARK(BM_Swd)->Arg(256)->Arg(1024);

void BM_EmFit(benchmark::State& state) {
    Rng rng(4);
    std::vector<double> cloud;
    for (int i = 0; i < 4000; ++i)
        for (int f = 0; f < 8; ++f)
            cloud.push_back((i % 3) * 2.0 + 0.3 * rng.normal());
    SelectedPixelSet set;
    set.dim = 8;
    set.per_class = {cloud};
    set.counts = {4000};
    EmOptions opts;
    opts.components_per_class = 3;
    for (auto _ : state) {
        const InternalDistribution dist = fit_em(set, opts);
        benchmark::DoNotOptimize(dist.weights.data());
    }
}
BENCHMARK(BM_EmFit);

void BM_Assd32(benchmark::State& state) {
    Rng rng(5);
    Mask pred(32, 32), truth(32, 32);
    for (auto& v : pred.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    for (auto& v : truth.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    for (auto _ : state) {
        const auto v = assd(pred, truth, 1);
        benchmark::DoNotOptimize(v);
    }
}
BENCHMARK(BM_Assd32);

}  // namespace

BENCHMARK_MAIN();
