#include <benchmark/benchmark.h>

#include "voldiff/metrics.hpp"
#include "voldiff/rng.hpp"

using namespace voldiff;

namespace {

SegMask random_mask(int64_t side, double p, Rng& rng) {
    SegMask m(side, side, side);
    for (auto& v : m.data) v = rng.uniform() < p ? 1.0f : 0.0f;
    return m;
}

void BM_edt(benchmark::State& state) {
    const int64_t side = state.range(0);
    Rng rng(7);
    const SegMask m = random_mask(side, 0.05, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(edt(m));
    }
    state.SetItemsProcessed(state.iterations() * m.numel());
}

void BM_hd95(benchmark::State& state) {
    const int64_t side = state.range(0);
    Rng rng(7);
    const SegMask a = random_mask(side, 0.05, rng);
    const SegMask b = random_mask(side, 0.05, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(hd95(a, b));
    }
}

}  // namespace

BENCHMARK(BM_edt)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(BM_hd95)->Arg(16)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
