#include <benchmark/benchmark.h>

#include "voldiff/nn_ops.hpp"
#include "voldiff/rng.hpp"

using namespace voldiff;

namespace {

TensorF random_tensor(std::vector<int64_t> shape, Rng& rng) {
    TensorF t(std::move(shape));
    for (auto& v : t.data) v = float(rng.uniform_in(-1.0, 1.0));
    return t;
}

void BM_conv3d_forward(benchmark::State& state) {
    const int64_t c = state.range(0), side = state.range(1);
    Rng rng(1);
    const TensorF x = random_tensor({1, c, side, 2 * side, 2 * side}, rng);
    const TensorF w = random_tensor({c, c, 3, 3, 3}, rng);
    const TensorF b = random_tensor({c}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv3d(x, w, b, 1, 1));
    }
    state.SetItemsProcessed(state.iterations() * x.numel());
}

void BM_conv3d_backward(benchmark::State& state) {
    const int64_t c = state.range(0), side = state.range(1);
    Rng rng(1);
    const TensorF x = random_tensor({1, c, side, 2 * side, 2 * side}, rng);
    const TensorF w = random_tensor({c, c, 3, 3, 3}, rng);
    const TensorF b = random_tensor({c}, rng);
    const TensorF g = random_tensor(conv3d(x, w, b, 1, 1).shape, rng);
    for (auto _ : state) {
        TensorF dx, dw, db;
        conv3d_backward(x, w, g, 1, 1, &dx, &dw, &db);
        benchmark::DoNotOptimize(dx);
    }
    state.SetItemsProcessed(state.iterations() * x.numel());
}

void BM_conv_transpose3d(benchmark::State& state) {
    const int64_t c = state.range(0), side = state.range(1);
    Rng rng(1);
    const TensorF x = random_tensor({1, c, side, 2 * side, 2 * side}, rng);
    const TensorF w = random_tensor({c, c, 2, 2, 2}, rng);
    const TensorF b = random_tensor({c}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv_transpose3d(x, w, b, 2));
    }
    state.SetItemsProcessed(state.iterations() * x.numel());
}

}  // namespace

BENCHMARK(BM_conv3d_forward)->Args({8, 8})->Args({8, 16})->Args({16, 8});
BENCHMARK(BM_conv3d_backward)->Args({8, 8})->Args({8, 16});
BENCHMARK(BM_conv_transpose3d)->Args({8, 8})->Args({16, 8});

BENCHMARK_MAIN();
