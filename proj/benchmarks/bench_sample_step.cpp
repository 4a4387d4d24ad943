#include <benchmark/benchmark.h>

#include "voldiff/diffusion.hpp"
#include "voldiff/rng.hpp"

using namespace voldiff;

namespace {

// one reverse step with a real denoiser forward at desk scale
void BM_p_sample_step(benchmark::State& state) {
    const int64_t base = state.range(0);
    UNet3DConfig cfg;
    cfg.in_channels = 5;
    cfg.out_channels = 1;
    cfg.base_channels = base;
    cfg.levels = 3;
    cfg.use_time_embedding = true;
    cfg.time_embed_dim = 32;
    const ParamSetT<float> params = build_unet<float>(cfg, 3);
    const NoisePredictor pred = unet_noise_predictor(params, cfg);
    const NoiseSchedule ns = linear_schedule(200, 1e-4, 0.1);

    Rng rng(11);
    Volume c(4, 16, 32, 32);
    for (auto& v : c.data) v = float(rng.uniform());
    TensorF x({1, 1, 16, 32, 32});
    for (auto& v : x.data) v = float(rng.gaussian());

    for (auto _ : state) {
        benchmark::DoNotOptimize(p_sample_step(x, c, 100, pred, ns, rng));
    }
    state.SetItemsProcessed(state.iterations() * x.numel());
}

void BM_q_sample(benchmark::State& state) {
    const NoiseSchedule ns = linear_schedule(200, 1e-4, 0.1);
    Rng rng(11);
    TensorF x0({1, 1, 16, 32, 32}), eps({1, 1, 16, 32, 32});
    for (auto& v : x0.data) v = float(rng.uniform_int(-1, 1));
    for (auto& v : eps.data) v = float(rng.gaussian());
    for (auto _ : state) {
        benchmark::DoNotOptimize(q_sample(x0, 100, eps, ns));
    }
    state.SetItemsProcessed(state.iterations() * x0.numel());
}

}  // namespace

BENCHMARK(BM_p_sample_step)->Arg(4)->Arg(8);
BENCHMARK(BM_q_sample);

BENCHMARK_MAIN();
