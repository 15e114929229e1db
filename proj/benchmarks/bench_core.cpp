#include <benchmark/benchmark.h>

#include "recall/attack.hpp"
#include "recall/denoiser.hpp"
#include "recall/sampler.hpp"
#include "recall/synthworld.hpp"

using namespace recall;

namespace {

const NoiseSchedule& sched() {
    static NoiseSchedule s = make_schedule();
    return s;
}

const ConditionalDenoiser& denoiser() {
    static ConditionalDenoiser d = ConditionalDenoiser::create(11, sched().T);
    return d;
}

Latent fixed_latent(std::uint64_t seed) {
    Rng rng(seed);
    return randn_latent(rng);
}

TextEmbedding fixed_embedding(std::uint64_t seed) {
    Rng rng(seed);
    TextEmbedding h;
    for (double& x : h.v) x = rng.normal();
    return h;
}

}  // namespace

static void BM_conv3x3_w64(benchmark::State& state) {
    ParamAlloc a;
    Conv2d conv = Conv2d::make(a, 64, 64, 3, 1, 1);
    Vec w(a.total);
    Rng rng(3);
    conv.init_kaiming(w.data(), rng);
    Tensor x = randn(64, 8, 8, rng);
    for (auto _ : state) {
        Tensor y = conv.forward(w.data(), x);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations());
    // 2 flops per MAC
    state.counters["GFLOP/s"] = benchmark::Counter(
        static_cast<double>(state.iterations()) * 64 * 8 * 8 * 64 * 9 * 2, benchmark::Counter::kIsRate,
        benchmark::Counter::OneK::kIs1000);
}
BENCHMARK(BM_conv3x3_w64);

static void BM_denoiser_forward(benchmark::State& state) {
    Latent z = fixed_latent(5);
    TextEmbedding h = fixed_embedding(7);
    ConditionalDenoiser::Cache cache;
    for (auto _ : state) {
        Latent out = denoiser().forward_cached(z, 500, h, nullptr, cache);
        benchmark::DoNotOptimize(out.val.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_denoiser_forward);

static void BM_denoiser_backward_input(benchmark::State& state) {
    Latent z = fixed_latent(5);
    TextEmbedding h = fixed_embedding(7);
    ConditionalDenoiser::Cache cache;
    Latent out = denoiser().forward_cached(z, 500, h, nullptr, cache);
    Tensor deps = out.val;
    for (auto _ : state) {
        Latent dz;
        denoiser().backward(cache, deps, nullptr, &dz, nullptr);
        benchmark::DoNotOptimize(dz.val.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_denoiser_backward_input);

static void BM_denoiser_backward_params(benchmark::State& state) {
    Latent z = fixed_latent(5);
    TextEmbedding h = fixed_embedding(7);
    ConditionalDenoiser::Cache cache;
    Latent out = denoiser().forward_cached(z, 500, h, nullptr, cache);
    Tensor deps = out.val;
    Vec g(denoiser().w.size(), 0.0);
    for (auto _ : state) {
        denoiser().backward(cache, deps, &g, nullptr, nullptr);
        benchmark::DoNotOptimize(g.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_denoiser_backward_params);

static void BM_render_image(benchmark::State& state) {
    ShapeSpec spec;
    spec.shape = ShapeClass::triangle;
    spec.color = ColorName::green;
    spec.cx = 0.45;
    spec.cy = 0.55;
    spec.radius = 0.22;
    spec.seed = 99;
    for (auto _ : state) {
        Image img = render_image(spec);
        benchmark::DoNotOptimize(img.pix.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_render_image);

static void BM_attack_inner_iteration(benchmark::State& state) {
    const auto& d = denoiser();
    Latent z_adv = fixed_latent(21);
    Latent eps_ref = fixed_latent(22);
    Latent eps_t = fixed_latent(23);
    TextEmbedding h = fixed_embedding(7);
    ConditionalDenoiser::Cache cache;
    Latent v;
    int t = sched().ddim_timesteps[10];
    for (auto _ : state) {
        Latent z_t = add_noise(sched(), z_adv, t, eps_t);
        Latent eps_adv = d.forward_cached(z_t, t, h, nullptr, cache);
        Tensor deps(kLatentChannels, kLatentSize, kLatentSize);
        for (int i = 0; i < deps.size(); ++i)
            deps.v[i] = 2.0 * (eps_adv.val.v[i] - eps_ref.val.v[i]) / deps.size();
        Latent dz;
        d.backward(cache, deps, nullptr, &dz, nullptr);
        v = momentum_update(v, dz, 0.9, 1e-8);
        z_adv = pgd_step(z_adv, v, 1e-3, UpdateSign::descend);
        benchmark::DoNotOptimize(z_adv.val.data());
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_attack_inner_iteration);

BENCHMARK_MAIN();
