// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "matforge/capture.hpp"
#include "matforge/forge.hpp"
#include "matforge/geometry.hpp"
#include "matforge/shading.hpp"
#include "matforge/trainer.hpp"

using namespace matforge;

namespace {

MaterialMaps bench_material(int res)
{
    return synthetic_source(res, 1);
}

} // namespace

static void BM_EvalBrdf(benchmark::State& state)
{
    const Vec3 wi = normalize(Vec3{0.3, -0.2, 0.9}), wo = normalize(Vec3{-0.5, 0.1, 0.7});
    for (auto _ : state)
        benchmark::DoNotOptimize(eval_brdf({0.5, 0.4, 0.3}, {0.04, 0.04, 0.04}, 0.3, {0, 0, 1}, wi, wo));
}
BENCHMARK(BM_EvalBrdf);

static void BM_RenderPoint(benchmark::State& state)
{
    const MaterialMaps m = bench_material(static_cast<int>(state.range(0)));
    const CameraModel cam = CameraModel::at_distance(2.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(render_point(m, {{0.5, 0.5, 2.0}, {4, 4, 4}}, cam));
}
BENCHMARK(BM_RenderPoint)->Arg(32)->Arg(128);

static void BM_NormalsToHeight(benchmark::State& state)
{
    const int res = static_cast<int>(state.range(0));
    const MaterialMaps m = bench_material(res);
    for (auto _ : state)
        benchmark::DoNotOptimize(normals_to_height(m.normal, 1.0 / res));
}
BENCHMARK(BM_NormalsToHeight)->Arg(64)->Arg(256);

static void BM_ProxyError(benchmark::State& state)
{
    const MaterialMaps a = bench_material(64);
    const Image x = render_point(a, {{0, 0, 2}, {4, 4, 4}}, CameraModel{});
    const Image y = render_point(a, {{1, 0, 2}, {4, 4, 4}}, CameraModel{});
    for (auto _ : state)
        benchmark::DoNotOptimize(proxy_perceptual_error(x, y));
}
BENCHMARK(BM_ProxyError);

static void BM_MixMaterials(benchmark::State& state)
{
    const MaterialMaps srcs[3] = {synthetic_source(32, 1), synthetic_source(32, 2), synthetic_source(32, 3)};
    std::uint64_t seed = 0;
    for (auto _ : state)
        benchmark::DoNotOptimize(mix_materials_detailed(srcs, seed++));
}
BENCHMARK(BM_MixMaterials);

static void BM_DenoiserForwardDesk(benchmark::State& state)
{
    const DenoiserWeights w = init_backbone(NetConfig::desk(), 1);
    const Image y(32, 32, kLatentChannels, 0.1);
    for (auto _ : state)
        benchmark::DoNotOptimize(forward(w, y, 500));
}
BENCHMARK(BM_DenoiserForwardDesk)->Unit(benchmark::kMillisecond);

static void BM_TrainStepDesk(benchmark::State& state)
{
    std::vector<MaterialMaps> data;
    for (std::uint64_t s = 0; s < 4; ++s)
        data.push_back(synthetic_source(32, s));
    TrainConfig cfg = TrainConfig::desk();
    cfg.max_steps = 1000000;
    Trainer t(cfg, init_backbone(NetConfig::desk(), 1), data);
    for (auto _ : state)
        benchmark::DoNotOptimize(t.step());
}
BENCHMARK(BM_TrainStepDesk)->Unit(benchmark::kMillisecond);

static void BM_SampleDesk(benchmark::State& state)
{
    const DenoiserWeights w = init_backbone(NetConfig::desk(), 1);
    const VelocityFn fn = make_velocity_fn(w);
    const NoiseSchedule sched = build_schedule();
    SamplerConfig cfg;
    cfg.steps = static_cast<int>(state.range(0));
    for (auto _ : state)
        benchmark::DoNotOptimize(sample_eulera(fn, nullptr, 32, 32, kLatentChannels, sched, cfg));
}
BENCHMARK(BM_SampleDesk)->Arg(20)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
