// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "hexflow/field.hpp"
#include "hexflow/random.hpp"

using namespace hexflow;

namespace {

template <typename T>
LocalField<T> bench_field(int res, int tres, int channels) {
  Aabb box;
  box.min = Vec3(-2, -2, -2);
  box.max = Vec3(2, 2, 2);
  Rng rng = Rng::seeded(1, 0);
  return make_local_field<T>(Eigen::Vector3i::Constant(res), tres, channels,
                             box, 0, 100, Vec3::Zero(), 64, 4, rng);
}

}  // namespace

static void BM_QueryFeatures(benchmark::State& state) {
  const auto field = bench_field<float>(static_cast<int>(state.range(0)), 32, 24);
  std::vector<float> fused(field.grid.fused_dim());
  Rng rng = Rng::seeded(2, 0);
  Vec4 q(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
         rng.uniform(-1, 1));
  for (auto _ : state) {
    q[0] = q[0] * 0.9990234375;  // walk the query around a little
    field.grid.query_features(q, fused.data());
    benchmark::DoNotOptimize(fused.data());
  }
}
BENCHMARK(BM_QueryFeatures)->Arg(64)->Arg(256)->Arg(512);

static void BM_EvalField(benchmark::State& state) {
  const auto field = bench_field<float>(64, 32, 24);
  Rng rng = Rng::seeded(3, 0);
  const Vec3 dir = Vec3(0.2, -0.1, 1.0).normalized();
  float density, rgb[3];
  for (auto _ : state) {
    const Vec3 p(rng.uniform(-1.8, 1.8), rng.uniform(-1.8, 1.8),
                 rng.uniform(-1.8, 1.8));
    eval_field(p, 50.0, dir, field, &density, rgb);
    benchmark::DoNotOptimize(density);
  }
}
BENCHMARK(BM_EvalField);

static void BM_UpsampleGrid(benchmark::State& state) {
  const auto field = bench_field<float>(32, 16, 24);
  for (auto _ : state) {
    auto up = upsample_grid(field.grid, Eigen::Vector3i::Constant(64), 32);
    benchmark::DoNotOptimize(up.planes[0].data.data());
  }
}
BENCHMARK(BM_UpsampleGrid);
