// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "hexflow/pipeline.hpp"
#include "hexflow/renderer.hpp"

using namespace hexflow;

namespace {

template <typename T>
struct BenchSetup {
  LocalField<T> field;
  std::vector<Pose> poses;
  std::vector<Vec6> deltas;
  Intrinsics intr;
  std::vector<PreparedRay> rays;
  std::vector<double> t_values;
  FieldGrads<T> grads;
  std::vector<Vec6> pose_grads;

  BatchContext<T> context() {
    BatchContext<T> ctx;
    ctx.active = &field;
    ctx.poses = poses;
    ctx.pose_deltas = deltas;
    ctx.intr = intr;
    ctx.render.near = 1.5;
    ctx.render.far = 12.0;
    ctx.render.n_samples = 48;
    ctx.inv_n_rgb = 1.0 / rays.size();
    ctx.inv_n_depth = 1.0 / rays.size();
    ctx.inv_n_flow = 0.5 / rays.size();
    return ctx;
  }
};

template <typename T>
BenchSetup<T> make_setup(int batch) {
  BenchSetup<T> s;
  s.intr.fx = s.intr.fy = 128;
  s.intr.cx = s.intr.cy = 63.5;
  s.intr.width = s.intr.height = 128;
  Aabb box;
  box.min = Vec3::Constant(-13.0);
  box.max = Vec3::Constant(13.0);
  Rng rng = Rng::seeded(1, 0);
  s.field = make_local_field<T>(Eigen::Vector3i::Constant(64), 32, 24, box, 0,
                                59, Vec3::Zero(), 64, 4, rng);
  s.field.last_frame = 59;
  s.poses.assign(60, Pose::identity());
  s.deltas.assign(60, Vec6::Zero());
  for (int i = 0; i < batch; ++i) {
    const int k = 1 + rng.uniform_int(58);
    PreparedRay pr;
    pr.ray = cast_ray(Vec2(rng.uniform_int(128), rng.uniform_int(128)),
                      s.poses[k], s.intr, k);
    pr.z_factor = ray_z_factor(pr.ray.pixel, s.intr);
    for (int c = 0; c < 3; ++c) pr.sup.gt_rgb[c] = 0.5f;
    pr.sup.gt_depth_ray = 6.0;
    pr.sup.flow_fwd_valid = true;
    pr.sup.gt_flow_fwd = Vec2(0.5, -0.5);
    s.rays.push_back(pr);
  }
  s.t_values.resize(static_cast<size_t>(batch) * 48);
  Rng jit = Rng::seeded(1, 1);
  for (int i = 0; i < batch; ++i) {
    const auto t = sample_along_ray(1.5, 12.0, 48, &jit);
    std::copy(t.begin(), t.end(), s.t_values.begin() + i * 48);
  }
  s.grads.resize_like(s.field);
  s.pose_grads.assign(60, Vec6::Zero());
  return s;
}

}  // namespace

static void BM_TrainStepForwardBackward(benchmark::State& state) {
  auto s = make_setup<float>(static_cast<int>(state.range(0)));
  BatchPipeline<float> pipeline;
  auto* ws = BatchPipeline<float>::new_workspace();
  for (auto _ : state) {
    s.grads.zero();
    const auto stats = pipeline.forward_backward(s.context(), s.rays,
                                                 s.t_values, &s.grads,
                                                 s.pose_grads, ws);
    benchmark::DoNotOptimize(stats.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  BatchPipeline<float>::free_workspace(ws);
}
BENCHMARK(BM_TrainStepForwardBackward)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_ForwardOnly(benchmark::State& state) {
  auto s = make_setup<float>(static_cast<int>(state.range(0)));
  BatchPipeline<float> pipeline;
  auto* ws = BatchPipeline<float>::new_workspace();
  for (auto _ : state) {
    const auto stats = pipeline.forward(s.context(), s.rays, s.t_values, ws);
    benchmark::DoNotOptimize(stats.total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  BatchPipeline<float>::free_workspace(ws);
}
BENCHMARK(BM_ForwardOnly)->Arg(1024)->Unit(benchmark::kMillisecond);
