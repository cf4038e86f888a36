// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "hexflow/metrics.hpp"
#include "hexflow/random.hpp"

using namespace hexflow;

namespace {

ImageF noise_image(int w, int h, uint64_t seed) {
  ImageF img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.data.resize(static_cast<size_t>(w) * h * 3);
  Rng rng = Rng::seeded(seed, 0);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

static void BM_Psnr(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const ImageF a = noise_image(n, n, 1), b = noise_image(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(psnr(a, b));
}
BENCHMARK(BM_Psnr)->Arg(128)->Arg(512);

static void BM_Ssim(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const ImageF a = noise_image(n, n, 1), b = noise_image(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
