// SPDX-License-Identifier: Apache-2.0
//
// Stratified sampling and alpha-composited volumetric rendering over one or
// more local fields, with linear temporal blending inside overlap regions.

#pragma once

#include <span>
#include <vector>

#include "hexflow/field.hpp"
#include "hexflow/geometry.hpp"
#include "hexflow/random.hpp"

namespace hexflow {

template <typename T>
struct RenderOutput {
  Eigen::Matrix<T, 3, 1> color = Eigen::Matrix<T, 3, 1>::Zero();
  T depth = T(0);    // expected distance along the ray
  T opacity = T(0);  // sum of compositing weights
  T transmittance_end = T(1);
  std::vector<T> weights;
};

enum class RenderMode { kTrain, kInference };

struct RenderParams {
  double near = 0.1;
  double far = 10.0;
  int n_samples = 128;
};

// One sample per stratum of [near, far]. With jitter == nullptr samples sit
// at stratum midpoints (deterministic mode). Throws std::domain_error on
// invalid bounds or n_samples < 2.
std::vector<double> sample_along_ray(double near, double far, int n_samples,
                                     Rng* jitter);

// Alpha compositing; t ascending, densities/colors per sample (colors are
// 3 * n, rgb-interleaved). The final inter-sample spacing is far - t_last.
template <typename T>
RenderOutput<T> composite(std::span<const T> densities,
                          std::span<const T> colors,
                          std::span<const double> t_values, double far);

// Per-field blending weights at a spatio-temporal query. Raw weights ramp
// linearly across each field's overlap regions (1 beside its exclusive
// region, 0 at the far edge of the overlap) and are renormalized over the
// fields covering frame_time. Non-covering fields get weight 0. The world
// point is accepted for a future spatial ramp variant; the ramp is
// currently temporal only.
template <typename T>
std::vector<double> blend_weights(const Vec3& world_point, double frame_time,
                                  std::span<const LocalField<T>* const> fields);

// Renders one ray through the covering fields. Train mode requires an
// unfrozen covering field; both modes blend per-sample density and color
// over the covering fields before compositing. Throws std::domain_error
// when no field covers the frame.
template <typename T>
RenderOutput<T> render_ray(const Ray& ray,
                           std::span<const LocalField<T>* const> fields,
                           double frame_time, RenderMode mode,
                           const RenderParams& params, Rng* jitter = nullptr);

}  // namespace hexflow
