// SPDX-License-Identifier: Apache-2.0
#include "hexflow/renderer.hpp"

#include <cmath>
#include <stdexcept>

namespace hexflow {

std::vector<double> sample_along_ray(double near, double far, int n_samples,
                                     Rng* jitter) {
  if (!(near > 0.0) || !(far > near)) {
    throw std::domain_error("sample_along_ray: need 0 < near < far");
  }
  if (n_samples < 2) {
    throw std::domain_error("sample_along_ray: need n_samples >= 2");
  }
  std::vector<double> t(n_samples);
  const double width = (far - near) / n_samples;
  for (int i = 0; i < n_samples; ++i) {
    const double u = jitter ? jitter->uniform() : 0.5;
    t[i] = near + (i + u) * width;
  }
  return t;
}

template <typename T>
RenderOutput<T> composite(std::span<const T> densities,
                          std::span<const T> colors,
                          std::span<const double> t_values, double far) {
  const size_t n = t_values.size();
  RenderOutput<T> out;
  out.weights.assign(n, T(0));
  T log_transmittance = T(0);  // -sum sigma*delta so far
  T weight_sum = T(0);
  T depth_sum = T(0);
  for (size_t i = 0; i < n; ++i) {
    const double delta =
        (i + 1 < n) ? (t_values[i + 1] - t_values[i]) : (far - t_values[i]);
    const T sd = densities[i] * static_cast<T>(delta);
    const T transmittance = std::exp(log_transmittance);
    const T alpha = -std::expm1(-sd);  // 1 - exp(-sigma*delta)
    const T w = transmittance * alpha;
    out.weights[i] = w;
    weight_sum += w;
    depth_sum += w * static_cast<T>(t_values[i]);
    for (int c = 0; c < 3; ++c) out.color[c] += w * colors[3 * i + c];
    log_transmittance -= sd;
  }
  out.opacity = weight_sum;
  out.transmittance_end = std::exp(log_transmittance);
  out.depth = depth_sum / std::max(weight_sum, T(1e-10));
  return out;
}

template <typename T>
std::vector<double> blend_weights(const Vec3& /*world_point*/,
                                  double frame_time,
                                  std::span<const LocalField<T>* const> fields) {
  std::vector<double> w(fields.size(), 0.0);
  double total = 0.0;
  int covering = 0;
  for (size_t m = 0; m < fields.size(); ++m) {
    const LocalField<T>& f = *fields[m];
    if (!f.covers_frame(frame_time)) continue;
    ++covering;
    double ramp_in = 1.0, ramp_out = 1.0;
    if (f.overlap_in > 0) {
      ramp_in = std::min(1.0, (frame_time - f.first_frame) / f.overlap_in);
    }
    if (f.overlap_out > 0) {
      ramp_out = std::min(1.0, (f.last_frame + 1.0 - frame_time) / f.overlap_out);
    }
    w[m] = std::min(ramp_in, ramp_out);
    total += w[m];
  }
  if (covering == 0) return w;
  if (total <= 0.0) {
    // Degenerate: all covering ramps hit zero; split evenly.
    for (size_t m = 0; m < fields.size(); ++m) {
      if (fields[m]->covers_frame(frame_time)) w[m] = 1.0 / covering;
    }
    return w;
  }
  for (auto& v : w) v /= total;
  return w;
}

template <typename T>
RenderOutput<T> render_ray(const Ray& ray,
                           std::span<const LocalField<T>* const> fields,
                           double frame_time, RenderMode mode,
                           const RenderParams& params, Rng* jitter) {
  std::vector<const LocalField<T>*> cover;
  for (const auto* f : fields) {
    if (f->covers_frame(frame_time)) cover.push_back(f);
  }
  if (cover.empty()) {
    throw std::domain_error("render_ray: no field covers frame " +
                            std::to_string(frame_time));
  }
  if (mode == RenderMode::kTrain) {
    bool has_active = false;
    for (const auto* f : cover) has_active |= !f->frozen;
    if (!has_active) {
      throw std::domain_error("render_ray: train mode needs an unfrozen field");
    }
  }
  const std::vector<double> beta =
      blend_weights<T>(ray.origin, frame_time,
                       std::span<const LocalField<T>* const>(cover.data(),
                                                             cover.size()));
  const std::vector<double> t =
      sample_along_ray(params.near, params.far, params.n_samples, jitter);
  const size_t n = t.size();
  std::vector<T> sigma(n, T(0));
  std::vector<T> rgb(3 * n, T(0));
  for (size_t i = 0; i < n; ++i) {
    const Vec3 p = ray.origin + t[i] * ray.direction;
    for (size_t m = 0; m < cover.size(); ++m) {
      if (beta[m] == 0.0) continue;
      T d, c[3];
      eval_field(p, frame_time, ray.direction, *cover[m], &d, c);
      const T bm = static_cast<T>(beta[m]);
      sigma[i] += bm * d;
      for (int ch = 0; ch < 3; ++ch) rgb[3 * i + ch] += bm * c[ch];
    }
  }
  return composite<T>(sigma, rgb, t, params.far);
}

template RenderOutput<float> composite<float>(std::span<const float>,
                                              std::span<const float>,
                                              std::span<const double>, double);
template RenderOutput<double> composite<double>(std::span<const double>,
                                                std::span<const double>,
                                                std::span<const double>, double);
template std::vector<double> blend_weights<float>(
    const Vec3&, double, std::span<const LocalField<float>* const>);
template std::vector<double> blend_weights<double>(
    const Vec3&, double, std::span<const LocalField<double>* const>);
template RenderOutput<float> render_ray<float>(
    const Ray&, std::span<const LocalField<float>* const>, double, RenderMode,
    const RenderParams&, Rng*);
template RenderOutput<double> render_ray<double>(
    const Ray&, std::span<const LocalField<double>* const>, double, RenderMode,
    const RenderParams&, Rng*);

}  // namespace hexflow
