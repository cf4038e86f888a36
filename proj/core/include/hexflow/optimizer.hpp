// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace hexflow {

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  int64_t step = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(size_t n) {
    m.assign(n, T(0));
    v.assign(n, T(0));
    step = 0;
  }
  void release() {
    m.clear();
    m.shrink_to_fit();
    v.clear();
    v.shrink_to_fit();
  }
  bool initialized() const { return !m.empty(); }
};

// Standard bias-corrected Adam update. Throws std::invalid_argument on a
// shape mismatch between params, grads and state.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads,
               AdamState<T>& state, double lr);

struct GradCheckReport {
  bool pass = true;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;  // |a - fd| / max(|a|, |fd|, 1e-12)
  size_t worst_index = 0;
  double worst_analytic = 0.0, worst_fd = 0.0;
  std::vector<size_t> failing_indices;
};

// Central finite differences of fn at params, compared coordinate-wise with
// the provided analytic gradient. A coordinate fails when
// |a - fd| > atol + rtol * max(|a|, |fd|).
GradCheckReport grad_check(
    const std::function<double(std::span<const double>)>& fn,
    std::span<const double> params, std::span<const double> analytic,
    double h = 1e-4, double rtol = 1e-4, double atol = 1e-8);

// Exponential decay from lr0 at t=0 to decay_factor * lr0 at t=total.
inline double lr_schedule(double lr0, double decay_factor, int64_t t,
                          int64_t total) {
  if (total <= 0) return lr0;
  double frac = static_cast<double>(t) / static_cast<double>(total);
  if (frac > 1.0) frac = 1.0;
  return lr0 * std::pow(decay_factor, frac);
}

}  // namespace hexflow
