// SPDX-License-Identifier: Apache-2.0
#include "hexflow/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace hexflow {

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads,
               AdamState<T>& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.m.size() ||
      state.m.size() != state.v.size()) {
    throw std::invalid_argument("adam_step: shape mismatch");
  }
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  const double eps = state.eps;
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]);
    const double m = b1 * static_cast<double>(state.m[i]) + (1.0 - b1) * g;
    const double v = b2 * static_cast<double>(state.v[i]) + (1.0 - b2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    params[i] -= static_cast<T>(lr * m_hat / (std::sqrt(v_hat) + eps));
  }
}

GradCheckReport grad_check(
    const std::function<double(std::span<const double>)>& fn,
    std::span<const double> params, std::span<const double> analytic,
    double h, double rtol, double atol) {
  if (params.size() != analytic.size()) {
    throw std::invalid_argument("grad_check: shape mismatch");
  }
  GradCheckReport report;
  std::vector<double> x(params.begin(), params.end());
  for (size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double f_plus = fn(x);
    x[i] = saved - h;
    const double f_minus = fn(x);
    x[i] = saved;
    const double fd = (f_plus - f_minus) / (2.0 * h);
    const double a = analytic[i];
    const double abs_err = std::abs(a - fd);
    const double denom = std::max(std::abs(a), std::abs(fd));
    const double rel_err = abs_err / std::max(denom, 1e-12);
    if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
    if (rel_err > report.max_rel_err &&
        denom > atol) {  // ignore noise-floor coordinates for the rel stat
      report.max_rel_err = rel_err;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_fd = fd;
    }
    if (abs_err > atol + rtol * denom) {
      report.pass = false;
      report.failing_indices.push_back(i);
    }
  }
  return report;
}

template void adam_step<float>(std::span<float>, std::span<const float>,
                               AdamState<float>&, double);
template void adam_step<double>(std::span<double>, std::span<const double>,
                                AdamState<double>&, double);

}  // namespace hexflow
