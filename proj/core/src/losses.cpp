// SPDX-License-Identifier: Apache-2.0
#include "hexflow/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace hexflow {

template <typename T>
double loss_rgb(std::span<const T> pred, std::span<const T> gt,
                std::span<const uint8_t> valid) {
  const size_t n = valid.size();
  double sum = 0.0;
  size_t count = 0;
  for (size_t r = 0; r < n; ++r) {
    if (!valid[r]) continue;
    double e = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = static_cast<double>(pred[3 * r + c]) -
                       static_cast<double>(gt[3 * r + c]);
      e += d * d;
    }
    sum += e;
    ++count;
  }
  if (count == 0) throw std::domain_error("loss_rgb: no valid rays");
  return sum / static_cast<double>(count);
}

template <typename T>
double depth_los_ray(std::span<const T> weights, std::span<const double> t,
                     double gt_depth, double epsilon) {
  double wsum = 0.0, wtsum = 0.0, mass_in = 0.0, mass_out_sq = 0.0;
  for (size_t i = 0; i < weights.size(); ++i) {
    const double w = static_cast<double>(weights[i]);
    wsum += w;
    wtsum += w * t[i];
    if (std::abs(t[i] - gt_depth) <= epsilon) {
      mass_in += w;
    } else {
      mass_out_sq += w * w;
    }
  }
  const double depth_hat = wtsum / std::max(wsum, 1e-10);
  const double d_err = depth_hat - gt_depth;
  const double surf = 1.0 - mass_in;
  return d_err * d_err + mass_out_sq + surf * surf;
}

template <typename T>
double loss_depth_los(std::span<const T> weights, std::span<const double> t,
                      std::span<const double> gt_depth,
                      std::span<const uint8_t> valid, int n_samples,
                      double epsilon) {
  const size_t n_rays = gt_depth.size();
  double sum = 0.0;
  size_t count = 0;
  for (size_t r = 0; r < n_rays; ++r) {
    if (!valid[r]) continue;
    sum += depth_los_ray<T>(weights.subspan(r * n_samples, n_samples),
                            t.subspan(r * n_samples, n_samples), gt_depth[r],
                            epsilon);
    ++count;
  }
  if (count == 0) throw std::domain_error("loss_depth_los: no valid rays");
  return sum / static_cast<double>(count);
}

std::optional<Vec2> induced_flow(const Vec2& pixel, double depth_z,
                                 const Pose& pose_k, const Pose& pose_adj,
                                 const Intrinsics& intr) {
  const Vec3 x_cam = unproject(pixel, depth_z, intr);
  const Pose rel = pose_relative(pose_k, pose_adj);
  const Vec3 y = rel.rotation * x_cam + rel.translation;
  Vec2 target;
  if (!project_checked(y, intr, &target)) return std::nullopt;
  if (!intr.pixel_in_bounds(target)) return std::nullopt;
  return pixel - target;
}

FlowJacobians induced_flow_grad(const Vec2& pixel, double depth_z,
                                const Pose& pose_k, const Pose& pose_adj,
                                const Intrinsics& intr) {
  FlowJacobians out;
  const Vec3 q((pixel.x() - intr.cx) / intr.fx, (pixel.y() - intr.cy) / intr.fy,
               1.0);
  const Vec3 x_cam = q * depth_z;
  const Vec3 w_pt = pose_k.apply(x_cam);  // surface point in world frame
  const Mat3 rat = pose_adj.rotation.transpose();
  const Vec3 y = rat * (w_pt - pose_adj.translation);
  Vec2 target;
  if (!project_checked(y, intr, &target) || !intr.pixel_in_bounds(target)) {
    return out;
  }
  out.valid = true;
  out.flow = pixel - target;

  // d project / d y at y.
  Eigen::Matrix<double, 2, 3> dproj;
  const double iz = 1.0 / y.z();
  dproj << intr.fx * iz, 0, -intr.fx * y.x() * iz * iz, 0, intr.fy * iz,
      -intr.fy * y.y() * iz * iz;
  // flow = pixel - project(y): flip the sign once here.
  const Eigen::Matrix<double, 2, 3> dflow_dy = -dproj;

  // Left tangent increments at 0: for pose k, d(exp(d) P x)/dd =
  // [-skew(Px) | I]; for the adjacent inverse pose the sign flips.
  Eigen::Matrix<double, 3, 6> dy_dk;
  dy_dk.leftCols<3>() = rat * (-skew(w_pt));
  dy_dk.rightCols<3>() = rat;
  Eigen::Matrix<double, 3, 6> dy_da;
  dy_da.leftCols<3>() = rat * skew(w_pt);
  dy_da.rightCols<3>() = -rat;

  out.d_pose_k = dflow_dy * dy_dk;
  out.d_pose_adj = dflow_dy * dy_da;
  out.d_depth = dflow_dy * (rat * (pose_k.rotation * q));
  return out;
}

double loss_flow(std::span<const std::optional<Vec2>> induced_fwd,
                 std::span<const std::optional<Vec2>> induced_bwd,
                 std::span<const Vec2> gt_fwd, std::span<const Vec2> gt_bwd,
                 std::span<const uint8_t> mask_fwd,
                 std::span<const uint8_t> mask_bwd) {
  double sum = 0.0;
  size_t count = 0;
  const size_t n = induced_fwd.size();
  for (size_t r = 0; r < n; ++r) {
    if (mask_fwd[r] && induced_fwd[r]) {
      const Vec2 e = *induced_fwd[r] - gt_fwd[r];
      sum += std::abs(e.x()) + std::abs(e.y());
      ++count;
    }
    if (mask_bwd[r] && induced_bwd[r]) {
      const Vec2 e = *induced_bwd[r] - gt_bwd[r];
      sum += std::abs(e.x()) + std::abs(e.y());
      ++count;
    }
  }
  if (count == 0) throw std::domain_error("loss_flow: no valid ray/direction pairs");
  return sum / static_cast<double>(count);
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  double loss = parts.rgb + weights.lambda_z * parts.z;
  if (weights.flow_active) loss += weights.lambda_f * parts.flow;
  return loss;
}

template double loss_rgb<float>(std::span<const float>, std::span<const float>,
                                std::span<const uint8_t>);
template double loss_rgb<double>(std::span<const double>,
                                 std::span<const double>,
                                 std::span<const uint8_t>);
template double depth_los_ray<float>(std::span<const float>,
                                     std::span<const double>, double, double);
template double depth_los_ray<double>(std::span<const double>,
                                      std::span<const double>, double, double);
template double loss_depth_los<float>(std::span<const float>,
                                      std::span<const double>,
                                      std::span<const double>,
                                      std::span<const uint8_t>, int, double);
template double loss_depth_los<double>(std::span<const double>,
                                       std::span<const double>,
                                       std::span<const double>,
                                       std::span<const uint8_t>, int, double);

}  // namespace hexflow
