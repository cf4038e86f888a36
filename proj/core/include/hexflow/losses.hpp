// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: photometric loss, depth + line-of-sight loss,
// pose-induced optical flow and its L1 loss, and the weighted total.
//
// Flow convention: a flow value stored at pixel p of frame k is
// p - p_target, where p_target is where the surface point seen at p lands
// in the adjacent frame. Supervision files and the induced flow share this
// convention so the two compare directly.

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hexflow/geometry.hpp"

namespace hexflow {

struct LossWeights {
  double lambda_z = 0.01;
  double lambda_f = 1.0;
  bool flow_active = true;
};

struct LossParts {
  double rgb = 0, z = 0, flow = 0;
};

// Mean over valid rays of ||pred - gt||_2^2 (summed over channels).
// Throws std::domain_error when no ray is valid.
template <typename T>
double loss_rgb(std::span<const T> pred, std::span<const T> gt,
                std::span<const uint8_t> valid);

// Per-ray depth + line-of-sight term:
//   (D_hat - D)^2 + sum_{|t_i - D| > eps} w_i^2 + (1 - sum_{|t_i-D| <= eps} w_i)^2
// with D_hat = sum(w t) / max(sum w, 1e-10). Depth and t share the
// ray-distance parameterization.
template <typename T>
double depth_los_ray(std::span<const T> weights, std::span<const double> t,
                     double gt_depth, double epsilon);

// Batched mean of depth_los_ray over valid rays (weights row-major,
// n_rays x n_samples). Throws std::domain_error when no ray is valid.
template <typename T>
double loss_depth_los(std::span<const T> weights, std::span<const double> t,
                      std::span<const double> gt_depth,
                      std::span<const uint8_t> valid, int n_samples,
                      double epsilon);

// Induced optical flow p(r) - project(relative_transform * unproject(p, D)).
// depth is camera-frame z at frame k. Returns nullopt when the transformed
// point lands behind the adjacent camera or projects outside the image.
// Throws std::domain_error for nonpositive depth.
std::optional<Vec2> induced_flow(const Vec2& pixel, double depth_z,
                                 const Pose& pose_k, const Pose& pose_adj,
                                 const Intrinsics& intr);

// Induced flow plus analytic Jacobians w.r.t. the left tangent increments
// of both poses (at delta = 0) and w.r.t. the z-depth.
struct FlowJacobians {
  bool valid = false;
  Vec2 flow = Vec2::Zero();
  Eigen::Matrix<double, 2, 6> d_pose_k = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 6> d_pose_adj = Eigen::Matrix<double, 2, 6>::Zero();
  Vec2 d_depth = Vec2::Zero();
};
FlowJacobians induced_flow_grad(const Vec2& pixel, double depth_z,
                                const Pose& pose_k, const Pose& pose_adj,
                                const Intrinsics& intr);

// Mean over valid (ray, direction) pairs of ||induced - gt||_1. An entry is
// valid when its mask flag is set and the induced flow exists. Throws
// std::domain_error when no pair is valid.
double loss_flow(std::span<const std::optional<Vec2>> induced_fwd,
                 std::span<const std::optional<Vec2>> induced_bwd,
                 std::span<const Vec2> gt_fwd, std::span<const Vec2> gt_bwd,
                 std::span<const uint8_t> mask_fwd,
                 std::span<const uint8_t> mask_bwd);

// L = L_rgb + lambda_z * L_z + lambda_f * L_f; the flow term is dropped
// entirely when flow_active is false. Pose parameters receive gradients
// only through the flow term (enforced by the training pipeline, which
// routes no pose dependence into the other terms).
double total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace hexflow
