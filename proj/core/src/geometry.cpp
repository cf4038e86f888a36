// SPDX-License-Identifier: Apache-2.0
#include "hexflow/geometry.hpp"

#include <cmath>

namespace hexflow {

namespace {
constexpr double kSmallAngle = 1e-8;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  if (theta < kSmallAngle) {
    // First-order series; error O(theta^2) < 1e-16.
    return Mat3::Identity() + w + 0.5 * w * w;
  }
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / theta2;
  return Mat3::Identity() + a * w + b * w * w;
}

Vec3 so3_log(const Mat3& r) {
  const double trace = r.trace();
  const double cos_theta = std::max(-1.0, std::min(1.0, (trace - 1.0) * 0.5));
  const double theta = std::acos(cos_theta);
  Vec3 axis_unnorm(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < kSmallAngle) {
    return 0.5 * axis_unnorm;
  }
  if (theta > M_PI - 1e-6) {
    // Near pi the off-diagonal difference vanishes; recover the axis from
    // the symmetric part R + I = 2(cos + (1-cos) aa^T) - ...
    Mat3 s = 0.5 * (r + Mat3::Identity());
    Vec3 axis;
    int k = 0;
    s.diagonal().maxCoeff(&k);
    axis = s.col(k) / std::sqrt(std::max(s(k, k), 1e-12));
    axis.normalize();
    // Fix the sign using the skew part (may be tiny but carries the sign).
    if (axis.dot(axis_unnorm) < 0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * axis_unnorm;
}

namespace {

// V(omega) with exp([omega,v]) = [exp(omega), V(omega) v].
Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() + 0.5 * w + (1.0 / 6.0) * w * w;
  }
  const double b = (1.0 - std::cos(theta)) / theta2;
  const double c = (theta - std::sin(theta)) / (theta2 * theta);
  return Mat3::Identity() + b * w + c * w * w;
}

Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 w = skew(omega);
  if (theta < kSmallAngle) {
    return Mat3::Identity() - 0.5 * w + (1.0 / 12.0) * w * w;
  }
  const double half = 0.5 * theta;
  const double c =
      (1.0 - half * std::cos(half) / std::sin(half)) / theta2;
  return Mat3::Identity() - 0.5 * w + c * w * w;
}

}  // namespace

Pose se3_exp(const Vec6& tangent) {
  const Vec3 omega = tangent.head<3>();
  const Vec3 v = tangent.tail<3>();
  Pose p;
  p.rotation = so3_exp(omega);
  p.translation = so3_left_jacobian(omega) * v;
  return p;
}

Vec6 se3_log(const Pose& pose) {
  const Vec3 omega = so3_log(pose.rotation);
  Vec6 t;
  t.head<3>() = omega;
  t.tail<3>() = so3_left_jacobian_inverse(omega) * pose.translation;
  return t;
}

Pose pose_compose(const Pose& a, const Pose& b) {
  return Pose{a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

Pose pose_inverse(const Pose& a) {
  const Mat3 rt = a.rotation.transpose();
  return Pose{rt, -(rt * a.translation)};
}

Pose pose_relative(const Pose& from, const Pose& to) {
  return pose_compose(pose_inverse(to), from);
}

double rotation_angle(const Mat3& r) {
  // atan2 form stays well-conditioned near the identity, where acos of the
  // trace loses half the significant digits.
  const Vec3 skew_part(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  const double s = 0.5 * skew_part.norm();
  const double c = std::max(-1.0, std::min(1.0, (r.trace() - 1.0) * 0.5));
  return std::atan2(s, c);
}

Vec3 unproject(const Vec2& pixel, double depth, const Intrinsics& intr) {
  if (!(depth > 0.0)) {
    throw std::domain_error("unproject: depth must be positive, got " +
                            std::to_string(depth));
  }
  return Vec3((pixel.x() - intr.cx) / intr.fx * depth,
              (pixel.y() - intr.cy) / intr.fy * depth, depth);
}

Vec2 project(const Vec3& p, const Intrinsics& intr) {
  if (!(p.z() > 0.0)) {
    throw std::domain_error("project: point behind camera, z = " +
                            std::to_string(p.z()));
  }
  return Vec2(intr.fx * p.x() / p.z() + intr.cx,
              intr.fy * p.y() / p.z() + intr.cy);
}

bool project_checked(const Vec3& p, const Intrinsics& intr, Vec2* out,
                     double z_min) {
  if (p.z() < z_min) return false;
  *out = Vec2(intr.fx * p.x() / p.z() + intr.cx,
              intr.fy * p.y() / p.z() + intr.cy);
  return true;
}

Ray cast_ray(const Vec2& pixel, const Pose& pose, const Intrinsics& intr,
             int frame_index) {
  if (!intr.pixel_in_bounds(pixel)) {
    throw std::domain_error("cast_ray: pixel (" + std::to_string(pixel.x()) +
                            ", " + std::to_string(pixel.y()) +
                            ") outside image bounds");
  }
  const Vec3 dir_cam((pixel.x() - intr.cx) / intr.fx,
                     (pixel.y() - intr.cy) / intr.fy, 1.0);
  Ray ray;
  ray.origin = pose.translation;
  ray.direction = (pose.rotation * dir_cam).normalized();
  ray.pixel = pixel;
  ray.frame_index = frame_index;
  return ray;
}

double ray_z_factor(const Vec2& pixel, const Intrinsics& intr) {
  const double x = (pixel.x() - intr.cx) / intr.fx;
  const double y = (pixel.y() - intr.cy) / intr.fy;
  return 1.0 / std::sqrt(x * x + y * y + 1.0);
}

}  // namespace hexflow
