// SPDX-License-Identifier: Apache-2.0
//
// SE(3) poses, pinhole camera model and ray generation.
//
// Conventions used throughout the project:
//  * Pose stores the world-from-camera transform: x_world = R * x_cam + t.
//  * The camera looks down +z in its own frame; pixel (u,v) maps to the
//    camera-frame direction ((u-cx)/fx, (v-cy)/fy, 1).
//  * Pixel centers sit at integer coordinates: pixel (u,v) samples the
//    continuous image location (u,v).
//  * Depth values are camera-frame z (not distance along the ray).
//  * Tangent vectors are ordered (omega, v): rotation first.

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "hexflow/common.hpp"

namespace hexflow {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return Pose{}; }

  Mat4 matrix() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  static Pose from_matrix(const Mat4& m) {
    return Pose{m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  Vec3 apply(const Vec3& p_cam) const { return rotation * p_cam + translation; }
  Vec3 apply_inverse(const Vec3& p_world) const {
    return rotation.transpose() * (p_world - translation);
  }

  // Camera center in world coordinates.
  const Vec3& center() const { return translation; }
};

// Rodrigues exponential, small-angle series below 1e-8.
Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& rotation);

// exp/log between se(3) tangents (omega, v) and poses.
Pose se3_exp(const Vec6& tangent);
Vec6 se3_log(const Pose& pose);

Pose pose_compose(const Pose& a, const Pose& b);  // a then b applied: a*b
Pose pose_inverse(const Pose& a);

// Maps points expressed in `from`'s camera frame into `to`'s camera frame:
// inverse(to) * from.
Pose pose_relative(const Pose& from, const Pose& to);

// Relative rotation angle in radians between two rotations.
double rotation_angle(const Mat3& r);

struct Intrinsics {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0 && fy > 0 && width > 0 && height > 0 && cx >= 0 &&
           cx < width && cy >= 0 && cy < height;
  }
  bool pixel_in_bounds(const Vec2& p) const {
    return p.x() >= 0.0 && p.x() <= width - 1.0 && p.y() >= 0.0 &&
           p.y() <= height - 1.0;
  }
};

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // unit, world frame
  Vec2 pixel = Vec2::Zero();
  int frame_index = 0;
};

// Pixel + z-depth to camera-frame point ((u-cx)/fx*d, (v-cy)/fy*d, d).
// Throws std::domain_error for nonpositive depth.
Vec3 unproject(const Vec2& pixel, double depth, const Intrinsics& intr);

// Camera-frame point to pixel. Throws std::domain_error when z <= 0. The
// result may fall outside the image bounds; the caller decides.
Vec2 project(const Vec3& cam_point, const Intrinsics& intr);

// Non-throwing variant for hot paths; returns false when z <= z_min.
bool project_checked(const Vec3& cam_point, const Intrinsics& intr, Vec2* out,
                     double z_min = 1e-9);

// World-frame ray through the pixel center. Throws std::domain_error for an
// out-of-bounds pixel.
Ray cast_ray(const Vec2& pixel, const Pose& pose, const Intrinsics& intr,
             int frame_index);

// z-component of the unit camera-frame viewing direction for this pixel;
// converts between ray-distance and z-depth (z = dist * factor).
double ray_z_factor(const Vec2& pixel, const Intrinsics& intr);

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return s;
}

}  // namespace hexflow
