// SPDX-License-Identifier: Apache-2.0
//
// Synthetic deforming-scene generator with analytic ground truth for every
// supervision signal. The scene is a breathing sphere (radius varies
// sinusoidally in time, material points move radially) inside a textured
// spherical shell, so every ray hits geometry and opacity is ~1. Closed
// forms exist for depth (ray/sphere intersection), optical flow (material
// correspondence + reprojection) and the trajectory.

#pragma once

#include <cstdint>
#include <string>

#include "hexflow/data.hpp"

namespace hexflow {

struct SyntheticRig {
  int frame_count = 60;
  int width = 128, height = 128;
  double focal = 128.0;  // fx = fy; principal point at the image center

  // Scene: inner sphere + enclosing shell, both centered at scene_center.
  Vec3 scene_center = Vec3::Zero();
  double inner_radius = 1.0;
  double env_radius = 6.0;
  double deform_amplitude = 0.0;  // inner-sphere radial amplitude
  double deform_freq = 0.05;      // cycles per frame
  double deform_phase = 0.25;     // cycles
  double env_amplitude = 0.0;     // shell radial amplitude (same freq/phase)

  // Camera trajectory: circular arc at fixed height, constant angular rate.
  double orbit_radius = 3.0;
  double orbit_height = 0.0;
  double orbit_start_deg = 0.0;
  double orbit_span_deg = 40.0;
  bool look_outward = false;  // aim at the shell instead of the center

  // Albedo pattern.
  int texture_octaves = 3;
  double texture_scale = 1.5;
  std::string unit = "unitless";
};

// Ground-truth camera pose for one frame.
Pose rig_pose(const SyntheticRig& rig, int frame);

// Total trajectory length (sum of consecutive camera-center distances).
double rig_trajectory_length(const SyntheticRig& rig);

// Deterministic for a fixed seed. Throws DataError for degenerate rigs
// (camera inside the inner sphere or outside the shell at any frame).
Dataset generate_synthetic(const SyntheticRig& rig, uint64_t seed);

// Generates and writes the on-disk layout load_dataset() consumes, plus a
// manifest.txt recording the rig parameters and seed.
void write_synthetic(const SyntheticRig& rig, uint64_t seed,
                     const std::string& out_dir);

}  // namespace hexflow
