// SPDX-License-Identifier: Apache-2.0
//
// Dataset layout on disk:
//   root/intrinsics.txt       "fx fy cx cy width height"; optional second
//                             line "unit <label>"
//   root/rgb/%06d.png         8-bit RGB
//   root/depth/%06d.bin       float32 z-depth, 0 = invalid
//   root/flow_fwd/%06d.flo    frames 0..K-2 (optional as a group)
//   root/flow_bwd/%06d.flo    frames 1..K-1
//   root/gt_traj.txt          optional, one line per frame
//
// Trajectory lines are "index tx ty tz qx qy qz qw" (quaternion scalar
// last). Flow values follow the source-minus-target convention described
// in losses.hpp.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hexflow/geometry.hpp"
#include "hexflow/image_io.hpp"

namespace hexflow {

struct FrameRecord {
  ImageF rgb;                   // H x W x 3 in [0,1]
  std::vector<float> depth;     // H x W z-depth, 0 = invalid
  std::vector<float> flow_fwd;  // H x W x 2, empty when absent
  std::vector<float> flow_bwd;
};

struct DatasetMeta {
  std::string unit = "unitless";
  double depth_p01 = 0, depth_p99 = 0, mean_depth = 0;
  double near_hint = 0, far_hint = 0;
};

struct Dataset {
  std::vector<FrameRecord> frames;
  Intrinsics intrinsics;
  std::vector<Pose> gt_trajectory;  // empty when absent
  DatasetMeta meta;
  bool has_flow = false;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

// Loads and validates a dataset; throws DataError with the offending file
// named for missing files, resolution mismatches, negative depths or
// non-contiguous frame indices.
Dataset load_dataset(const std::string& root);

// Derives meta depth statistics / near-far hints from the loaded depths.
void compute_depth_stats(Dataset* dataset);

void write_trajectory(std::span<const Pose> poses, const std::string& path);
std::vector<Pose> read_trajectory(const std::string& path);

}  // namespace hexflow
