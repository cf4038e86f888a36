// SPDX-License-Identifier: Apache-2.0
//
// Declarative run configuration: a sectioned key=value file. Unknown keys
// are rejected; serialization is normalized so parse(serialize(c)) is the
// identity.

#pragma once

#include <cstdint>
#include <string>

#include "hexflow/common.hpp"
#include "hexflow/synthetic.hpp"

namespace hexflow {

struct ScheduleConfig {
  int t_k = 100;
  double t_d = 1.0;
  int overlap = 30;
  int bootstrap_frames = 5;
  int recent_window = 4;
  int iters_per_frame = 100;
  double refine_flow_cutoff = 0.2;
  int batch_rays = 4096;
  int refine_div = 4;  // refinement iterations = iters_per_frame * span / refine_div
};

struct RunConfig {
  // [run]
  uint64_t seed = 1;
  int threads = 0;    // 0 = all hardware threads
  int precision = 32; // 32 or 64
  std::string output_dir;

  // [dataset]
  std::string dataset_path;
  double near_override = 0.0;  // 0 = derive from depth percentiles
  double far_override = 0.0;

  // [schedule]
  ScheduleConfig schedule;

  // [field]
  int spatial_res = 512;
  int temporal_res = 0;  // 0 = ceil(model frame span / 2)
  int channels = 24;     // fused feature dim = 3 * channels
  int hidden_width = 64;
  int view_freqs = 4;
  double grid_init_scale = 0.1;
  double initial_density = 0.1;
  double c2f_start = 0.25;  // starting fraction of target resolution

  // [loss]
  double lambda_z = 0.01;
  double lambda_f = 1.0;
  double los_eps_start = 0.02;  // fraction of (far - near)
  double los_eps_end = 0.005;

  // [optimizer]
  double lr_planes = 2e-2;
  double lr_mlp = 1e-3;
  double lr_pose = 3e-3;
  double lr_decay = 0.1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // [render]
  int n_samples = 128;

  // [eval]
  int eval_stride = 8;  // 0 = no held-out frames
  int eval_offset = 7;

  // [pose]
  bool pose_optimization = true;

  // [synth]
  SyntheticRig rig;
};

// Throws ConfigError on syntax errors, unknown sections/keys or bad values.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies one "section.key=value" override (CLI flags).
void apply_override(RunConfig* cfg, const std::string& assignment);

// Normalized form; stable ordering, full precision.
std::string serialize_config(const RunConfig& cfg);
void save_config(const RunConfig& cfg, const std::string& path);

// Range/consistency checks shared by every subcommand.
void validate_config(const RunConfig& cfg);

}  // namespace hexflow
