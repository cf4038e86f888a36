// SPDX-License-Identifier: Apache-2.0
//
// Progressive joint optimization: bootstrap on the first frames, per-frame
// appending with prior-pose initialization, count/distance spawn triggers
// with temporal overlap handover, refinement with the flow-loss cutoff,
// and freezing/offloading of completed local fields.
//
// Gauge: frame 0's pose is pinned (identity unless ground truth is
// supplied) and never optimized.

#pragma once

#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "hexflow/config.hpp"
#include "hexflow/data.hpp"
#include "hexflow/field.hpp"
#include "hexflow/losses.hpp"
#include "hexflow/optimizer.hpp"
#include "hexflow/pipeline.hpp"

namespace hexflow {

enum class SpawnTrigger { kBootstrap, kCount, kDistance };

struct SpawnRecord {
  int model_index = 0;
  int first_frame = 0;
  int last_frame = 0;  // final covered frame, filled when the span is sealed
  int origin_frame = 0;
  SpawnTrigger trigger = SpawnTrigger::kBootstrap;
};

template <typename T>
struct TrainState {
  std::vector<LocalField<T>> fields;
  std::vector<Pose> poses;       // world-from-camera, one per frame
  std::vector<Vec6> pose_deltas; // tangent increments, re-zeroed every step
  int appended_upto = -1;
  std::vector<SpawnRecord> spawn_log;
};

struct TrainSummary {
  int64_t total_iterations = 0;
  int64_t bootstrap_iterations = 0;
  int64_t append_iterations = 0;
  int64_t refine_iterations = 0;
  int64_t pose_updates = 0;  // number of per-frame pose Adam steps applied
  LossParts last_parts;
  double near = 0, far = 0;
  std::vector<SpawnRecord> spawn_log;
};

template <typename T>
class ProgressiveTrainer {
 public:
  ProgressiveTrainer(const Dataset& dataset, const RunConfig& config);
  ~ProgressiveTrainer();

  // Full loop: bootstrap -> (append | refine+spawn)* -> final refine.
  // Writes checkpoints, trajectory and the training log when
  // config.output_dir is set.
  TrainSummary train();

  // Individual phases (train() orchestrates these).
  void bootstrap();
  void append_frame(int k);
  bool should_spawn(int k) const;
  void handle_spawn(int k);  // handover + refine previous + spawn new
  void refine_model(bool final_phase);

  const TrainState<T>& state() const { return state_; }
  TrainState<T>& mutable_state() { return state_; }
  double near_plane() const { return near_; }
  double far_plane() const { return far_; }

  // Introspection used by tests and logging.
  const std::vector<int>& last_batch_frames() const { return last_batch_frames_; }
  const std::vector<int64_t>& refine_ray_histogram() const {
    return refine_ray_histogram_;
  }
  bool flow_active() const { return last_flow_active_; }
  int64_t pose_update_count() const { return pose_updates_; }
  int64_t iteration_count() const { return total_iterations_; }
  bool frame_held_out(int k) const;

  void write_outputs();

 private:
  struct FieldSchedule {
    int64_t counter = 0;
    int64_t budget = 1;
    int next_level = 0;  // 0,1 = upsample pending; 2 = at full resolution
    Eigen::Vector3i spatial_levels[3];
    int temporal_levels[3] = {2, 2, 2};
  };

  void create_field(int first_frame, int origin_frame, int initial_last,
                    SpawnTrigger trigger);
  void spawn_model(int k);
  void refit_adam_to_active();
  void maybe_upsample(bool flush);
  void train_iteration(const std::vector<int>& frames, bool flow_on,
                       bool refine_phase);
  std::vector<int> supervised_frames(int first, int last) const;
  LocalField<T>& active() { return state_.fields.back(); }
  const LocalField<T>& active() const { return state_.fields.back(); }
  double lr_decay_factor() const;
  double los_epsilon() const;
  void log_line(const std::string& line);
  void freeze_active();

  const Dataset& dataset_;
  RunConfig cfg_;
  TrainState<T> state_;
  std::vector<FieldSchedule> sched_;
  double near_ = 0, far_ = 0;

  // Optimizer state for the active field (12 MLP blocks + 6 plane blocks)
  // and per-frame pose tangents.
  std::vector<AdamState<T>> adam_planes_;
  std::vector<AdamState<T>> adam_mlp_;
  std::vector<AdamState<double>> adam_pose_;

  struct Impl;  // threading pool, workspaces, gradient buffers
  std::unique_ptr<Impl> impl_;

  Rng sampler_rng_;
  std::vector<int> last_batch_frames_;
  std::vector<int64_t> refine_ray_histogram_;
  bool last_flow_active_ = true;
  int64_t pose_updates_ = 0;
  int64_t total_iterations_ = 0;
  int64_t bootstrap_iterations_ = 0;
  int64_t append_iterations_ = 0;
  int64_t refine_iterations_ = 0;
  LossParts last_parts_;
  std::unique_ptr<std::ofstream> log_;
};

// Convenience wrapper matching the run configuration's precision.
TrainSummary train_progressive(const Dataset& dataset, const RunConfig& config);

}  // namespace hexflow
