// SPDX-License-Identifier: Apache-2.0
//
// Batched forward/backward pass for one training iteration: rays through
// the active local field (plus the frozen predecessor inside overlap
// frames), alpha compositing, all losses, and exact analytic gradients for
// the active field's parameters and the pose tangent increments.
//
// Gradient routing: rays are generated from the current base poses before
// an iteration and are constants of the differentiable graph. Pose tangent
// increments enter only through the relative extrinsics of the induced
// optical flow, so photometric and depth terms have exactly zero pose
// gradient. Loss means are normalized by supervision-valid counts, which
// are data (not parameter) dependent; rays whose induced flow is invalid
// (behind camera / out of bounds) contribute zero to the flow numerator.

#pragma once

#include <limits>
#include <span>
#include <vector>

#include "hexflow/field.hpp"
#include "hexflow/geometry.hpp"
#include "hexflow/image_io.hpp"
#include "hexflow/losses.hpp"
#include "hexflow/renderer.hpp"

namespace hexflow {

struct RaySupervision {
  float gt_rgb[3] = {0, 0, 0};
  double gt_depth_ray = 0.0;  // ray-distance depth; <= 0 marks invalid
  Vec2 gt_flow_fwd = Vec2::Zero();
  Vec2 gt_flow_bwd = Vec2::Zero();
  bool flow_fwd_valid = false;
  bool flow_bwd_valid = false;
};

struct PreparedRay {
  Ray ray;                // world ray from the current base pose
  double z_factor = 1.0;  // z-depth = ray-distance * z_factor for this pixel
  RaySupervision sup;
};

template <typename T>
struct MlpGrads {
  std::vector<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>> dw;
  std::vector<Eigen::Matrix<T, Eigen::Dynamic, 1>> db;

  void resize_like(const DecoderMlp<T>& mlp) {
    dw.clear();
    db.clear();
    for (int l = 0; l < mlp.layer_count(); ++l) {
      dw.emplace_back(
          Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>::Zero(
              mlp.w[l].rows(), mlp.w[l].cols()));
      db.emplace_back(
          Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(mlp.b[l].size()));
    }
  }
  void zero() {
    for (auto& m : dw) m.setZero();
    for (auto& v : db) v.setZero();
  }
  void add(const MlpGrads& other) {
    for (size_t l = 0; l < dw.size(); ++l) {
      dw[l] += other.dw[l];
      db[l] += other.db[l];
    }
  }
};

template <typename T>
struct FieldGrads {
  std::array<std::vector<T>, 6> planes;
  MlpGrads<T> density, color;

  void resize_like(const LocalField<T>& f) {
    for (int p = 0; p < 6; ++p) planes[p].assign(f.grid.planes[p].size(), T(0));
    density.resize_like(f.density_mlp);
    color.resize_like(f.color_mlp);
  }
  void zero() {
    for (auto& p : planes) std::fill(p.begin(), p.end(), T(0));
    density.zero();
    color.zero();
  }
  void add(const FieldGrads& other) {
    for (int p = 0; p < 6; ++p) {
      for (size_t i = 0; i < planes[p].size(); ++i) planes[p][i] += other.planes[p][i];
    }
    density.add(other.density);
    color.add(other.color);
  }
};

template <typename T>
struct BatchContext {
  const LocalField<T>* active = nullptr;  // unfrozen; receives gradients
  const LocalField<T>* prev = nullptr;    // frozen companion, may be null
  std::span<const Pose> poses;            // base pose per frame
  std::span<const Vec6> pose_deltas;      // tangent increments per frame
  Intrinsics intr;
  RenderParams render;
  LossWeights weights;
  double los_epsilon = 0.01;
  // Precomputed 1/N normalizers from supervision masks (0 disables a term).
  double inv_n_rgb = 0.0, inv_n_depth = 0.0, inv_n_flow = 0.0;
};

struct BatchStats {
  LossParts parts;  // normalized sums
  double total = 0.0;
  int rays = 0;
  int flow_pairs_used = 0;    // induced-valid pairs that entered the loss
  int blended_samples = 0;    // samples evaluated under two-field blending
  // Smallest |pre-activation| over all decoder ReLU units in the batch.
  // Finite-difference gradient checks are only valid when the step cannot
  // cross a ReLU kink, i.e. when this margin comfortably exceeds the step.
  double relu_margin = std::numeric_limits<double>::infinity();
  // Distance of the flow residuals from the L1 kink and of the reprojected
  // targets from the image border (validity flips there); both are further
  // finite-difference validity guards.
  double flow_l1_margin = std::numeric_limits<double>::infinity();
  double flow_edge_margin = std::numeric_limits<double>::infinity();
};

// Scratch buffers reused across iterations; one instance per worker thread.
template <typename T>
struct PipelineWorkspace;

template <typename T>
class BatchPipeline {
 public:
  BatchPipeline();
  ~BatchPipeline();

  // Forward pass over a span of rays; t_values is rays.size()*n_samples
  // ascending sample distances. Pure w.r.t. all buffers.
  BatchStats forward(const BatchContext<T>& ctx,
                     std::span<const PreparedRay> rays,
                     std::span<const double> t_values,
                     PipelineWorkspace<T>* ws) const;

  // Forward plus gradient accumulation (+=) into field_grads and
  // pose_grads. Requires all pose deltas to be zero (training always
  // re-zeroes them; the analytic pose Jacobians are taken at zero).
  BatchStats forward_backward(const BatchContext<T>& ctx,
                              std::span<const PreparedRay> rays,
                              std::span<const double> t_values,
                              FieldGrads<T>* field_grads,
                              std::span<Vec6> pose_grads,
                              PipelineWorkspace<T>* ws) const;

  // Forward pass exposing the per-ray render outputs (rgb interleaved,
  // ray-distance depth, opacity). Used by the batched image renderer.
  void render_batch(const BatchContext<T>& ctx,
                    std::span<const PreparedRay> rays,
                    std::span<const double> t_values, PipelineWorkspace<T>* ws,
                    std::span<T> out_rgb, std::span<T> out_depth,
                    std::span<T> out_opacity) const;

  static PipelineWorkspace<T>* new_workspace();
  static void free_workspace(PipelineWorkspace<T>* ws);
};

class ThreadPool;

// Full-frame inference rendering over the covering fields (at most two may
// cover a frame with the progressive schedule). Depth is converted to
// z-depth. Returns the number of fields that covered the frame.
template <typename T>
struct FrameRender {
  ImageF rgb;
  std::vector<float> depth_z;
  std::vector<float> opacity;
  int covering_fields = 0;
};

template <typename T>
FrameRender<T> render_frame_image(std::span<const LocalField<T>* const> fields,
                                  const Pose& pose, double frame_time,
                                  const Intrinsics& intr,
                                  const RenderParams& params, ThreadPool* pool);

// Parameter packing for gradient checks: 6 planes, density MLP layers
// (weights then bias, per layer), color MLP layers, in declaration order.
template <typename T>
size_t field_param_count(const LocalField<T>& f);

template <typename T>
void pack_field_params(const LocalField<T>& f, std::span<double> out);
template <typename T>
void unpack_field_params(std::span<const double> in, LocalField<T>* f);
template <typename T>
void pack_field_grads(const FieldGrads<T>& g, std::span<double> out);

}  // namespace hexflow
