// SPDX-License-Identifier: Apache-2.0
#include "hexflow/progressive.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>

#include "hexflow/optimizer.hpp"
#include "hexflow/threading.hpp"

namespace fs = std::filesystem;

namespace hexflow {

namespace {
constexpr int kChunks = 16;  // fixed so results do not depend on threads

std::string checkpoint_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "field_%03d.hxpf", index);
  return buf;
}
}  // namespace

template <typename T>
struct ProgressiveTrainer<T>::Impl {
  explicit Impl(int threads) : pool(threads) {}
  ~Impl() {
    for (auto* ws : workspaces) BatchPipeline<T>::free_workspace(ws);
  }

  PipelineWorkspace<T>* acquire_workspace() {
    std::lock_guard<std::mutex> lock(ws_mutex);
    if (free_list.empty()) {
      workspaces.push_back(BatchPipeline<T>::new_workspace());
      return workspaces.back();
    }
    auto* ws = free_list.back();
    free_list.pop_back();
    return ws;
  }
  void release_workspace(PipelineWorkspace<T>* ws) {
    std::lock_guard<std::mutex> lock(ws_mutex);
    free_list.push_back(ws);
  }

  ThreadPool pool;
  BatchPipeline<T> pipeline;
  std::vector<PipelineWorkspace<T>*> workspaces;
  std::vector<PipelineWorkspace<T>*> free_list;
  std::mutex ws_mutex;

  // Per-chunk gradient buffers, reduced in chunk order for determinism.
  std::vector<FieldGrads<T>> chunk_grads;
  std::vector<std::vector<Vec6>> chunk_pose_grads;
  std::vector<BatchStats> chunk_stats;
  FieldGrads<T> grads_total;
  std::vector<Vec6> pose_grads_total;

  std::vector<PreparedRay> batch;
  std::vector<double> t_values;
};

template <typename T>
ProgressiveTrainer<T>::ProgressiveTrainer(const Dataset& dataset,
                                          const RunConfig& config)
    : dataset_(dataset), cfg_(config), sampler_rng_(Rng::seeded(config.seed, 0x5a)) {
  validate_config(cfg_);
  const int K = dataset_.frame_count();
  if (K < cfg_.schedule.bootstrap_frames) {
    throw DataError("sequence too short: " + std::to_string(K) +
                    " frames, bootstrap needs " +
                    std::to_string(cfg_.schedule.bootstrap_frames));
  }
  near_ = cfg_.near_override > 0 ? cfg_.near_override : dataset_.meta.near_hint;
  far_ = cfg_.far_override > 0 ? cfg_.far_override : dataset_.meta.far_hint;
  if (!(near_ > 0) || !(far_ > near_)) {
    throw DataError("no usable near/far planes; dataset has no depth "
                    "statistics and no overrides were given");
  }
  if (cfg_.pose_optimization && !dataset_.has_flow) {
    throw DataError("pose optimization requires optical-flow supervision");
  }

  state_.poses.assign(K, Pose::identity());
  state_.pose_deltas.assign(K, Vec6::Zero());
  if (!cfg_.pose_optimization && !dataset_.gt_trajectory.empty()) {
    state_.poses = dataset_.gt_trajectory;
  }
  adam_pose_.resize(K);
  refine_ray_histogram_.assign(K, 0);

  enable_flush_to_zero();  // the calling thread also runs chunks
  const int threads = cfg_.threads > 0 ? cfg_.threads : hardware_threads();
  impl_ = std::make_unique<Impl>(threads);
  impl_->chunk_grads.resize(kChunks);
  impl_->chunk_pose_grads.assign(kChunks, std::vector<Vec6>(K, Vec6::Zero()));
  impl_->chunk_stats.resize(kChunks);
  impl_->pose_grads_total.assign(K, Vec6::Zero());

  if (!cfg_.output_dir.empty()) {
    fs::create_directories(cfg_.output_dir);
    log_ = std::make_unique<std::ofstream>(cfg_.output_dir + "/train_log.txt");
  }
}

template <typename T>
ProgressiveTrainer<T>::~ProgressiveTrainer() = default;

template <typename T>
bool ProgressiveTrainer<T>::frame_held_out(int k) const {
  if (cfg_.eval_stride <= 0) return false;
  return k % cfg_.eval_stride == cfg_.eval_offset % cfg_.eval_stride;
}

template <typename T>
std::vector<int> ProgressiveTrainer<T>::supervised_frames(int first,
                                                          int last) const {
  std::vector<int> frames;
  for (int k = first; k <= last; ++k) {
    if (!frame_held_out(k)) frames.push_back(k);
  }
  if (frames.empty()) {
    for (int k = first; k <= last; ++k) frames.push_back(k);
  }
  return frames;
}

template <typename T>
double ProgressiveTrainer<T>::lr_decay_factor() const {
  const FieldSchedule& s = sched_.back();
  const double frac =
      std::min(1.0, static_cast<double>(s.counter) / static_cast<double>(s.budget));
  return std::pow(cfg_.lr_decay, frac);
}

template <typename T>
double ProgressiveTrainer<T>::los_epsilon() const {
  const FieldSchedule& s = sched_.back();
  const double frac =
      std::min(1.0, static_cast<double>(s.counter) / static_cast<double>(s.budget));
  const double f = cfg_.los_eps_start + (cfg_.los_eps_end - cfg_.los_eps_start) * frac;
  return f * (far_ - near_);
}

template <typename T>
void ProgressiveTrainer<T>::log_line(const std::string& line) {
  if (log_) (*log_) << line << '\n';
}

template <typename T>
void ProgressiveTrainer<T>::create_field(int first_frame, int origin_frame,
                                         int initial_last, SpawnTrigger trigger) {
  const int K = dataset_.frame_count();
  const ScheduleConfig& s = cfg_.schedule;
  const int alloc_end = std::min(first_frame + s.t_k, K) - 1;
  const int alloc_len = alloc_end - first_frame + 1;

  const Vec3 origin = state_.poses[origin_frame].center();
  Aabb bbox;
  const double half = s.t_d + far_;
  bbox.min = origin - Vec3::Constant(half);
  bbox.max = origin + Vec3::Constant(half);

  const int target_t =
      cfg_.temporal_res > 0 ? cfg_.temporal_res
                            : std::max(2, (alloc_len + 1) / 2);
  const int target_s = cfg_.spatial_res;

  FieldSchedule sched;
  auto level = [](int target, double frac) {
    return std::max(2, std::min(target, static_cast<int>(std::ceil(target * frac))));
  };
  const int s0 = level(target_s, cfg_.c2f_start);
  const int s1 = std::max(s0, level(target_s, 0.5));
  const int t0 = level(target_t, cfg_.c2f_start);
  const int t1 = std::max(t0, level(target_t, 0.5));
  sched.spatial_levels[0] = Eigen::Vector3i::Constant(s0);
  sched.spatial_levels[1] = Eigen::Vector3i::Constant(s1);
  sched.spatial_levels[2] = Eigen::Vector3i::Constant(target_s);
  sched.temporal_levels[0] = t0;
  sched.temporal_levels[1] = t1;
  sched.temporal_levels[2] = target_t;
  sched.next_level = cfg_.c2f_start >= 1.0 ? 2 : 0;
  if (sched.next_level == 2) {
    sched.spatial_levels[0] = sched.spatial_levels[2];
    sched.temporal_levels[0] = sched.temporal_levels[2];
  }

  const int64_t ipf = s.iters_per_frame;
  const int64_t boot =
      state_.fields.empty() ? static_cast<int64_t>(s.bootstrap_frames) * ipf : 0;
  const int64_t appends = static_cast<int64_t>(alloc_end - initial_last) * ipf;
  const int64_t refine = std::max<int64_t>(1, ipf * alloc_len / s.refine_div);
  sched.budget = std::max<int64_t>(1, boot + appends + refine);

  Rng rng = Rng::seeded(cfg_.seed, 0xf1e1d000 + state_.fields.size());
  LocalField<T> field = make_local_field<T>(
      sched.spatial_levels[sched.next_level == 2 ? 2 : 0],
      sched.temporal_levels[sched.next_level == 2 ? 2 : 0], cfg_.channels, bbox,
      first_frame, alloc_end, origin, cfg_.hidden_width, cfg_.view_freqs, rng,
      cfg_.initial_density, cfg_.grid_init_scale);
  field.first_frame = first_frame;
  field.last_frame = initial_last;

  state_.fields.push_back(std::move(field));
  sched_.push_back(sched);
  refit_adam_to_active();

  SpawnRecord rec;
  rec.model_index = static_cast<int>(state_.fields.size()) - 1;
  rec.first_frame = first_frame;
  rec.last_frame = initial_last;
  rec.origin_frame = origin_frame;
  rec.trigger = trigger;
  state_.spawn_log.push_back(rec);

  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "event=create model=%d first=%d origin=%d trigger=%s res=%d t_res=%d",
                rec.model_index, first_frame, origin_frame,
                trigger == SpawnTrigger::kBootstrap
                    ? "bootstrap"
                    : (trigger == SpawnTrigger::kCount ? "count" : "distance"),
                state_.fields.back().grid.spatial_res[0],
                state_.fields.back().grid.temporal_res);
  log_line(buf);
}

template <typename T>
void ProgressiveTrainer<T>::refit_adam_to_active() {
  LocalField<T>& f = active();
  adam_planes_.assign(6, AdamState<T>());
  for (int p = 0; p < 6; ++p) {
    adam_planes_[p].beta1 = cfg_.adam_beta1;
    adam_planes_[p].beta2 = cfg_.adam_beta2;
    adam_planes_[p].eps = cfg_.adam_eps;
    adam_planes_[p].init(f.grid.planes[p].size());
  }
  adam_mlp_.assign(12, AdamState<T>());
  int idx = 0;
  for (const auto* mlp : {&f.density_mlp, &f.color_mlp}) {
    for (int l = 0; l < mlp->layer_count(); ++l) {
      adam_mlp_[idx].beta1 = cfg_.adam_beta1;
      adam_mlp_[idx].beta2 = cfg_.adam_beta2;
      adam_mlp_[idx].eps = cfg_.adam_eps;
      adam_mlp_[idx].init(mlp->w[l].size());
      ++idx;
      adam_mlp_[idx].beta1 = cfg_.adam_beta1;
      adam_mlp_[idx].beta2 = cfg_.adam_beta2;
      adam_mlp_[idx].eps = cfg_.adam_eps;
      adam_mlp_[idx].init(mlp->b[l].size());
      ++idx;
    }
  }
}

template <typename T>
void ProgressiveTrainer<T>::maybe_upsample(bool flush) {
  FieldSchedule& s = sched_.back();
  while (s.next_level < 2) {
    const double threshold = s.next_level == 0 ? 0.5 : 0.75;
    if (!flush && static_cast<double>(s.counter) <
                      threshold * static_cast<double>(s.budget)) {
      break;
    }
    const int lv = flush ? 2 : s.next_level + 1;
    LocalField<T>& f = active();
    f.grid = upsample_grid(f.grid, s.spatial_levels[lv], s.temporal_levels[lv]);
    s.next_level = lv;
    // Plane shapes changed; restart their moments (decoders keep theirs).
    for (int p = 0; p < 6; ++p) {
      adam_planes_[p].init(f.grid.planes[p].size());
    }
    char buf[96];
    std::snprintf(buf, sizeof(buf), "event=upsample model=%d res=%d t_res=%d",
                  static_cast<int>(state_.fields.size()) - 1,
                  f.grid.spatial_res[0], f.grid.temporal_res);
    log_line(buf);
  }
}

template <typename T>
void ProgressiveTrainer<T>::train_iteration(const std::vector<int>& frames,
                                            bool flow_on, bool refine_phase) {
  const int K = dataset_.frame_count();
  const Intrinsics& intr = dataset_.intrinsics;
  const int W = intr.width, H = intr.height;
  const int n_samples = cfg_.n_samples;
  const int batch = cfg_.schedule.batch_rays;
  const int pose_horizon =
      cfg_.pose_optimization ? state_.appended_upto : K - 1;

  auto& rays = impl_->batch;
  auto& t_all = impl_->t_values;
  rays.clear();
  rays.reserve(batch);
  t_all.resize(static_cast<size_t>(batch) * n_samples);

  last_batch_frames_.clear();
  int n_depth_valid = 0, n_flow_valid = 0;
  const double stratum = (far_ - near_) / n_samples;
  for (int i = 0; i < batch; ++i) {
    const int f = frames[sampler_rng_.uniform_int(static_cast<int>(frames.size()))];
    const int u = sampler_rng_.uniform_int(W);
    const int v = sampler_rng_.uniform_int(H);
    PreparedRay pr;
    pr.ray = cast_ray(Vec2(u, v), state_.poses[f], intr, f);
    pr.z_factor = ray_z_factor(pr.ray.pixel, intr);
    const FrameRecord& fr = dataset_.frames[f];
    const size_t pix = static_cast<size_t>(v) * W + u;
    for (int c = 0; c < 3; ++c) pr.sup.gt_rgb[c] = fr.rgb.data[3 * pix + c];
    const float depth_z = fr.depth[pix];
    if (depth_z > 0) {
      pr.sup.gt_depth_ray = static_cast<double>(depth_z) / pr.z_factor;
      ++n_depth_valid;
    }
    if (!fr.flow_fwd.empty() && f + 1 <= pose_horizon) {
      pr.sup.flow_fwd_valid = true;
      pr.sup.gt_flow_fwd =
          Vec2(fr.flow_fwd[2 * pix], fr.flow_fwd[2 * pix + 1]);
      ++n_flow_valid;
    }
    if (!fr.flow_bwd.empty()) {
      pr.sup.flow_bwd_valid = true;
      pr.sup.gt_flow_bwd =
          Vec2(fr.flow_bwd[2 * pix], fr.flow_bwd[2 * pix + 1]);
      ++n_flow_valid;
    }
    for (int sidx = 0; sidx < n_samples; ++sidx) {
      t_all[static_cast<size_t>(i) * n_samples + sidx] =
          near_ + (sidx + sampler_rng_.uniform()) * stratum;
    }
    if (std::find(last_batch_frames_.begin(), last_batch_frames_.end(), f) ==
        last_batch_frames_.end()) {
      last_batch_frames_.push_back(f);
    }
    if (refine_phase) ++refine_ray_histogram_[f];
    rays.push_back(pr);
  }

  BatchContext<T> ctx;
  ctx.active = &active();
  ctx.prev = state_.fields.size() >= 2 ? &state_.fields[state_.fields.size() - 2]
                                       : nullptr;
  ctx.poses = state_.poses;
  ctx.pose_deltas = state_.pose_deltas;
  ctx.intr = intr;
  ctx.render.near = near_;
  ctx.render.far = far_;
  ctx.render.n_samples = n_samples;
  ctx.weights.lambda_z = cfg_.lambda_z;
  ctx.weights.lambda_f = cfg_.lambda_f;
  ctx.weights.flow_active = flow_on;
  ctx.los_epsilon = los_epsilon();
  ctx.inv_n_rgb = batch > 0 ? 1.0 / batch : 0.0;
  ctx.inv_n_depth = n_depth_valid > 0 ? 1.0 / n_depth_valid : 0.0;
  ctx.inv_n_flow = n_flow_valid > 0 ? 1.0 / n_flow_valid : 0.0;

  const int n_chunks = std::min(kChunks, batch);
  for (int c = 0; c < n_chunks; ++c) {
    if (impl_->chunk_grads[c].planes[0].size() !=
        active().grid.planes[0].size()) {
      impl_->chunk_grads[c].resize_like(active());
    } else {
      impl_->chunk_grads[c].zero();
    }
    std::fill(impl_->chunk_pose_grads[c].begin(),
              impl_->chunk_pose_grads[c].end(), Vec6::Zero());
  }

  impl_->pool.run_chunks(n_chunks, [&](int c) {
    const int begin = static_cast<int>(static_cast<int64_t>(batch) * c / n_chunks);
    const int end =
        static_cast<int>(static_cast<int64_t>(batch) * (c + 1) / n_chunks);
    if (begin == end) return;
    auto* ws = impl_->acquire_workspace();
    impl_->chunk_stats[c] = impl_->pipeline.forward_backward(
        ctx,
        std::span<const PreparedRay>(rays.data() + begin, end - begin),
        std::span<const double>(t_all.data() + static_cast<size_t>(begin) * n_samples,
                                static_cast<size_t>(end - begin) * n_samples),
        &impl_->chunk_grads[c],
        std::span<Vec6>(impl_->chunk_pose_grads[c]),
        ws);
    impl_->release_workspace(ws);
  });

  // Deterministic chunk-ordered reduction.
  if (impl_->grads_total.planes[0].size() != active().grid.planes[0].size()) {
    impl_->grads_total.resize_like(active());
  } else {
    impl_->grads_total.zero();
  }
  std::fill(impl_->pose_grads_total.begin(), impl_->pose_grads_total.end(),
            Vec6::Zero());
  BatchStats stats;
  for (int c = 0; c < n_chunks; ++c) {
    impl_->grads_total.add(impl_->chunk_grads[c]);
    for (int f = 0; f < K; ++f) {
      impl_->pose_grads_total[f] += impl_->chunk_pose_grads[c][f];
    }
    stats.parts.rgb += impl_->chunk_stats[c].parts.rgb;
    stats.parts.z += impl_->chunk_stats[c].parts.z;
    stats.parts.flow += impl_->chunk_stats[c].parts.flow;
    stats.total += impl_->chunk_stats[c].total;
    stats.flow_pairs_used += impl_->chunk_stats[c].flow_pairs_used;
    stats.blended_samples += impl_->chunk_stats[c].blended_samples;
  }
  last_parts_ = stats.parts;
  last_flow_active_ = flow_on;

  // Parameter updates.
  const double decay = lr_decay_factor();
  LocalField<T>& f = active();
  for (int p = 0; p < 6; ++p) {
    adam_step<T>(std::span<T>(f.grid.planes[p].data),
                 std::span<const T>(impl_->grads_total.planes[p]),
                 adam_planes_[p], cfg_.lr_planes * decay);
  }
  int blk = 0;
  for (auto* mlp : {&f.density_mlp, &f.color_mlp}) {
    auto& mg = mlp == &f.density_mlp ? impl_->grads_total.density
                                     : impl_->grads_total.color;
    for (int l = 0; l < mlp->layer_count(); ++l) {
      adam_step<T>(std::span<T>(mlp->w[l].data(), mlp->w[l].size()),
                   std::span<const T>(mg.dw[l].data(), mg.dw[l].size()),
                   adam_mlp_[blk++], cfg_.lr_mlp * decay);
      adam_step<T>(std::span<T>(mlp->b[l].data(), mlp->b[l].size()),
                   std::span<const T>(mg.db[l].data(), mg.db[l].size()),
                   adam_mlp_[blk++], cfg_.lr_mlp * decay);
    }
  }

  int pose_updates_this_iter = 0;
  if (cfg_.pose_optimization && flow_on) {
    for (int fr = 1; fr <= state_.appended_upto; ++fr) {
      const Vec6& g = impl_->pose_grads_total[fr];
      if (g.isZero()) continue;
      if (!adam_pose_[fr].initialized()) {
        adam_pose_[fr].beta1 = cfg_.adam_beta1;
        adam_pose_[fr].beta2 = cfg_.adam_beta2;
        adam_pose_[fr].eps = cfg_.adam_eps;
        adam_pose_[fr].init(6);
      }
      Vec6& delta = state_.pose_deltas[fr];
      adam_step<double>(std::span<double>(delta.data(), 6),
                        std::span<const double>(g.data(), 6), adam_pose_[fr],
                        cfg_.lr_pose * decay);
      state_.poses[fr] = pose_compose(se3_exp(delta), state_.poses[fr]);
      delta.setZero();
      ++pose_updates_this_iter;
    }
  }
  pose_updates_ += pose_updates_this_iter;

  FieldSchedule& sc = sched_.back();
  sc.counter += 1;
  total_iterations_ += 1;
  maybe_upsample(false);

  if (log_ && (total_iterations_ % 25 == 0 || total_iterations_ == 1)) {
    char buf[256];
    std::snprintf(
        buf, sizeof(buf),
        "iter=%lld phase=%s model=%d loss=%.6g rgb=%.6g z=%.6g f=%.6g "
        "lr_scale=%.4g eps=%.4g flow=%d pose_updates=%d blend_samples=%d",
        static_cast<long long>(total_iterations_),
        refine_phase ? "refine" : "append",
        static_cast<int>(state_.fields.size()) - 1, stats.total,
        stats.parts.rgb, stats.parts.z, stats.parts.flow, decay,
        ctx.los_epsilon, flow_on ? 1 : 0, pose_updates_this_iter,
        stats.blended_samples);
    log_line(buf);
  }
}

template <typename T>
void ProgressiveTrainer<T>::bootstrap() {
  const ScheduleConfig& s = cfg_.schedule;
  if (!state_.fields.empty()) {
    throw std::logic_error("bootstrap: trainer already has fields");
  }
  // Poses 0..bootstrap-1 start at the gauge anchor (identity) or ground
  // truth when pose optimization is off; either way frame 0 is pinned.
  state_.appended_upto = s.bootstrap_frames - 1;
  create_field(0, 0, s.bootstrap_frames - 1, SpawnTrigger::kBootstrap);
  const std::vector<int> frames = supervised_frames(0, s.bootstrap_frames - 1);
  const int64_t iters = static_cast<int64_t>(s.bootstrap_frames) * s.iters_per_frame;
  for (int64_t i = 0; i < iters; ++i) {
    train_iteration(frames, true, false);
  }
  bootstrap_iterations_ += iters;
}

template <typename T>
void ProgressiveTrainer<T>::append_frame(int k) {
  if (k != state_.appended_upto + 1) {
    throw std::logic_error("append_frame: out-of-order append of frame " +
                           std::to_string(k));
  }
  if (cfg_.pose_optimization || dataset_.gt_trajectory.empty()) {
    state_.poses[k] = state_.poses[k - 1];  // prior-pose initialization
  }
  active().last_frame = k;
  state_.appended_upto = k;
  const int w_first = std::max(active().first_frame, k - cfg_.schedule.recent_window + 1);
  const std::vector<int> frames = supervised_frames(w_first, k);
  for (int i = 0; i < cfg_.schedule.iters_per_frame; ++i) {
    train_iteration(frames, true, false);
  }
  append_iterations_ += cfg_.schedule.iters_per_frame;
}

template <typename T>
bool ProgressiveTrainer<T>::should_spawn(int k) const {
  const LocalField<T>& f = active();
  const int count = k - f.first_frame + 1;
  if (count > cfg_.schedule.t_k) return true;
  const double dist = (state_.poses[k].center() - f.origin).norm();
  return dist > cfg_.schedule.t_d;
}

template <typename T>
void ProgressiveTrainer<T>::handle_spawn(int k) {
  active().last_frame = k - 1;  // the trigger frame moves to the new model
  refine_model(false);
  spawn_model(k);
}

template <typename T>
void ProgressiveTrainer<T>::spawn_model(int k) {
  LocalField<T>& prev = active();
  const int prev_len = prev.last_frame - prev.first_frame + 1;
  const int ov = std::min(cfg_.schedule.overlap, prev_len);
  prev.overlap_out = ov;
  const SpawnTrigger trigger =
      (k - prev.first_frame + 1) > cfg_.schedule.t_k ? SpawnTrigger::kCount
                                                     : SpawnTrigger::kDistance;
  state_.spawn_log[state_.fields.size() - 1].last_frame = prev.last_frame;
  freeze_active();
  create_field(k - ov, k, k, trigger);
  active().overlap_in = ov;
}

template <typename T>
void ProgressiveTrainer<T>::freeze_active() {
  LocalField<T>& f = active();
  f.frozen = true;
  // Offload: optimizer moments are dropped; the parameters stay resident
  // for overlap blending and inference.
  for (auto& a : adam_planes_) a.release();
  for (auto& a : adam_mlp_) a.release();
  if (!cfg_.output_dir.empty()) {
    save_field(f, cfg_.output_dir + "/" +
                      checkpoint_name(static_cast<int>(state_.fields.size()) - 1));
  }
  char buf[96];
  std::snprintf(buf, sizeof(buf), "event=freeze model=%d span=%d-%d",
                static_cast<int>(state_.fields.size()) - 1, f.first_frame,
                f.last_frame);
  log_line(buf);
}

template <typename T>
void ProgressiveTrainer<T>::refine_model(bool final_phase) {
  LocalField<T>& f = active();
  const int span = f.last_frame - f.first_frame + 1;
  const ScheduleConfig& s = cfg_.schedule;
  const int64_t R = std::max<int64_t>(
      1, static_cast<int64_t>(s.iters_per_frame) * span / s.refine_div);
  const int64_t cutoff = static_cast<int64_t>(
      std::ceil(s.refine_flow_cutoff * static_cast<double>(R)));
  maybe_upsample(true);  // reach full resolution before refining
  const std::vector<int> frames = supervised_frames(f.first_frame, f.last_frame);
  char buf[128];
  std::snprintf(buf, sizeof(buf),
                "event=refine_start model=%d span=%d-%d iters=%lld cutoff=%lld final=%d",
                static_cast<int>(state_.fields.size()) - 1, f.first_frame,
                f.last_frame, static_cast<long long>(R),
                static_cast<long long>(cutoff), final_phase ? 1 : 0);
  log_line(buf);
  for (int64_t r = 0; r < R; ++r) {
    train_iteration(frames, r < cutoff, true);
  }
  refine_iterations_ += R;
}

template <typename T>
TrainSummary ProgressiveTrainer<T>::train() {
  const int K = dataset_.frame_count();
  bootstrap();
  for (int k = cfg_.schedule.bootstrap_frames; k < K; ++k) {
    append_frame(k);
    if (k < K - 1 && should_spawn(k)) {
      handle_spawn(k);
    }
  }
  refine_model(true);
  state_.spawn_log[state_.fields.size() - 1].last_frame = active().last_frame;
  freeze_active();
  write_outputs();

  TrainSummary summary;
  summary.total_iterations = total_iterations_;
  summary.bootstrap_iterations = bootstrap_iterations_;
  summary.append_iterations = append_iterations_;
  summary.refine_iterations = refine_iterations_;
  summary.pose_updates = pose_updates_;
  summary.last_parts = last_parts_;
  summary.near = near_;
  summary.far = far_;
  summary.spawn_log = state_.spawn_log;
  return summary;
}

template <typename T>
void ProgressiveTrainer<T>::write_outputs() {
  if (cfg_.output_dir.empty()) return;
  write_trajectory(state_.poses, cfg_.output_dir + "/trajectory.txt");
  std::ofstream models(cfg_.output_dir + "/models.txt");
  if (!models) throw DataError("cannot write models.txt");
  models << "# index file first_frame last_frame origin_frame frozen\n";
  for (size_t i = 0; i < state_.fields.size(); ++i) {
    const LocalField<T>& f = state_.fields[i];
    save_field(f, cfg_.output_dir + "/" + checkpoint_name(static_cast<int>(i)));
    models << i << ' ' << checkpoint_name(static_cast<int>(i)) << ' '
           << f.first_frame << ' ' << f.last_frame << ' '
           << state_.spawn_log[i].origin_frame << ' ' << (f.frozen ? 1 : 0)
           << '\n';
  }
  if (log_) log_->flush();
}

template class ProgressiveTrainer<float>;
template class ProgressiveTrainer<double>;

TrainSummary train_progressive(const Dataset& dataset, const RunConfig& config) {
  if (config.precision == 64) {
    ProgressiveTrainer<double> trainer(dataset, config);
    return trainer.train();
  }
  ProgressiveTrainer<float> trainer(dataset, config);
  return trainer.train();
}

}  // namespace hexflow
