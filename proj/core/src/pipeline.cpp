// SPDX-License-Identifier: Apache-2.0
#include "hexflow/pipeline.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <mutex>

#include "hexflow/threading.hpp"

namespace hexflow {

namespace {

// Linear ramp over a field's overlap regions; mirrors blend_weights().
inline double field_ramp(double frame_time, int first, int last, int ov_in,
                         int ov_out) {
  double ramp_in = 1.0, ramp_out = 1.0;
  if (ov_in > 0) ramp_in = std::min(1.0, (frame_time - first) / ov_in);
  if (ov_out > 0) ramp_out = std::min(1.0, (last + 1.0 - frame_time) / ov_out);
  return std::min(ramp_in, ramp_out);
}

}  // namespace

template <typename T>
struct PipelineWorkspace {
  using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

  // Per-field gathered sample data (0 = active, 1 = prev/frozen).
  struct FieldBuf {
    std::vector<int32_t> gid;        // chunk-global sample index
    std::vector<Stencil> stencils;   // 6 per sample
    MatX plane_vals;                 // M x 6C, per-plane bilinear values
    MatX fused;                      // M x 3C
    MatX h1, h2;                     // density post-activations
    VecX sigma;                      // M
    MatX color_in;                   // M x (3C + enc)
    MatX c1, c2;                     // color post-activations
    MatX rgb;                        // M x 3
    int count = 0;
  };
  FieldBuf fb[2];

  // Blended per-sample arrays.
  std::vector<T> sigma_blend, rgb_blend, weight, trans_next, dsigma, drgb;
  // Per-ray data.
  std::vector<double> beta_a, beta_p;
  std::vector<double> out_color, out_wsum, out_dsum, out_depth;
};

template <typename T>
BatchPipeline<T>::BatchPipeline() = default;
template <typename T>
BatchPipeline<T>::~BatchPipeline() = default;

template <typename T>
PipelineWorkspace<T>* BatchPipeline<T>::new_workspace() {
  return new PipelineWorkspace<T>();
}
template <typename T>
void BatchPipeline<T>::free_workspace(PipelineWorkspace<T>* ws) {
  delete ws;
}

namespace {

template <typename T>
void gather_field_samples(const LocalField<T>& field,
                          std::span<const PreparedRay> rays,
                          std::span<const double> t_values, int n_samples,
                          const std::vector<double>& beta,
                          typename PipelineWorkspace<T>::FieldBuf* fb) {
  const HexPlaneGrid<T>& g = field.grid;
  const int C = g.channels;
  const int n_rays = static_cast<int>(rays.size());

  fb->gid.clear();
  fb->stencils.clear();
  for (int r = 0; r < n_rays; ++r) {
    if (beta[r] == 0.0) continue;
    const Ray& ray = rays[r].ray;
    const double frame_time = ray.frame_index;
    for (int i = 0; i < n_samples; ++i) {
      const int gid = r * n_samples + i;
      const Vec3 p = ray.origin + t_values[gid] * ray.direction;
      Vec4 xyzt;
      if (!g.normalize(p, frame_time, &xyzt)) continue;
      fb->gid.push_back(gid);
      for (int pl = 0; pl < 6; ++pl) {
        fb->stencils.push_back(make_stencil(xyzt[kPlaneAxes[pl][0]],
                                            xyzt[kPlaneAxes[pl][1]],
                                            g.planes[pl].rows,
                                            g.planes[pl].cols));
      }
    }
  }
  const int M = static_cast<int>(fb->gid.size());
  fb->count = M;
  if (M == 0) return;

  fb->plane_vals.resize(M, 6 * C);
  fb->fused.resize(M, 3 * C);
  for (int j = 0; j < M; ++j) {
    for (int pl = 0; pl < 6; ++pl) {
      const Plane<T>& plane = g.planes[pl];
      const Stencil& s = fb->stencils[static_cast<size_t>(j) * 6 + pl];
      const T* p00 = plane.at(s.i0, s.j0);
      const T* p01 = plane.at(s.i0, s.j0 + 1);
      const T* p10 = plane.at(s.i0 + 1, s.j0);
      const T* p11 = plane.at(s.i0 + 1, s.j0 + 1);
      const T fa = static_cast<T>(s.fa), fbb = static_cast<T>(s.fb);
      const T w00 = (T(1) - fa) * (T(1) - fbb);
      const T w01 = (T(1) - fa) * fbb;
      const T w10 = fa * (T(1) - fbb);
      const T w11 = fa * fbb;
      T* dst = fb->plane_vals.data() +
               static_cast<size_t>(pl) * C * M + j;  // column-major stride M
      for (int c = 0; c < C; ++c) {
        dst[static_cast<size_t>(c) * M] =
            w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  for (int pair = 0; pair < 3; ++pair) {
    const int pa = kFusionPairs[pair][0], pb = kFusionPairs[pair][1];
    fb->fused.middleCols(pair * C, C) =
        fb->plane_vals.middleCols(pa * C, C).cwiseProduct(
            fb->plane_vals.middleCols(pb * C, C));
  }
}

template <typename T>
void mlp_forward_batch(const DecoderMlp<T>& mlp,
                       const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& x,
                       Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>* h1,
                       Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>* h2,
                       Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>* out,
                       double* relu_margin) {
  // Two hidden layers (fixed by construction in make_local_field).
  h1->noalias() = x * mlp.w[0];
  h1->rowwise() += mlp.b[0].transpose();
  if (relu_margin && h1->size() > 0) {
    *relu_margin = std::min(
        *relu_margin, static_cast<double>(h1->array().abs().minCoeff()));
  }
  *h1 = h1->cwiseMax(T(0));
  h2->noalias() = *h1 * mlp.w[1];
  h2->rowwise() += mlp.b[1].transpose();
  if (relu_margin && h2->size() > 0) {
    *relu_margin = std::min(
        *relu_margin, static_cast<double>(h2->array().abs().minCoeff()));
  }
  *h2 = h2->cwiseMax(T(0));
  out->noalias() = *h2 * mlp.w[2];
  out->rowwise() += mlp.b[2].transpose();
}

// Backward through the two-hidden-layer MLP; accumulates parameter grads
// and returns the input gradient.
template <typename T>
void mlp_backward_batch(
    const DecoderMlp<T>& mlp,
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& x,
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& h1,
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& h2,
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& d_out,
    MlpGrads<T>* grads,
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>* d_x) {
  using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  grads->dw[2].noalias() += h2.transpose() * d_out;
  grads->db[2].noalias() += d_out.colwise().sum().transpose();
  MatX dh2 = d_out * mlp.w[2].transpose();
  dh2 = dh2.cwiseProduct((h2.array() > T(0)).template cast<T>().matrix());
  grads->dw[1].noalias() += h1.transpose() * dh2;
  grads->db[1].noalias() += dh2.colwise().sum().transpose();
  MatX dh1 = dh2 * mlp.w[1].transpose();
  dh1 = dh1.cwiseProduct((h1.array() > T(0)).template cast<T>().matrix());
  grads->dw[0].noalias() += x.transpose() * dh1;
  grads->db[0].noalias() += dh1.colwise().sum().transpose();
  d_x->noalias() = dh1 * mlp.w[0].transpose();
}

}  // namespace

template <typename T>
static BatchStats run_pipeline(const BatchContext<T>& ctx,
                               std::span<const PreparedRay> rays,
                               std::span<const double> t_values,
                               bool with_grads, FieldGrads<T>* field_grads,
                               std::span<Vec6> pose_grads,
                               PipelineWorkspace<T>* ws) {
  using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  const LocalField<T>& active = *ctx.active;
  const int n = ctx.render.n_samples;
  const int n_rays = static_cast<int>(rays.size());
  const int M_all = n_rays * n;
  const int C = active.grid.channels;
  const int enc_dim = direction_encoding_dim(active.view_freqs);
  const double far = ctx.render.far;
  BatchStats stats;
  stats.rays = n_rays;
  assert(static_cast<int>(t_values.size()) == M_all);

  // Blend weights per ray over {active, prev}.
  ws->beta_a.assign(n_rays, 1.0);
  ws->beta_p.assign(n_rays, 0.0);
  for (int r = 0; r < n_rays; ++r) {
    const double ft = rays[r].ray.frame_index;
    const bool prev_covers = ctx.prev && ctx.prev->covers_frame(ft);
    if (!prev_covers) continue;
    const double ra = field_ramp(ft, active.first_frame, active.last_frame,
                                 active.overlap_in, active.overlap_out);
    const double rp = field_ramp(ft, ctx.prev->first_frame, ctx.prev->last_frame,
                                 ctx.prev->overlap_in, ctx.prev->overlap_out);
    const double total = ra + rp;
    if (total > 0) {
      ws->beta_a[r] = ra / total;
      ws->beta_p[r] = rp / total;
    } else {
      ws->beta_a[r] = ws->beta_p[r] = 0.5;
    }
    if (ws->beta_p[r] > 0) stats.blended_samples += n;
  }

  // Gather + decode per field.
  const LocalField<T>* fields[2] = {&active, ctx.prev};
  std::vector<double> beta_one(n_rays, 1.0);
  for (int f = 0; f < 2; ++f) {
    if (!fields[f]) {
      ws->fb[f].count = 0;
      continue;
    }
    gather_field_samples<T>(*fields[f], rays, t_values, n,
                            f == 0 ? beta_one : ws->beta_p, &ws->fb[f]);
    auto& fb = ws->fb[f];
    if (fb.count == 0) continue;
    MatX raw;
    mlp_forward_batch(fields[f]->density_mlp, fb.fused, &fb.h1, &fb.h2, &raw,
                      &stats.relu_margin);
    fb.sigma.resize(fb.count);
    for (int j = 0; j < fb.count; ++j) fb.sigma[j] = softplus(raw(j, 0));
    // Color input: fused features then the per-ray direction encoding.
    fb.color_in.resize(fb.count, 3 * C + enc_dim);
    fb.color_in.leftCols(3 * C) = fb.fused;
    T enc[192];
    int last_ray = -1;
    for (int j = 0; j < fb.count; ++j) {
      const int r = fb.gid[j] / n;
      if (r != last_ray) {
        encode_direction(rays[r].ray.direction, fields[f]->view_freqs, enc);
        last_ray = r;
      }
      for (int e = 0; e < enc_dim; ++e) fb.color_in(j, 3 * C + e) = enc[e];
    }
    MatX craw;
    mlp_forward_batch(fields[f]->color_mlp, fb.color_in, &fb.c1, &fb.c2, &craw,
                      &stats.relu_margin);
    fb.rgb.resize(fb.count, 3);
    for (int j = 0; j < fb.count; ++j) {
      for (int c = 0; c < 3; ++c) fb.rgb(j, c) = sigmoid(craw(j, c));
    }
  }

  // Blend per-sample density and color.
  ws->sigma_blend.assign(M_all, T(0));
  ws->rgb_blend.assign(3 * static_cast<size_t>(M_all), T(0));
  for (int f = 0; f < 2; ++f) {
    auto& fb = ws->fb[f];
    for (int j = 0; j < fb.count; ++j) {
      const int gid = fb.gid[j];
      const int r = gid / n;
      const T b = static_cast<T>(f == 0 ? ws->beta_a[r] : ws->beta_p[r]);
      ws->sigma_blend[gid] += b * fb.sigma[j];
      for (int c = 0; c < 3; ++c) ws->rgb_blend[3 * gid + c] += b * fb.rgb(j, c);
    }
  }

  // Composite each ray; keep weights and next-sample transmittance.
  ws->weight.assign(M_all, T(0));
  ws->trans_next.assign(M_all, T(0));
  ws->out_color.assign(3 * static_cast<size_t>(n_rays), 0.0);
  ws->out_wsum.assign(n_rays, 0.0);
  ws->out_dsum.assign(n_rays, 0.0);
  ws->out_depth.assign(n_rays, 0.0);
  for (int r = 0; r < n_rays; ++r) {
    T log_trans = T(0);
    double wsum = 0, dsum = 0;
    double col[3] = {0, 0, 0};
    for (int i = 0; i < n; ++i) {
      const int gid = r * n + i;
      const double delta =
          (i + 1 < n) ? (t_values[gid + 1] - t_values[gid]) : (far - t_values[gid]);
      const T sd = ws->sigma_blend[gid] * static_cast<T>(delta);
      const T trans = std::exp(log_trans);
      const T alpha = -std::expm1(-sd);
      const T w = trans * alpha;
      ws->weight[gid] = w;
      log_trans -= sd;
      ws->trans_next[gid] = std::exp(log_trans);  // T_i * (1 - alpha_i)
      wsum += static_cast<double>(w);
      dsum += static_cast<double>(w) * t_values[gid];
      for (int c = 0; c < 3; ++c) {
        col[c] += static_cast<double>(w) * static_cast<double>(ws->rgb_blend[3 * gid + c]);
      }
    }
    ws->out_wsum[r] = wsum;
    ws->out_dsum[r] = dsum;
    ws->out_depth[r] = dsum / std::max(wsum, 1e-10);
    for (int c = 0; c < 3; ++c) ws->out_color[3 * r + c] = col[c];
  }

  // Losses and (optionally) the backward pass down to per-sample grads.
  if (with_grads) {
    ws->dsigma.assign(M_all, T(0));
    ws->drgb.assign(3 * static_cast<size_t>(M_all), T(0));
  }
  double sum_rgb = 0, sum_z = 0, sum_f = 0;
  const bool flow_on = ctx.weights.flow_active && ctx.inv_n_flow > 0;
  for (int r = 0; r < n_rays; ++r) {
    const PreparedRay& pr = rays[r];
    double d_color[3] = {0, 0, 0};
    double d_depth_hat = 0;
    // Photometric term.
    for (int c = 0; c < 3; ++c) {
      const double e = ws->out_color[3 * r + c] - pr.sup.gt_rgb[c];
      sum_rgb += e * e;
      d_color[c] = 2.0 * e * ctx.inv_n_rgb;
    }
    // Depth + line-of-sight term.
    const bool depth_valid = pr.sup.gt_depth_ray > 0 && ctx.inv_n_depth > 0;
    double mass_in = 0;
    if (depth_valid) {
      const double gt_d = pr.sup.gt_depth_ray;
      double mass_out_sq = 0;
      for (int i = 0; i < n; ++i) {
        const int gid = r * n + i;
        const double w = static_cast<double>(ws->weight[gid]);
        if (std::abs(t_values[gid] - gt_d) <= ctx.los_epsilon) {
          mass_in += w;
        } else {
          mass_out_sq += w * w;
        }
      }
      const double derr = ws->out_depth[r] - gt_d;
      const double surf = 1.0 - mass_in;
      sum_z += derr * derr + mass_out_sq + surf * surf;
      d_depth_hat += ctx.weights.lambda_z * ctx.inv_n_depth * 2.0 * derr;
    }
    // Flow term (both temporal directions).
    if (flow_on) {
      const double depth_z = ws->out_depth[r] * pr.z_factor;
      for (int dir = 0; dir < 2; ++dir) {
        const bool sup_valid = dir == 0 ? pr.sup.flow_fwd_valid : pr.sup.flow_bwd_valid;
        if (!sup_valid || depth_z <= 1e-9) continue;
        const int k = pr.ray.frame_index;
        const int adj = dir == 0 ? k + 1 : k - 1;
        const Vec2& gt = dir == 0 ? pr.sup.gt_flow_fwd : pr.sup.gt_flow_bwd;
        Vec2 flow_value;
        if (with_grads) {
          // Backward mode requires zero deltas; Jacobians are taken there.
          const FlowJacobians jac = induced_flow_grad(
              pr.ray.pixel, depth_z, ctx.poses[k], ctx.poses[adj], ctx.intr);
          if (!jac.valid) continue;
          flow_value = jac.flow;
          const Vec2 e = jac.flow - gt;
          sum_f += std::abs(e.x()) + std::abs(e.y());
          ++stats.flow_pairs_used;
          const double scale = ctx.weights.lambda_f * ctx.inv_n_flow;
          const Vec2 sgn(scale * (e.x() > 0 ? 1.0 : (e.x() < 0 ? -1.0 : 0.0)),
                         scale * (e.y() > 0 ? 1.0 : (e.y() < 0 ? -1.0 : 0.0)));
          pose_grads[k] += jac.d_pose_k.transpose() * sgn;
          pose_grads[adj] += jac.d_pose_adj.transpose() * sgn;
          d_depth_hat += sgn.dot(jac.d_depth) * pr.z_factor;
        } else {
          const Pose ek = pose_compose(se3_exp(ctx.pose_deltas[k]), ctx.poses[k]);
          const Pose ea = pose_compose(se3_exp(ctx.pose_deltas[adj]), ctx.poses[adj]);
          const auto flow = induced_flow(pr.ray.pixel, depth_z, ek, ea, ctx.intr);
          if (!flow) continue;
          flow_value = *flow;
          const Vec2 e = *flow - gt;
          sum_f += std::abs(e.x()) + std::abs(e.y());
          ++stats.flow_pairs_used;
        }
        const Vec2 e = flow_value - gt;
        stats.flow_l1_margin =
            std::min({stats.flow_l1_margin, std::abs(e.x()), std::abs(e.y())});
        const Vec2 target = pr.ray.pixel - flow_value;
        stats.flow_edge_margin = std::min(
            {stats.flow_edge_margin, target.x(), ctx.intr.width - 1.0 - target.x(),
             target.y(), ctx.intr.height - 1.0 - target.y()});
      }
    }
    if (!with_grads) continue;

    // Per-sample weight gradients.
    const double wsum = ws->out_wsum[r];
    const double dsum = ws->out_dsum[r];
    const double denom = std::max(wsum, 1e-10);
    const double d_dsum = d_depth_hat / denom;
    const double d_wsum = wsum > 1e-10 ? -d_depth_hat * dsum / (wsum * wsum) : 0.0;
    const double gt_d = pr.sup.gt_depth_ray;
    const double los_scale = ctx.weights.lambda_z * ctx.inv_n_depth;
    double suffix_gw = 0.0;
    for (int i = n - 1; i >= 0; --i) {
      const int gid = r * n + i;
      const double w = static_cast<double>(ws->weight[gid]);
      double g = d_wsum + d_dsum * t_values[gid];
      for (int c = 0; c < 3; ++c) {
        g += d_color[c] * static_cast<double>(ws->rgb_blend[3 * gid + c]);
        ws->drgb[3 * gid + c] = static_cast<T>(d_color[c] * w);
      }
      if (depth_valid) {
        if (std::abs(t_values[gid] - gt_d) <= ctx.los_epsilon) {
          g += los_scale * (-2.0) * (1.0 - mass_in);
        } else {
          g += los_scale * 2.0 * w;
        }
      }
      const double ds = g * static_cast<double>(ws->trans_next[gid]) - suffix_gw;
      const double delta =
          (i + 1 < n) ? (t_values[gid + 1] - t_values[gid]) : (far - t_values[gid]);
      ws->dsigma[gid] = static_cast<T>(ds * delta);
      suffix_gw += g * w;
    }
  }

  stats.parts.rgb = sum_rgb * ctx.inv_n_rgb;
  stats.parts.z = ctx.inv_n_depth > 0 ? sum_z * ctx.inv_n_depth : 0.0;
  stats.parts.flow = flow_on ? sum_f * ctx.inv_n_flow : 0.0;
  LossWeights lw = ctx.weights;
  lw.flow_active = flow_on;
  stats.total = total_loss(stats.parts, lw);
  if (!with_grads) return stats;

  // Backward through the active field's decoders and planes.
  auto& fb = ws->fb[0];
  if (fb.count == 0) return stats;
  const int M = fb.count;
  MatX d_sigma_f(M, 1), d_rgb_f(M, 3);
  for (int j = 0; j < M; ++j) {
    const int gid = fb.gid[j];
    const int r = gid / n;
    const T b = static_cast<T>(ws->beta_a[r]);
    // d softplus(raw)/d raw = logistic(raw) = 1 - exp(-sigma).
    d_sigma_f(j, 0) = b * ws->dsigma[gid] * (-std::expm1(-fb.sigma[j]));
    for (int c = 0; c < 3; ++c) {
      const T col = fb.rgb(j, c);
      d_rgb_f(j, c) = b * ws->drgb[3 * gid + c] * col * (T(1) - col);
    }
  }
  MatX d_fused(M, 3 * C);
  mlp_backward_batch(active.density_mlp, fb.fused, fb.h1, fb.h2, d_sigma_f,
                     &field_grads->density, &d_fused);
  MatX d_color_in;
  mlp_backward_batch(active.color_mlp, fb.color_in, fb.c1, fb.c2, d_rgb_f,
                     &field_grads->color, &d_color_in);
  d_fused += d_color_in.leftCols(3 * C);

  // Fusion products back to the six planes.
  for (int pair = 0; pair < 3; ++pair) {
    const int pa = kFusionPairs[pair][0], pb = kFusionPairs[pair][1];
    for (int side = 0; side < 2; ++side) {
      const int p = side == 0 ? pa : pb;
      const int other = side == 0 ? pb : pa;
      const Plane<T>& plane = active.grid.planes[p];
      std::vector<T>& gplane = field_grads->planes[p];
      for (int j = 0; j < M; ++j) {
        const Stencil& s = fb.stencils[static_cast<size_t>(j) * 6 + p];
        const T fa = static_cast<T>(s.fa), fbb = static_cast<T>(s.fb);
        const T w00 = (T(1) - fa) * (T(1) - fbb);
        const T w01 = (T(1) - fa) * fbb;
        const T w10 = fa * (T(1) - fbb);
        const T w11 = fa * fbb;
        const size_t b00 = (static_cast<size_t>(s.i0) * plane.cols + s.j0) * C;
        const size_t b01 = b00 + C;
        const size_t b10 = b00 + static_cast<size_t>(plane.cols) * C;
        const size_t b11 = b10 + C;
        for (int c = 0; c < C; ++c) {
          const T dv = d_fused(j, pair * C + c) * fb.plane_vals(j, other * C + c);
          gplane[b00 + c] += w00 * dv;
          gplane[b01 + c] += w01 * dv;
          gplane[b10 + c] += w10 * dv;
          gplane[b11 + c] += w11 * dv;
        }
      }
    }
  }
  return stats;
}

template <typename T>
BatchStats BatchPipeline<T>::forward(const BatchContext<T>& ctx,
                                     std::span<const PreparedRay> rays,
                                     std::span<const double> t_values,
                                     PipelineWorkspace<T>* ws) const {
  return run_pipeline<T>(ctx, rays, t_values, false, nullptr, {}, ws);
}

template <typename T>
BatchStats BatchPipeline<T>::forward_backward(
    const BatchContext<T>& ctx, std::span<const PreparedRay> rays,
    std::span<const double> t_values, FieldGrads<T>* field_grads,
    std::span<Vec6> pose_grads, PipelineWorkspace<T>* ws) const {
#ifndef NDEBUG
  for (const auto& d : ctx.pose_deltas) assert(d.isZero());
#endif
  return run_pipeline<T>(ctx, rays, t_values, true, field_grads, pose_grads, ws);
}

template <typename T>
void BatchPipeline<T>::render_batch(const BatchContext<T>& ctx,
                                    std::span<const PreparedRay> rays,
                                    std::span<const double> t_values,
                                    PipelineWorkspace<T>* ws,
                                    std::span<T> out_rgb,
                                    std::span<T> out_depth,
                                    std::span<T> out_opacity) const {
  run_pipeline<T>(ctx, rays, t_values, false, nullptr, {}, ws);
  for (size_t r = 0; r < rays.size(); ++r) {
    for (int c = 0; c < 3; ++c) {
      out_rgb[3 * r + c] = static_cast<T>(ws->out_color[3 * r + c]);
    }
    out_depth[r] = static_cast<T>(ws->out_depth[r]);
    out_opacity[r] = static_cast<T>(ws->out_wsum[r]);
  }
}

template <typename T>
FrameRender<T> render_frame_image(std::span<const LocalField<T>* const> fields,
                                  const Pose& pose, double frame_time,
                                  const Intrinsics& intr,
                                  const RenderParams& params, ThreadPool* pool) {
  std::vector<const LocalField<T>*> cover;
  for (const auto* f : fields) {
    if (f->covers_frame(frame_time)) cover.push_back(f);
  }
  if (cover.empty()) {
    throw std::domain_error("render_frame_image: no field covers frame " +
                            std::to_string(frame_time));
  }
  if (cover.size() > 2) {
    throw std::domain_error("render_frame_image: more than two covering fields");
  }
  const int W = intr.width, H = intr.height;
  const size_t n_px = static_cast<size_t>(W) * H;

  BatchContext<T> ctx;
  ctx.active = cover[0];
  ctx.prev = cover.size() > 1 ? cover[1] : nullptr;
  ctx.intr = intr;
  ctx.render = params;

  std::vector<PreparedRay> rays(n_px);
  std::vector<double> t_all(n_px * params.n_samples);
  const std::vector<double> t_template =
      sample_along_ray(params.near, params.far, params.n_samples, nullptr);
  const int frame_index = static_cast<int>(frame_time);
  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const size_t pix = static_cast<size_t>(v) * W + u;
      rays[pix].ray = cast_ray(Vec2(u, v), pose, intr, frame_index);
      rays[pix].z_factor = ray_z_factor(Vec2(u, v), intr);
      std::copy(t_template.begin(), t_template.end(),
                t_all.begin() + pix * params.n_samples);
    }
  }
  std::vector<T> rgb(n_px * 3), depth(n_px), opacity(n_px);
  BatchPipeline<T> pipeline;
  enable_flush_to_zero();  // the caller participates in chunk draining

  auto run_block = [&](PipelineWorkspace<T>* ws, size_t begin, size_t end) {
    pipeline.render_batch(
        ctx, std::span<const PreparedRay>(rays.data() + begin, end - begin),
        std::span<const double>(t_all.data() + begin * params.n_samples,
                                (end - begin) * params.n_samples),
        ws, std::span<T>(rgb.data() + 3 * begin, 3 * (end - begin)),
        std::span<T>(depth.data() + begin, end - begin),
        std::span<T>(opacity.data() + begin, end - begin));
  };
  if (pool) {
    std::vector<PipelineWorkspace<T>*> ws_pool;
    std::mutex mu;
    const int n_chunks = 32;
    pool->run_chunks(n_chunks, [&](int c) {
      const size_t begin = n_px * c / n_chunks;
      const size_t end = n_px * (c + 1) / n_chunks;
      if (begin == end) return;
      PipelineWorkspace<T>* ws = nullptr;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (!ws_pool.empty()) {
          ws = ws_pool.back();
          ws_pool.pop_back();
        }
      }
      if (!ws) ws = BatchPipeline<T>::new_workspace();
      run_block(ws, begin, end);
      std::lock_guard<std::mutex> lock(mu);
      ws_pool.push_back(ws);
    });
    for (auto* ws : ws_pool) BatchPipeline<T>::free_workspace(ws);
  } else {
    auto* ws = BatchPipeline<T>::new_workspace();
    run_block(ws, 0, n_px);
    BatchPipeline<T>::free_workspace(ws);
  }

  FrameRender<T> out;
  out.covering_fields = static_cast<int>(cover.size());
  out.rgb.width = W;
  out.rgb.height = H;
  out.rgb.channels = 3;
  out.rgb.data.resize(3 * n_px);
  out.depth_z.resize(n_px);
  out.opacity.resize(n_px);
  for (size_t i = 0; i < n_px; ++i) {
    for (int c = 0; c < 3; ++c) {
      out.rgb.data[3 * i + c] = static_cast<float>(rgb[3 * i + c]);
    }
    out.depth_z[i] =
        static_cast<float>(static_cast<double>(depth[i]) * rays[i].z_factor);
    out.opacity[i] = static_cast<float>(opacity[i]);
  }
  return out;
}

template struct FrameRender<float>;
template struct FrameRender<double>;
template FrameRender<float> render_frame_image<float>(
    std::span<const LocalField<float>* const>, const Pose&, double,
    const Intrinsics&, const RenderParams&, ThreadPool*);
template FrameRender<double> render_frame_image<double>(
    std::span<const LocalField<double>* const>, const Pose&, double,
    const Intrinsics&, const RenderParams&, ThreadPool*);

// ---------------------------------------------------------------------------
// Parameter packing

template <typename T>
size_t field_param_count(const LocalField<T>& f) {
  return f.param_count();
}

template <typename T>
void pack_field_params(const LocalField<T>& f, std::span<double> out) {
  size_t k = 0;
  for (int p = 0; p < 6; ++p) {
    for (const T v : f.grid.planes[p].data) out[k++] = static_cast<double>(v);
  }
  for (const auto* mlp : {&f.density_mlp, &f.color_mlp}) {
    for (int l = 0; l < mlp->layer_count(); ++l) {
      const T* w = mlp->w[l].data();
      for (Eigen::Index i = 0; i < mlp->w[l].size(); ++i) out[k++] = static_cast<double>(w[i]);
      const T* b = mlp->b[l].data();
      for (Eigen::Index i = 0; i < mlp->b[l].size(); ++i) out[k++] = static_cast<double>(b[i]);
    }
  }
  assert(k == out.size());
}

template <typename T>
void unpack_field_params(std::span<const double> in, LocalField<T>* f) {
  size_t k = 0;
  for (int p = 0; p < 6; ++p) {
    for (T& v : f->grid.planes[p].data) v = static_cast<T>(in[k++]);
  }
  for (auto* mlp : {&f->density_mlp, &f->color_mlp}) {
    for (int l = 0; l < mlp->layer_count(); ++l) {
      T* w = mlp->w[l].data();
      for (Eigen::Index i = 0; i < mlp->w[l].size(); ++i) w[i] = static_cast<T>(in[k++]);
      T* b = mlp->b[l].data();
      for (Eigen::Index i = 0; i < mlp->b[l].size(); ++i) b[i] = static_cast<T>(in[k++]);
    }
  }
  assert(k == in.size());
}

template <typename T>
void pack_field_grads(const FieldGrads<T>& g, std::span<double> out) {
  size_t k = 0;
  for (int p = 0; p < 6; ++p) {
    for (const T v : g.planes[p]) out[k++] = static_cast<double>(v);
  }
  for (const auto* mg : {&g.density, &g.color}) {
    for (size_t l = 0; l < mg->dw.size(); ++l) {
      const T* w = mg->dw[l].data();
      for (Eigen::Index i = 0; i < mg->dw[l].size(); ++i) out[k++] = static_cast<double>(w[i]);
      const T* b = mg->db[l].data();
      for (Eigen::Index i = 0; i < mg->db[l].size(); ++i) out[k++] = static_cast<double>(b[i]);
    }
  }
  assert(k == out.size());
}

template struct PipelineWorkspace<float>;
template struct PipelineWorkspace<double>;
template class BatchPipeline<float>;
template class BatchPipeline<double>;
template struct MlpGrads<float>;
template struct MlpGrads<double>;
template struct FieldGrads<float>;
template struct FieldGrads<double>;
template size_t field_param_count<float>(const LocalField<float>&);
template size_t field_param_count<double>(const LocalField<double>&);
template void pack_field_params<float>(const LocalField<float>&, std::span<double>);
template void pack_field_params<double>(const LocalField<double>&, std::span<double>);
template void unpack_field_params<float>(std::span<const double>, LocalField<float>*);
template void unpack_field_params<double>(std::span<const double>, LocalField<double>*);
template void pack_field_grads<float>(const FieldGrads<float>&, std::span<double>);
template void pack_field_grads<double>(const FieldGrads<double>&, std::span<double>);

}  // namespace hexflow
