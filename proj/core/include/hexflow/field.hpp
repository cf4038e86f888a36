// SPDX-License-Identifier: Apache-2.0
//
// Factorized 4D feature grid (six planes over axis pairs) with decoder MLPs.
//
// Plane order is fixed everywhere (sampling, fusion, checkpoints):
//   0:XY 1:XZ 2:YZ 3:XT 4:YT 5:ZT
// Complementary pairs are fused by elementwise product and concatenated in
// the order (XY*ZT | XZ*YT | YZ*XT), giving 3*channels fused features.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "hexflow/geometry.hpp"
#include "hexflow/random.hpp"

namespace hexflow {

// Axis ids per plane: {a, b} with a indexing rows and b columns.
inline constexpr int kPlaneAxes[6][2] = {{0, 1}, {0, 2}, {1, 2},
                                         {0, 3}, {1, 3}, {2, 3}};
// Fusion pairs (spatial plane, complementary spatio-temporal plane).
inline constexpr int kFusionPairs[3][2] = {{0, 5}, {1, 4}, {2, 3}};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
};

template <typename T>
struct Plane {
  int rows = 0, cols = 0, channels = 0;
  std::vector<T> data;  // data[(i * cols + j) * channels + c]

  T* at(int i, int j) { return data.data() + (static_cast<size_t>(i) * cols + j) * channels; }
  const T* at(int i, int j) const {
    return data.data() + (static_cast<size_t>(i) * cols + j) * channels;
  }
  size_t size() const { return data.size(); }
};

// Bilinear stencil on the align-corners lattice: node i sits at normalized
// coordinate -1 + 2 i / (res - 1).
struct Stencil {
  int i0 = 0, j0 = 0;
  double fa = 0, fb = 0;  // fractions along rows/cols
};

inline Stencil make_stencil(double u, double v, int rows, int cols) {
  Stencil s;
  const double gi = (u + 1.0) * 0.5 * (rows - 1);
  const double gj = (v + 1.0) * 0.5 * (cols - 1);
  s.i0 = static_cast<int>(std::floor(gi));
  s.j0 = static_cast<int>(std::floor(gj));
  if (s.i0 < 0) s.i0 = 0;
  if (s.i0 > rows - 2) s.i0 = rows - 2;
  if (s.j0 < 0) s.j0 = 0;
  if (s.j0 > cols - 2) s.j0 = cols - 2;
  s.fa = gi - s.i0;
  s.fb = gj - s.j0;
  return s;
}

template <typename T>
struct HexPlaneGrid {
  std::array<Plane<T>, 6> planes;
  Eigen::Vector3i spatial_res = Eigen::Vector3i::Zero();
  int temporal_res = 0;
  int channels = 0;
  Aabb bbox;
  // Temporal normalization span, frame indices (inclusive). Fixed at
  // creation so feature meaning is stable while a model's covered span
  // grows during progressive training.
  int t_begin = 0, t_end = 0;

  int fused_dim() const { return 3 * channels; }
  int axis_res(int axis) const {
    return axis < 3 ? spatial_res[axis] : temporal_res;
  }
  size_t param_count() const {
    size_t n = 0;
    for (const auto& p : planes) n += p.size();
    return n;
  }

  // Affine map of bbox x t-span onto [-1,1]^4. Returns false (out of
  // domain) when any coordinate leaves [-1,1]; the coordinates are still
  // produced for diagnostics.
  bool normalize(const Vec3& world_point, double frame_time, Vec4* out) const;

  // Bilinear lookup of all six planes fused to 3*channels values.
  // Out-of-domain coordinates yield an all-zero feature vector.
  void query_features(const Vec4& xyzt, T* fused) const;
};

template <typename T>
HexPlaneGrid<T> make_grid(const Eigen::Vector3i& spatial_res, int temporal_res,
                          int channels, const Aabb& bbox, int t_begin,
                          int t_end, Rng& rng, double init_scale = 0.1);

// Bilinear plane resampling. New resolutions must not shrink. Piecewise
// linear content is preserved exactly on nested lattices.
template <typename T>
HexPlaneGrid<T> upsample_grid(const HexPlaneGrid<T>& grid,
                              const Eigen::Vector3i& new_spatial_res,
                              int new_temporal_res);

template <typename T>
struct DecoderMlp {
  // w[l] is (in x out) so a batch X (M x in) maps as X * w[l]; relu on
  // hidden layers, raw output (caller applies softplus / sigmoid).
  std::vector<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>> w;
  std::vector<Eigen::Matrix<T, Eigen::Dynamic, 1>> b;

  int input_dim() const { return w.empty() ? 0 : static_cast<int>(w.front().rows()); }
  int output_dim() const { return w.empty() ? 0 : static_cast<int>(w.back().cols()); }
  int layer_count() const { return static_cast<int>(w.size()); }
  size_t param_count() const {
    size_t n = 0;
    for (size_t l = 0; l < w.size(); ++l) n += w[l].size() + b[l].size();
    return n;
  }

  // Scalar forward for reference paths and tests.
  Eigen::Matrix<T, Eigen::Dynamic, 1> forward(
      const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const;
};

// Fan-in uniform init; output bias zero unless overridden.
template <typename T>
DecoderMlp<T> make_mlp(int in, int hidden, int out, int hidden_layers,
                       Rng& rng);

template <typename T>
T softplus(T x) {
  if (x > T(30)) return x;
  return std::log1p(std::exp(x));
}

template <typename T>
T softplus_grad(T x) {  // d softplus / dx = logistic(x)
  if (x > T(30)) return T(1);
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

inline double softplus_inverse(double y) { return std::log(std::expm1(y)); }

// Sinusoidal direction encoding: sin(2^l d_j), cos(2^l d_j) for l < freqs,
// j in {x,y,z}; total 6*freqs values.
template <typename T>
void encode_direction(const Vec3& dir, int freqs, T* out);

inline int direction_encoding_dim(int freqs) { return 6 * freqs; }

template <typename T>
struct LocalField {
  HexPlaneGrid<T> grid;
  DecoderMlp<T> density_mlp;
  DecoderMlp<T> color_mlp;
  Vec3 origin = Vec3::Zero();  // origin camera position in world coordinates
  bool frozen = false;
  int first_frame = 0;   // actual covered span (inclusive), grows on append
  int last_frame = -1;
  int overlap_in = 0;    // frames shared with the predecessor at span start
  int overlap_out = 0;   // frames shared with the successor at span end
  int view_freqs = 4;

  bool covers_frame(double frame_time) const {
    return frame_time >= first_frame && frame_time <= last_frame;
  }
  size_t param_count() const {
    return grid.param_count() + density_mlp.param_count() +
           color_mlp.param_count();
  }
};

template <typename T>
LocalField<T> make_local_field(const Eigen::Vector3i& spatial_res,
                               int temporal_res, int channels, const Aabb& bbox,
                               int t_begin, int t_end, const Vec3& origin,
                               int hidden_width, int view_freqs, Rng& rng,
                               double initial_density = 0.1,
                               double grid_init_scale = 0.1);

// Density / color at one spatio-temporal point. Out-of-domain points have
// density exactly 0 and black color (they contribute nothing).
template <typename T>
void eval_field(const Vec3& world_point, double frame_time,
                const Vec3& view_dir, const LocalField<T>& field, T* density,
                T* rgb);

// Analytic gradient of density w.r.t. the spatio-temporal input coordinates
// (world units / frame units). Zero outside the domain.
template <typename T>
void eval_density_input_grad(const Vec3& world_point, double frame_time,
                             const LocalField<T>& field, Vec3* d_point,
                             double* d_time);

// Checkpoint IO. Single binary file, versioned header, little-endian
// float32 parameter blocks in plane order then density MLP then color MLP
// (each layer: weights row-major, then bias).
template <typename T>
void save_field(const LocalField<T>& field, const std::string& path);

template <typename T>
LocalField<T> load_field(const std::string& path);

}  // namespace hexflow
