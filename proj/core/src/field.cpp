// SPDX-License-Identifier: Apache-2.0
#include "hexflow/field.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "hexflow/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace hexflow {

template <typename T>
bool HexPlaneGrid<T>::normalize(const Vec3& p, double frame_time,
                                Vec4* out) const {
  const Vec3 ext = bbox.extent();
  for (int a = 0; a < 3; ++a) {
    (*out)[a] = ext[a] > 0 ? 2.0 * (p[a] - bbox.min[a]) / ext[a] - 1.0 : 0.0;
  }
  const double tspan = static_cast<double>(t_end - t_begin);
  (*out)[3] = tspan > 0 ? 2.0 * (frame_time - t_begin) / tspan - 1.0 : 0.0;
  for (int a = 0; a < 4; ++a) {
    if (!((*out)[a] >= -1.0 && (*out)[a] <= 1.0)) return false;
  }
  return true;
}

namespace {

// Bilinear read of all channels at one stencil.
template <typename T>
inline void sample_plane(const Plane<T>& plane, const Stencil& s, T* out) {
  const T* p00 = plane.at(s.i0, s.j0);
  const T* p01 = plane.at(s.i0, s.j0 + 1);
  const T* p10 = plane.at(s.i0 + 1, s.j0);
  const T* p11 = plane.at(s.i0 + 1, s.j0 + 1);
  const T fa = static_cast<T>(s.fa), fb = static_cast<T>(s.fb);
  const T w00 = (T(1) - fa) * (T(1) - fb);
  const T w01 = (T(1) - fa) * fb;
  const T w10 = fa * (T(1) - fb);
  const T w11 = fa * fb;
  for (int c = 0; c < plane.channels; ++c) {
    out[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
  }
}

}  // namespace

template <typename T>
void HexPlaneGrid<T>::query_features(const Vec4& xyzt, T* fused) const {
  for (int a = 0; a < 4; ++a) {
    if (!(xyzt[a] >= -1.0 && xyzt[a] <= 1.0)) {
      std::fill(fused, fused + fused_dim(), T(0));
      return;
    }
  }
  // Per-plane features, then pairwise products.
  T feat[6][64];  // channels <= 64 enforced at creation
  for (int p = 0; p < 6; ++p) {
    const int a = kPlaneAxes[p][0], b = kPlaneAxes[p][1];
    const Stencil s =
        make_stencil(xyzt[a], xyzt[b], planes[p].rows, planes[p].cols);
    sample_plane(planes[p], s, feat[p]);
  }
  for (int pair = 0; pair < 3; ++pair) {
    const int pa = kFusionPairs[pair][0], pb = kFusionPairs[pair][1];
    for (int c = 0; c < channels; ++c) {
      fused[pair * channels + c] = feat[pa][c] * feat[pb][c];
    }
  }
}

template <typename T>
HexPlaneGrid<T> make_grid(const Eigen::Vector3i& spatial_res, int temporal_res,
                          int channels, const Aabb& bbox, int t_begin,
                          int t_end, Rng& rng, double init_scale) {
  if (spatial_res.minCoeff() < 2 || temporal_res < 2) {
    throw std::invalid_argument("make_grid: resolutions must be >= 2");
  }
  if (channels < 1 || channels > 64) {
    throw std::invalid_argument("make_grid: channels must be in [1, 64]");
  }
  HexPlaneGrid<T> g;
  g.spatial_res = spatial_res;
  g.temporal_res = temporal_res;
  g.channels = channels;
  g.bbox = bbox;
  g.t_begin = t_begin;
  g.t_end = t_end;
  for (int p = 0; p < 6; ++p) {
    Plane<T>& plane = g.planes[p];
    plane.rows = g.axis_res(kPlaneAxes[p][0]);
    plane.cols = g.axis_res(kPlaneAxes[p][1]);
    plane.channels = channels;
    plane.data.resize(static_cast<size_t>(plane.rows) * plane.cols * channels);
    for (auto& v : plane.data) {
      v = static_cast<T>(rng.uniform(-init_scale, init_scale));
    }
  }
  return g;
}

namespace {

template <typename T>
Plane<T> resample_plane(const Plane<T>& old, int new_rows, int new_cols) {
  if (new_rows == old.rows && new_cols == old.cols) return old;
  Plane<T> out;
  out.rows = new_rows;
  out.cols = new_cols;
  out.channels = old.channels;
  out.data.resize(static_cast<size_t>(new_rows) * new_cols * old.channels);
  for (int i = 0; i < new_rows; ++i) {
    // Index-space mapping keeps unchanged axes exact.
    const double gi = new_rows > 1
                          ? static_cast<double>(i) * (old.rows - 1) / (new_rows - 1)
                          : 0.0;
    int i0 = static_cast<int>(std::floor(gi));
    if (i0 > old.rows - 2) i0 = old.rows - 2;
    const double fa = gi - i0;
    for (int j = 0; j < new_cols; ++j) {
      const double gj =
          new_cols > 1
              ? static_cast<double>(j) * (old.cols - 1) / (new_cols - 1)
              : 0.0;
      int j0 = static_cast<int>(std::floor(gj));
      if (j0 > old.cols - 2) j0 = old.cols - 2;
      const double fb = gj - j0;
      const T* p00 = old.at(i0, j0);
      const T* p01 = old.at(i0, j0 + 1);
      const T* p10 = old.at(i0 + 1, j0);
      const T* p11 = old.at(i0 + 1, j0 + 1);
      T* dst = out.at(i, j);
      const T w00 = static_cast<T>((1 - fa) * (1 - fb));
      const T w01 = static_cast<T>((1 - fa) * fb);
      const T w10 = static_cast<T>(fa * (1 - fb));
      const T w11 = static_cast<T>(fa * fb);
      for (int c = 0; c < old.channels; ++c) {
        dst[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
HexPlaneGrid<T> upsample_grid(const HexPlaneGrid<T>& grid,
                              const Eigen::Vector3i& new_spatial_res,
                              int new_temporal_res) {
  if ((new_spatial_res.array() < grid.spatial_res.array()).any() ||
      new_temporal_res < grid.temporal_res) {
    throw std::domain_error("upsample_grid: resolutions must not shrink");
  }
  HexPlaneGrid<T> out = grid;
  out.spatial_res = new_spatial_res;
  out.temporal_res = new_temporal_res;
  for (int p = 0; p < 6; ++p) {
    out.planes[p] = resample_plane(grid.planes[p],
                                   out.axis_res(kPlaneAxes[p][0]),
                                   out.axis_res(kPlaneAxes[p][1]));
  }
  return out;
}

template <typename T>
Eigen::Matrix<T, Eigen::Dynamic, 1> DecoderMlp<T>::forward(
    const Eigen::Matrix<T, Eigen::Dynamic, 1>& x) const {
  Eigen::Matrix<T, Eigen::Dynamic, 1> h = x;
  for (size_t l = 0; l < w.size(); ++l) {
    h = (w[l].transpose() * h + b[l]).eval();
    if (l + 1 < w.size()) h = h.cwiseMax(T(0));
  }
  return h;
}

template <typename T>
DecoderMlp<T> make_mlp(int in, int hidden, int out, int hidden_layers,
                       Rng& rng) {
  DecoderMlp<T> mlp;
  std::vector<int> dims;
  dims.push_back(in);
  for (int l = 0; l < hidden_layers; ++l) dims.push_back(hidden);
  dims.push_back(out);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const int fan_in = dims[l], fan_out = dims[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> wl(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i) {
      for (int j = 0; j < fan_out; ++j) {
        wl(i, j) = static_cast<T>(rng.uniform(-scale, scale));
      }
    }
    mlp.w.push_back(std::move(wl));
    mlp.b.push_back(Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(fan_out));
  }
  return mlp;
}

template <typename T>
void encode_direction(const Vec3& dir, int freqs, T* out) {
  int k = 0;
  double scale = 1.0;
  for (int l = 0; l < freqs; ++l) {
    for (int j = 0; j < 3; ++j) {
      out[k++] = static_cast<T>(std::sin(scale * dir[j]));
      out[k++] = static_cast<T>(std::cos(scale * dir[j]));
    }
    scale *= 2.0;
  }
}

template <typename T>
LocalField<T> make_local_field(const Eigen::Vector3i& spatial_res,
                               int temporal_res, int channels, const Aabb& bbox,
                               int t_begin, int t_end, const Vec3& origin,
                               int hidden_width, int view_freqs, Rng& rng,
                               double initial_density, double grid_init_scale) {
  if (view_freqs < 1 || view_freqs > 8) {
    throw std::invalid_argument("make_local_field: view_freqs must be in [1, 8]");
  }
  LocalField<T> f;
  f.grid = make_grid<T>(spatial_res, temporal_res, channels, bbox, t_begin,
                        t_end, rng, grid_init_scale);
  const int fused = f.grid.fused_dim();
  f.density_mlp = make_mlp<T>(fused, hidden_width, 1, 2, rng);
  f.color_mlp = make_mlp<T>(fused + direction_encoding_dim(view_freqs),
                            hidden_width, 3, 2, rng);
  // Start with uniform low opacity so depth supervision engages.
  f.density_mlp.b.back()[0] = static_cast<T>(softplus_inverse(initial_density));
  f.origin = origin;
  f.view_freqs = view_freqs;
  return f;
}

template <typename T>
void eval_field(const Vec3& world_point, double frame_time,
                const Vec3& view_dir, const LocalField<T>& field, T* density,
                T* rgb) {
  using VecXT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  Vec4 xyzt;
  // Out-of-domain points contribute nothing: density and color both 0.
  if (!field.grid.normalize(world_point, frame_time, &xyzt)) {
    *density = T(0);
    rgb[0] = rgb[1] = rgb[2] = T(0);
    return;
  }
  const int fused_dim = field.grid.fused_dim();
  VecXT fused(fused_dim);
  field.grid.query_features(xyzt, fused.data());
  const VecXT raw = field.density_mlp.forward(fused);
  *density = softplus(raw[0]);
  VecXT cin(fused_dim + direction_encoding_dim(field.view_freqs));
  cin.head(fused_dim) = fused;
  encode_direction(view_dir, field.view_freqs, cin.data() + fused_dim);
  const VecXT craw = field.color_mlp.forward(cin);
  for (int c = 0; c < 3; ++c) rgb[c] = sigmoid(craw[c]);
}

template <typename T>
void eval_density_input_grad(const Vec3& world_point, double frame_time,
                             const LocalField<T>& field, Vec3* d_point,
                             double* d_time) {
  using VecXT = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  d_point->setZero();
  *d_time = 0.0;
  Vec4 xyzt;
  if (!field.grid.normalize(world_point, frame_time, &xyzt)) return;

  const HexPlaneGrid<T>& g = field.grid;
  const int C = g.channels;

  // Per-plane values and per-plane derivative w.r.t. its two axes.
  T val[6][64], dda[6][64], ddb[6][64];
  Stencil st[6];
  for (int p = 0; p < 6; ++p) {
    const Plane<T>& plane = g.planes[p];
    st[p] = make_stencil(xyzt[kPlaneAxes[p][0]], xyzt[kPlaneAxes[p][1]],
                         plane.rows, plane.cols);
    const Stencil& s = st[p];
    const T* p00 = plane.at(s.i0, s.j0);
    const T* p01 = plane.at(s.i0, s.j0 + 1);
    const T* p10 = plane.at(s.i0 + 1, s.j0);
    const T* p11 = plane.at(s.i0 + 1, s.j0 + 1);
    const T fa = static_cast<T>(s.fa), fb = static_cast<T>(s.fb);
    for (int c = 0; c < C; ++c) {
      val[p][c] = (T(1) - fa) * (T(1) - fb) * p00[c] + (T(1) - fa) * fb * p01[c] +
                  fa * (T(1) - fb) * p10[c] + fa * fb * p11[c];
      dda[p][c] = (T(1) - fb) * (p10[c] - p00[c]) + fb * (p11[c] - p01[c]);
      ddb[p][c] = (T(1) - fa) * (p01[c] - p00[c]) + fa * (p11[c] - p10[c]);
    }
  }

  // Forward density MLP keeping activations.
  VecXT fused(g.fused_dim());
  for (int pair = 0; pair < 3; ++pair) {
    const int pa = kFusionPairs[pair][0], pb = kFusionPairs[pair][1];
    for (int c = 0; c < C; ++c) fused[pair * C + c] = val[pa][c] * val[pb][c];
  }
  const DecoderMlp<T>& mlp = field.density_mlp;
  std::vector<VecXT> acts;  // post-activation per layer input
  acts.push_back(fused);
  VecXT h = fused;
  std::vector<VecXT> pre;
  for (int l = 0; l < mlp.layer_count(); ++l) {
    h = (mlp.w[l].transpose() * h + mlp.b[l]).eval();
    pre.push_back(h);
    if (l + 1 < mlp.layer_count()) {
      h = h.cwiseMax(T(0));
      acts.push_back(h);
    }
  }
  // d softplus(raw) / d fused.
  VecXT grad = VecXT::Constant(1, softplus_grad(pre.back()[0]));
  for (int l = mlp.layer_count() - 1; l >= 0; --l) {
    VecXT gin = mlp.w[l] * grad;
    if (l > 0) {
      for (int i = 0; i < gin.size(); ++i) {
        if (pre[l - 1][i] <= T(0)) gin[i] = T(0);
      }
    }
    grad = std::move(gin);
  }

  // Chain through fusion products and bilinear axes to normalized coords.
  Vec4 d_norm = Vec4::Zero();
  for (int pair = 0; pair < 3; ++pair) {
    const int pa = kFusionPairs[pair][0], pb = kFusionPairs[pair][1];
    for (int c = 0; c < C; ++c) {
      const double gf = static_cast<double>(grad[pair * C + c]);
      const double dva = gf * static_cast<double>(val[pb][c]);
      const double dvb = gf * static_cast<double>(val[pa][c]);
      for (int side = 0; side < 2; ++side) {
        const int p = side == 0 ? pa : pb;
        const double dv = side == 0 ? dva : dvb;
        const Plane<T>& plane = g.planes[p];
        const double sa = 0.5 * (plane.rows - 1);
        const double sb = 0.5 * (plane.cols - 1);
        d_norm[kPlaneAxes[p][0]] += dv * static_cast<double>(dda[p][c]) * sa;
        d_norm[kPlaneAxes[p][1]] += dv * static_cast<double>(ddb[p][c]) * sb;
      }
    }
  }
  const Vec3 ext = g.bbox.extent();
  for (int a = 0; a < 3; ++a) {
    (*d_point)[a] = ext[a] > 0 ? d_norm[a] * 2.0 / ext[a] : 0.0;
  }
  const double tspan = static_cast<double>(g.t_end - g.t_begin);
  *d_time = tspan > 0 ? d_norm[3] * 2.0 / tspan : 0.0;
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[8] = {'H', 'X', 'P', 'F', '0', '0', '0', '1'};

void write_i32(std::ostream& os, int32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }

int32_t read_i32(std::istream& is) {
  int32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}

template <typename T>
void write_f32_block(std::ostream& os, const T* data, size_t n) {
  std::vector<float> buf(n);
  for (size_t i = 0; i < n; ++i) buf[i] = static_cast<float>(data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()), 4 * n);
}

template <typename T>
void read_f32_block(std::istream& is, T* data, size_t n) {
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), 4 * n);
  for (size_t i = 0; i < n; ++i) data[i] = static_cast<T>(buf[i]);
}

template <typename T>
void write_mlp(std::ostream& os, const DecoderMlp<T>& mlp) {
  write_i32(os, mlp.layer_count());
  for (int l = 0; l < mlp.layer_count(); ++l) {
    write_i32(os, static_cast<int32_t>(mlp.w[l].rows()));
    write_i32(os, static_cast<int32_t>(mlp.w[l].cols()));
  }
  for (int l = 0; l < mlp.layer_count(); ++l) {
    // Row-major weight block then bias.
    const auto& w = mlp.w[l];
    std::vector<float> buf(w.size());
    size_t k = 0;
    for (int i = 0; i < w.rows(); ++i) {
      for (int j = 0; j < w.cols(); ++j) buf[k++] = static_cast<float>(w(i, j));
    }
    os.write(reinterpret_cast<const char*>(buf.data()), 4 * buf.size());
    write_f32_block(os, mlp.b[l].data(), mlp.b[l].size());
  }
}

template <typename T>
DecoderMlp<T> read_mlp(std::istream& is) {
  DecoderMlp<T> mlp;
  const int layers = read_i32(is);
  if (layers < 1 || layers > 16) throw DataError("checkpoint: bad MLP layer count");
  std::vector<std::pair<int, int>> shapes(layers);
  for (auto& s : shapes) {
    s.first = read_i32(is);
    s.second = read_i32(is);
  }
  for (const auto& s : shapes) {
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> w(s.first, s.second);
    std::vector<float> buf(static_cast<size_t>(s.first) * s.second);
    is.read(reinterpret_cast<char*>(buf.data()), 4 * buf.size());
    size_t k = 0;
    for (int i = 0; i < s.first; ++i) {
      for (int j = 0; j < s.second; ++j) w(i, j) = static_cast<T>(buf[k++]);
    }
    Eigen::Matrix<T, Eigen::Dynamic, 1> b(s.second);
    read_f32_block(is, b.data(), b.size());
    mlp.w.push_back(std::move(w));
    mlp.b.push_back(std::move(b));
  }
  return mlp;
}

}  // namespace

template <typename T>
void save_field(const LocalField<T>& field, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("save_field: cannot open " + path);
  os.write(kMagic, 8);
  for (int a = 0; a < 3; ++a) write_i32(os, field.grid.spatial_res[a]);
  write_i32(os, field.grid.temporal_res);
  write_i32(os, field.grid.channels);
  write_i32(os, field.grid.t_begin);
  write_i32(os, field.grid.t_end);
  write_i32(os, field.first_frame);
  write_i32(os, field.last_frame);
  write_i32(os, field.overlap_in);
  write_i32(os, field.overlap_out);
  write_i32(os, field.view_freqs);
  write_i32(os, field.frozen ? 1 : 0);
  for (int a = 0; a < 3; ++a) write_f64(os, field.grid.bbox.min[a]);
  for (int a = 0; a < 3; ++a) write_f64(os, field.grid.bbox.max[a]);
  for (int a = 0; a < 3; ++a) write_f64(os, field.origin[a]);
  for (int p = 0; p < 6; ++p) {
    write_f32_block(os, field.grid.planes[p].data.data(),
                    field.grid.planes[p].size());
  }
  write_mlp(os, field.density_mlp);
  write_mlp(os, field.color_mlp);
  if (!os) throw DataError("save_field: write failed for " + path);
}

template <typename T>
LocalField<T> load_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("load_field: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw DataError("load_field: bad magic in " + path);
  }
  LocalField<T> f;
  Eigen::Vector3i sres;
  for (int a = 0; a < 3; ++a) sres[a] = read_i32(is);
  const int tres = read_i32(is);
  const int channels = read_i32(is);
  const int t_begin = read_i32(is);
  const int t_end = read_i32(is);
  f.first_frame = read_i32(is);
  f.last_frame = read_i32(is);
  f.overlap_in = read_i32(is);
  f.overlap_out = read_i32(is);
  f.view_freqs = read_i32(is);
  f.frozen = read_i32(is) != 0;
  Aabb bbox;
  for (int a = 0; a < 3; ++a) bbox.min[a] = read_f64(is);
  for (int a = 0; a < 3; ++a) bbox.max[a] = read_f64(is);
  for (int a = 0; a < 3; ++a) f.origin[a] = read_f64(is);
  if (!is) throw DataError("load_field: truncated header in " + path);

  f.grid.spatial_res = sres;
  f.grid.temporal_res = tres;
  f.grid.channels = channels;
  f.grid.bbox = bbox;
  f.grid.t_begin = t_begin;
  f.grid.t_end = t_end;
  if (sres.minCoeff() < 2 || tres < 2 || channels < 1 || channels > 64) {
    throw DataError("load_field: invalid grid shape in " + path);
  }
  for (int p = 0; p < 6; ++p) {
    Plane<T>& plane = f.grid.planes[p];
    plane.rows = f.grid.axis_res(kPlaneAxes[p][0]);
    plane.cols = f.grid.axis_res(kPlaneAxes[p][1]);
    plane.channels = channels;
    plane.data.resize(static_cast<size_t>(plane.rows) * plane.cols * channels);
    read_f32_block(is, plane.data.data(), plane.data.size());
  }
  f.density_mlp = read_mlp<T>(is);
  f.color_mlp = read_mlp<T>(is);
  if (!is) throw DataError("load_field: truncated parameter data in " + path);
  return f;
}

// Explicit instantiations.
template struct HexPlaneGrid<float>;
template struct HexPlaneGrid<double>;
template struct DecoderMlp<float>;
template struct DecoderMlp<double>;
template struct LocalField<float>;
template struct LocalField<double>;

template HexPlaneGrid<float> make_grid<float>(const Eigen::Vector3i&, int, int,
                                              const Aabb&, int, int, Rng&, double);
template HexPlaneGrid<double> make_grid<double>(const Eigen::Vector3i&, int, int,
                                                const Aabb&, int, int, Rng&, double);
template HexPlaneGrid<float> upsample_grid<float>(const HexPlaneGrid<float>&,
                                                  const Eigen::Vector3i&, int);
template HexPlaneGrid<double> upsample_grid<double>(const HexPlaneGrid<double>&,
                                                    const Eigen::Vector3i&, int);
template DecoderMlp<float> make_mlp<float>(int, int, int, int, Rng&);
template DecoderMlp<double> make_mlp<double>(int, int, int, int, Rng&);
template void encode_direction<float>(const Vec3&, int, float*);
template void encode_direction<double>(const Vec3&, int, double*);
template LocalField<float> make_local_field<float>(const Eigen::Vector3i&, int,
                                                   int, const Aabb&, int, int,
                                                   const Vec3&, int, int, Rng&,
                                                   double, double);
template LocalField<double> make_local_field<double>(const Eigen::Vector3i&, int,
                                                     int, const Aabb&, int, int,
                                                     const Vec3&, int, int, Rng&,
                                                     double, double);
template void eval_field<float>(const Vec3&, double, const Vec3&,
                                const LocalField<float>&, float*, float*);
template void eval_field<double>(const Vec3&, double, const Vec3&,
                                 const LocalField<double>&, double*, double*);
template void eval_density_input_grad<float>(const Vec3&, double,
                                             const LocalField<float>&, Vec3*,
                                             double*);
template void eval_density_input_grad<double>(const Vec3&, double,
                                              const LocalField<double>&, Vec3*,
                                              double*);
template void save_field<float>(const LocalField<float>&, const std::string&);
template void save_field<double>(const LocalField<double>&, const std::string&);
template LocalField<float> load_field<float>(const std::string&);
template LocalField<double> load_field<double>(const std::string&);

}  // namespace hexflow
