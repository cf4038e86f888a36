// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "hexflow/field.hpp"
#include "hexflow/random.hpp"

using namespace hexflow;

namespace {

Aabb unit_box() {
  Aabb b;
  b.min = Vec3(-1, -1, -1);
  b.max = Vec3(1, 1, 1);
  return b;
}

template <typename T>
HexPlaneGrid<T> small_grid(int res, int tres, int channels, uint64_t seed) {
  Rng rng = Rng::seeded(seed, 0);
  return make_grid<T>(Eigen::Vector3i::Constant(res), tres, channels,
                      unit_box(), 0, 10, rng);
}

template <typename T>
void fill_plane(Plane<T>& p, T value) {
  std::fill(p.data.begin(), p.data.end(), value);
}

}  // namespace

TEST_SUITE("field") {

TEST_CASE("normalize maps box center and corners") {
  auto g = small_grid<double>(4, 4, 2, 1);
  Vec4 n;
  CHECK(g.normalize(Vec3(0, 0, 0), 5.0, &n));
  CHECK(n.norm() < 1e-12);
  CHECK(g.normalize(g.bbox.min, 0.0, &n));
  CHECK((n - Vec4(-1, -1, -1, -1)).norm() < 1e-12);
  // 75% along x only.
  CHECK(g.normalize(Vec3(0.5, 0, 0), 5.0, &n));
  CHECK(n[0] == doctest::Approx(0.5));
  CHECK(n[1] == doctest::Approx(0.0));
  // Out of range is flagged, not thrown.
  CHECK_FALSE(g.normalize(Vec3(1.5, 0, 0), 5.0, &n));
  CHECK_FALSE(g.normalize(Vec3(0, 0, 0), 11.0, &n));
}

TEST_CASE("query_features on constant planes gives the squared constant") {
  auto g = small_grid<double>(4, 4, 3, 2);
  for (auto& p : g.planes) fill_plane(p, 0.5);
  std::vector<double> fused(g.fused_dim());
  g.query_features(Vec4(0.3, -0.2, 0.7, 0.1), fused.data());
  for (double v : fused) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("fused feature length is 3x channels; 24 channels give 72") {
  auto g = small_grid<double>(4, 4, 24, 3);
  CHECK(g.fused_dim() == 72);
  auto g2 = small_grid<double>(4, 4, 5, 3);
  CHECK(g2.fused_dim() == 15);
}

TEST_CASE("query at a shared grid node returns the node product") {
  auto g = small_grid<double>(5, 5, 1, 4);
  // Node (1,2,3,4) in x,y,z,t index space -> normalized coordinates.
  auto coord = [](int i, int res) { return -1.0 + 2.0 * i / (res - 1); };
  const Vec4 q(coord(1, 5), coord(2, 5), coord(3, 5), coord(4, 5));
  std::vector<double> fused(g.fused_dim());
  g.query_features(q, fused.data());
  // Pair 0 is XY * ZT.
  const double xy = g.planes[0].at(1, 2)[0];
  const double zt = g.planes[5].at(3, 4)[0];
  CHECK(fused[0] == doctest::Approx(xy * zt).epsilon(1e-12));
  // Pair 2 is YZ * XT.
  const double yz = g.planes[2].at(2, 3)[0];
  const double xt = g.planes[3].at(1, 4)[0];
  CHECK(fused[2] == doctest::Approx(yz * xt).epsilon(1e-12));
}

TEST_CASE("midpoint between adjacent nodes interpolates (a+b)/2") {
  auto g = small_grid<double>(3, 3, 1, 5);
  for (auto& p : g.planes) fill_plane(p, 1.0);
  // Nodes along x on the XY plane at y-index 1 (y = 0).
  const double a = 0.3, b = 0.9;
  g.planes[0].at(0, 1)[0] = a;
  g.planes[0].at(1, 1)[0] = b;
  // Query halfway between x-node 0 and 1: x = -0.5 in normalized coords.
  std::vector<double> fused(g.fused_dim());
  g.query_features(Vec4(-0.5, 0.0, 0.0, 0.0), fused.data());
  CHECK(fused[0] == doctest::Approx((a + b) / 2.0).epsilon(1e-12));
}

TEST_CASE("query_features is continuous") {
  auto g = small_grid<double>(6, 5, 4, 6);
  std::vector<double> f1(g.fused_dim()), f2(g.fused_dim());
  Rng rng = Rng::seeded(6, 1);
  for (int i = 0; i < 50; ++i) {
    Vec4 q(rng.uniform(-0.99, 0.99), rng.uniform(-0.99, 0.99),
           rng.uniform(-0.99, 0.99), rng.uniform(-0.99, 0.99));
    Vec4 q2 = q + Vec4::Constant(1e-9);
    g.query_features(q, f1.data());
    g.query_features(q2, f2.data());
    for (int c = 0; c < g.fused_dim(); ++c) {
      CHECK(std::abs(f1[c] - f2[c]) < 1e-6);
    }
  }
}

TEST_CASE("eval_field: out-of-domain density is exactly zero") {
  Rng rng = Rng::seeded(9, 0);
  auto field = make_local_field<double>(Eigen::Vector3i::Constant(4), 4, 6,
                                        unit_box(), 0, 10, Vec3::Zero(), 16, 4,
                                        rng);
  double density = -1, rgb[3];
  eval_field(Vec3(2.0, 0, 0), 5.0, Vec3(0, 0, 1), field, &density, rgb);
  CHECK(density == 0.0);
  eval_field(Vec3(0, 0, 0), 12.0, Vec3(0, 0, 1), field, &density, rgb);
  CHECK(density == 0.0);
}

TEST_CASE("zero-weight decoder yields softplus(bias) density everywhere") {
  Rng rng = Rng::seeded(9, 1);
  auto field = make_local_field<double>(Eigen::Vector3i::Constant(4), 4, 6,
                                        unit_box(), 0, 10, Vec3::Zero(), 16, 4,
                                        rng, 0.1);
  for (auto& w : field.density_mlp.w) w.setZero();
  for (auto& b : field.density_mlp.b) b.setZero();
  field.density_mlp.b.back()[0] = softplus_inverse(0.25);
  Rng rng2 = Rng::seeded(9, 2);
  for (int i = 0; i < 20; ++i) {
    const Vec3 p(rng2.uniform(-0.9, 0.9), rng2.uniform(-0.9, 0.9),
                 rng2.uniform(-0.9, 0.9));
    double density, rgb[3];
    eval_field(p, rng2.uniform(0.0, 10.0), Vec3(0, 0, 1), field, &density, rgb);
    CHECK(density == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("density and color ranges hold for random fields") {
  Rng rng = Rng::seeded(9, 3);
  auto field = make_local_field<double>(Eigen::Vector3i::Constant(4), 4, 6,
                                        unit_box(), 0, 10, Vec3::Zero(), 16, 4,
                                        rng);
  Rng rng2 = Rng::seeded(9, 4);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(rng2.uniform(-1.2, 1.2), rng2.uniform(-1.2, 1.2),
                 rng2.uniform(-1.2, 1.2));
    Vec3 dir(rng2.normal(), rng2.normal(), rng2.normal());
    dir.normalize();
    double density, rgb[3];
    eval_field(p, rng2.uniform(-1.0, 11.0), dir, field, &density, rgb);
    CHECK(density >= 0.0);
    for (int c = 0; c < 3; ++c) {
      CHECK(rgb[c] >= 0.0);
      CHECK(rgb[c] <= 1.0);
    }
  }
}

TEST_CASE("density input-coordinate gradients match finite differences") {
  Rng rng = Rng::seeded(9, 5);
  auto field = make_local_field<double>(Eigen::Vector3i::Constant(4), 4, 6,
                                        unit_box(), 0, 10, Vec3::Zero(), 16, 4,
                                        rng);
  // Boost the planes so gradients are well away from the noise floor.
  for (auto& p : field.grid.planes) {
    for (auto& v : p.data) v *= 5.0;
  }
  Rng rng2 = Rng::seeded(9, 6);
  const double h = 1e-5;
  for (int i = 0; i < 10; ++i) {
    const Vec3 p(rng2.uniform(-0.8, 0.8), rng2.uniform(-0.8, 0.8),
                 rng2.uniform(-0.8, 0.8));
    const double t = rng2.uniform(1.0, 9.0);
    Vec3 d_point;
    double d_time = 0;
    eval_density_input_grad(p, t, field, &d_point, &d_time);
    double rgb[3];
    for (int a = 0; a < 3; ++a) {
      Vec3 pp = p, pm = p;
      pp[a] += h;
      pm[a] -= h;
      double fp, fm;
      eval_field(pp, t, Vec3(0, 0, 1), field, &fp, rgb);
      eval_field(pm, t, Vec3(0, 0, 1), field, &fm, rgb);
      const double fd = (fp - fm) / (2 * h);
      CHECK(d_point[a] == doctest::Approx(fd).epsilon(1e-4));
    }
    double fp, fm;
    eval_field(p, t + h, Vec3(0, 0, 1), field, &fp, rgb);
    eval_field(p, t - h, Vec3(0, 0, 1), field, &fm, rgb);
    CHECK(d_time == doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
  }
}

TEST_CASE("upsample: identity at same resolution") {
  auto g = small_grid<double>(5, 4, 3, 10);
  auto up = upsample_grid(g, g.spatial_res, g.temporal_res);
  for (int p = 0; p < 6; ++p) {
    CHECK(up.planes[p].data == g.planes[p].data);
  }
}

TEST_CASE("upsample: constants stay constant at any resolution") {
  auto g = small_grid<double>(4, 4, 2, 11);
  for (auto& p : g.planes) fill_plane(p, 0.7);
  auto up = upsample_grid(g, Eigen::Vector3i(7, 9, 5), 6);
  for (int p = 0; p < 6; ++p) {
    for (double v : up.planes[p].data) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));
  }
}

TEST_CASE("upsample: linear ramps survive resampling at old nodes") {
  auto g = small_grid<double>(4, 4, 1, 12);
  // Ramp along the x axis on every plane whose first axis is x.
  for (int p = 0; p < 6; ++p) {
    for (int i = 0; i < g.planes[p].rows; ++i) {
      for (int j = 0; j < g.planes[p].cols; ++j) {
        g.planes[p].at(i, j)[0] = static_cast<double>(i) / (g.planes[p].rows - 1);
      }
    }
  }
  auto up = upsample_grid(g, Eigen::Vector3i::Constant(9), 7);
  for (int p = 0; p < 6; ++p) {
    // New node positions carrying a linear function stay on the line.
    for (int i = 0; i < up.planes[p].rows; ++i) {
      const double expect = static_cast<double>(i) / (up.planes[p].rows - 1);
      CHECK(std::abs(up.planes[p].at(i, 0)[0] - expect) < 1e-6);
    }
  }
}

TEST_CASE("upsample: nested lattice preserves every old node value") {
  auto g = small_grid<double>(5, 5, 2, 13);
  // 5 -> 9 is nested (new step is half the old step).
  auto up = upsample_grid(g, Eigen::Vector3i::Constant(9), 9);
  for (int p = 0; p < 6; ++p) {
    for (int i = 0; i < g.planes[p].rows; ++i) {
      for (int j = 0; j < g.planes[p].cols; ++j) {
        for (int c = 0; c < 2; ++c) {
          CHECK(up.planes[p].at(2 * i, 2 * j)[c] ==
                doctest::Approx(g.planes[p].at(i, j)[c]).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("upsample rejects shrinking") {
  auto g = small_grid<double>(6, 6, 2, 14);
  CHECK_THROWS_AS(upsample_grid(g, Eigen::Vector3i::Constant(4), 6),
                  std::domain_error);
  CHECK_THROWS_AS(upsample_grid(g, g.spatial_res, 3), std::domain_error);
}

TEST_CASE("checkpoint save/load roundtrip") {
  namespace fs = std::filesystem;
  Rng rng = Rng::seeded(9, 7);
  auto field = make_local_field<float>(Eigen::Vector3i(6, 5, 4), 4, 6,
                                       unit_box(), 3, 13, Vec3(1, 2, 3), 16, 4,
                                       rng);
  field.first_frame = 3;
  field.last_frame = 9;
  field.overlap_in = 2;
  field.overlap_out = 4;
  field.frozen = true;
  const std::string path =
      (fs::temp_directory_path() / "hexflow_field_test.hxpf").string();
  save_field(field, path);
  auto loaded = load_field<float>(path);
  CHECK(loaded.grid.spatial_res == field.grid.spatial_res);
  CHECK(loaded.grid.temporal_res == field.grid.temporal_res);
  CHECK(loaded.grid.channels == field.grid.channels);
  CHECK(loaded.grid.t_begin == 3);
  CHECK(loaded.grid.t_end == 13);
  CHECK(loaded.first_frame == 3);
  CHECK(loaded.last_frame == 9);
  CHECK(loaded.overlap_in == 2);
  CHECK(loaded.overlap_out == 4);
  CHECK(loaded.frozen);
  CHECK((loaded.origin - field.origin).norm() < 1e-12);
  for (int p = 0; p < 6; ++p) {
    CHECK(loaded.grid.planes[p].data == field.grid.planes[p].data);
  }
  for (int l = 0; l < 3; ++l) {
    CHECK(loaded.density_mlp.w[l] == field.density_mlp.w[l]);
    CHECK(loaded.color_mlp.w[l] == field.color_mlp.w[l]);
    CHECK(loaded.density_mlp.b[l] == field.density_mlp.b[l]);
    CHECK(loaded.color_mlp.b[l] == field.color_mlp.b[l]);
  }
  fs::remove(path);
  CHECK_THROWS_AS(load_field<float>(path), DataError);
}

}  // TEST_SUITE
