// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "hexflow/losses.hpp"
#include "hexflow/random.hpp"

using namespace hexflow;

namespace {

Intrinsics test_intrinsics() {
  Intrinsics intr;
  intr.fx = 100.0;
  intr.fy = 100.0;
  intr.cx = 64.0;
  intr.cy = 64.0;
  intr.width = 129;
  intr.height = 129;
  return intr;
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("loss_rgb: zero at identical colors") {
  const std::vector<double> a{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const std::vector<uint8_t> valid{1, 1};
  CHECK(loss_rgb<double>(a, a, valid) == doctest::Approx(0.0));
}

TEST_CASE("loss_rgb: uniform per-ray channel offset") {
  const int n = 5;
  std::vector<double> pred(3 * n, 0.5), gt(3 * n, 0.5);
  for (int r = 0; r < n; ++r) pred[3 * r] += 0.1;  // (0.1, 0, 0) per ray
  const std::vector<uint8_t> valid(n, 1);
  CHECK(loss_rgb<double>(pred, gt, valid) == doctest::Approx(0.01).epsilon(1e-12));
}

TEST_CASE("loss_rgb: masked mean over the single valid ray") {
  const int n = 10;
  std::vector<double> pred(3 * n, 0.2), gt(3 * n, 0.2);
  std::vector<uint8_t> valid(n, 0);
  valid[4] = 1;
  pred[3 * 4 + 1] += 0.2;  // (0, 0.2, 0)
  CHECK(loss_rgb<double>(pred, gt, valid) == doctest::Approx(0.04).epsilon(1e-12));
  std::vector<uint8_t> none(n, 0);
  CHECK_THROWS_AS(loss_rgb<double>(pred, gt, none), std::domain_error);
}

TEST_CASE("depth_los_ray: perfect surface scores zero") {
  const std::vector<double> w{1.0};
  const std::vector<double> t{2.5};
  CHECK(depth_los_ray<double>(w, t, 2.5, 0.1) == doctest::Approx(0.0));
}

TEST_CASE("depth_los_ray: all-zero weights score D^2 + 1") {
  const std::vector<double> w{0.0, 0.0, 0.0};
  const std::vector<double> t{1.0, 2.0, 3.0};
  const double d = 2.0;
  CHECK(depth_los_ray<double>(w, t, d, 0.1) ==
        doctest::Approx(d * d + 1.0).epsilon(1e-12));
}

TEST_CASE("depth_los_ray: split mass example") {
  const double eps = 0.01, d = 2.0;
  const std::vector<double> w{0.5, 0.5};
  const std::vector<double> t{d, d + 10 * eps};
  // D_hat = d + 5 eps; out mass 0.5 -> 0.25; in mass 0.5 -> 0.25.
  const double expect = 25 * eps * eps + 0.25 + 0.25;
  CHECK(depth_los_ray<double>(w, t, d, eps) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss_depth_los: masked mean and empty error") {
  const int n_samples = 2;
  std::vector<double> w{1.0, 0.0, 0.0, 0.0};  // ray0 perfect, ray1 empty
  std::vector<double> t{2.0, 3.0, 2.0, 3.0};
  std::vector<double> gt{2.0, 2.0};
  std::vector<uint8_t> valid{1, 0};
  CHECK(loss_depth_los<double>(w, t, gt, valid, n_samples, 0.1) ==
        doctest::Approx(0.0));
  std::vector<uint8_t> none{0, 0};
  CHECK_THROWS_AS(loss_depth_los<double>(w, t, gt, none, n_samples, 0.1),
                  std::domain_error);
}

TEST_CASE("induced_flow: identical poses give zero flow") {
  const Intrinsics intr = test_intrinsics();
  Rng rng = Rng::seeded(21, 0);
  Vec6 t;
  for (int i = 0; i < 6; ++i) t[i] = rng.uniform(-0.3, 0.3);
  const Pose pose = se3_exp(t);
  const auto flow = induced_flow(Vec2(30, 90), 2.0, pose, pose, intr);
  REQUIRE(flow.has_value());
  CHECK(flow->norm() < 1e-12);
}

TEST_CASE("induced_flow: pinhole parallax magnitude and oracle sign") {
  const Intrinsics intr = test_intrinsics();
  const double b = 0.2, d = 2.5;
  const Pose cam_k = Pose::identity();
  Pose cam_j = Pose::identity();
  cam_j.translation = Vec3(b, 0, 0);
  const Vec2 pixel(intr.cx, intr.cy);
  const auto flow = induced_flow(pixel, d, cam_k, cam_j, intr);
  REQUIRE(flow.has_value());
  CHECK(std::abs(flow->x()) == doctest::Approx(intr.fx * b / d).epsilon(1e-12));
  CHECK(flow->y() == doctest::Approx(0.0));
  // Project-transform-project oracle fixes the sign.
  const Vec3 surface = unproject(pixel, d, intr);
  const Vec2 target = project(cam_j.apply_inverse(cam_k.apply(surface)), intr);
  const Vec2 oracle = pixel - target;
  CHECK((*flow - oracle).norm() < 1e-12);
  CHECK(flow->x() == doctest::Approx(intr.fx * b / d).epsilon(1e-12));
}

TEST_CASE("induced_flow: pure roll fixes the principal pixel") {
  const Intrinsics intr = test_intrinsics();
  const Pose cam_k = Pose::identity();
  Vec6 t = Vec6::Zero();
  t[2] = 0.3;  // roll about the optical axis
  const Pose cam_j = se3_exp(t);
  const auto flow = induced_flow(Vec2(intr.cx, intr.cy), 2.0, cam_k, cam_j, intr);
  REQUIRE(flow.has_value());
  CHECK(flow->norm() < 1e-12);
}

TEST_CASE("induced_flow: behind-camera and out-of-bounds are flagged") {
  const Intrinsics intr = test_intrinsics();
  const Pose cam_k = Pose::identity();
  Pose behind = Pose::identity();
  behind.translation = Vec3(0, 0, 5.0);  // point at depth 2 is behind it
  CHECK_FALSE(induced_flow(Vec2(intr.cx, intr.cy), 2.0, cam_k, behind, intr)
                  .has_value());
  Pose far_off = Pose::identity();
  far_off.translation = Vec3(10.0, 0, 0);  // projects far outside the image
  CHECK_FALSE(induced_flow(Vec2(intr.cx, intr.cy), 2.0, cam_k, far_off, intr)
                  .has_value());
  CHECK_THROWS_AS(induced_flow(Vec2(1, 1), 0.0, cam_k, cam_k, intr),
                  std::domain_error);
}

TEST_CASE("induced_flow_grad matches finite differences") {
  const Intrinsics intr = test_intrinsics();
  Rng rng = Rng::seeded(21, 1);
  for (int trial = 0; trial < 5; ++trial) {
    Vec6 tk, tj;
    for (int i = 0; i < 6; ++i) {
      tk[i] = rng.uniform(-0.2, 0.2);
      tj[i] = rng.uniform(-0.2, 0.2);
    }
    const Pose pose_k = se3_exp(tk), pose_j = se3_exp(tj);
    const Vec2 pixel(40.0 + trial * 10, 80.0 - trial * 5);
    const double depth = 2.0 + 0.3 * trial;
    const FlowJacobians jac =
        induced_flow_grad(pixel, depth, pose_k, pose_j, intr);
    REQUIRE(jac.valid);
    const double h = 1e-6;
    // Depth derivative.
    const auto fp = induced_flow(pixel, depth + h, pose_k, pose_j, intr);
    const auto fm = induced_flow(pixel, depth - h, pose_k, pose_j, intr);
    REQUIRE((fp && fm));
    CHECK(((*fp - *fm) / (2 * h) - jac.d_depth).norm() < 1e-5);
    // Pose tangent derivatives (left increments at zero).
    for (int i = 0; i < 6; ++i) {
      Vec6 dd = Vec6::Zero();
      dd[i] = h;
      const auto fkp = induced_flow(pixel, depth,
                                    pose_compose(se3_exp(dd), pose_k), pose_j, intr);
      dd[i] = -h;
      const auto fkm = induced_flow(pixel, depth,
                                    pose_compose(se3_exp(dd), pose_k), pose_j, intr);
      REQUIRE((fkp && fkm));
      const Vec2 fd_k = (*fkp - *fkm) / (2 * h);
      CHECK((fd_k - jac.d_pose_k.col(i)).norm() < 1e-5);

      dd[i] = h;
      const auto fjp = induced_flow(pixel, depth, pose_k,
                                    pose_compose(se3_exp(dd), pose_j), intr);
      dd[i] = -h;
      const auto fjm = induced_flow(pixel, depth, pose_k,
                                    pose_compose(se3_exp(dd), pose_j), intr);
      REQUIRE((fjp && fjm));
      const Vec2 fd_j = (*fjp - *fjm) / (2 * h);
      CHECK((fd_j - jac.d_pose_adj.col(i)).norm() < 1e-5);
    }
  }
}

TEST_CASE("loss_flow: worked examples and the boundary mask rule") {
  std::vector<std::optional<Vec2>> fwd{Vec2(3, -4)}, bwd{Vec2(0, 0)};
  std::vector<Vec2> gt_f{Vec2(0, 0)}, gt_b{Vec2(0, 0)};
  std::vector<uint8_t> mf{1}, mb{0};  // frame 0: forward only
  CHECK(loss_flow(fwd, bwd, gt_f, gt_b, mf, mb) == doctest::Approx(7.0));
  // Perfect induced flow scores zero.
  std::vector<std::optional<Vec2>> fwd2{Vec2(1.5, -2.5)};
  std::vector<Vec2> gt2{Vec2(1.5, -2.5)};
  CHECK(loss_flow(fwd2, bwd, gt2, gt_b, mf, mb) == doctest::Approx(0.0));
  // Invalid induced flow (nullopt) drops the pair.
  std::vector<std::optional<Vec2>> invalid{std::nullopt};
  CHECK_THROWS_AS(loss_flow(invalid, bwd, gt_f, gt_b, mf, mb), std::domain_error);
}

TEST_CASE("loss_flow averages over both directions") {
  std::vector<std::optional<Vec2>> fwd{Vec2(1, 0)}, bwd{Vec2(0, 2)};
  std::vector<Vec2> gt_f{Vec2(0, 0)}, gt_b{Vec2(0, 0)};
  std::vector<uint8_t> m{1};
  CHECK(loss_flow(fwd, bwd, gt_f, gt_b, m, m) == doctest::Approx(1.5));
}

TEST_CASE("total_loss: weighted aggregation and the flow cutoff") {
  LossParts parts;
  parts.rgb = 1.0;
  parts.z = 2.0;
  parts.flow = 3.0;
  LossWeights w;
  w.lambda_z = 0.01;
  w.lambda_f = 1.0;
  w.flow_active = true;
  CHECK(total_loss(parts, w) == doctest::Approx(4.02).epsilon(1e-12));
  w.flow_active = false;
  CHECK(total_loss(parts, w) == doctest::Approx(1.02).epsilon(1e-12));
}

}  // TEST_SUITE
