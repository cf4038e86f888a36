// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <Eigen/Dense>

#include "hexflow/metrics.hpp"
#include "hexflow/random.hpp"

using namespace hexflow;

namespace {

ImageF make_image(int w, int h, int c, float value) {
  ImageF img;
  img.width = w;
  img.height = h;
  img.channels = c;
  img.data.assign(static_cast<size_t>(w) * h * c, value);
  return img;
}

ImageF random_image(int w, int h, int c, uint64_t seed) {
  ImageF img = make_image(w, h, c, 0.0f);
  Rng rng = Rng::seeded(seed, 0);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

std::vector<Pose> random_trajectory(int n, uint64_t seed) {
  Rng rng = Rng::seeded(seed, 1);
  std::vector<Pose> poses;
  for (int i = 0; i < n; ++i) {
    Vec6 t;
    for (int k = 0; k < 3; ++k) t[k] = rng.uniform(-0.8, 0.8);
    for (int k = 3; k < 6; ++k) t[k] = rng.uniform(-3.0, 3.0);
    poses.push_back(se3_exp(t));
  }
  return poses;
}

Pose random_rigid(uint64_t seed) {
  Rng rng = Rng::seeded(seed, 2);
  Vec6 t;
  for (int k = 0; k < 3; ++k) t[k] = rng.uniform(-1.2, 1.2);
  for (int k = 3; k < 6; ++k) t[k] = rng.uniform(-5.0, 5.0);
  return se3_exp(t);
}

// Horn's closed-form absolute orientation (quaternion eigenvector method);
// an independent oracle for the SVD-based Umeyama path.
Mat3 horn_rotation(std::span<const Vec3> est, std::span<const Vec3> gt) {
  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (size_t i = 0; i < est.size(); ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= est.size();
  mu_g /= gt.size();
  Mat3 m = Mat3::Zero();
  for (size_t i = 0; i < est.size(); ++i) {
    m += (est[i] - mu_e) * (gt[i] - mu_g).transpose();
  }
  Eigen::Matrix4d n;
  const double sxx = m(0, 0), sxy = m(0, 1), sxz = m(0, 2);
  const double syx = m(1, 0), syy = m(1, 1), syz = m(1, 2);
  const double szx = m(2, 0), szy = m(2, 1), szz = m(2, 2);
  n << sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
       syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
       szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
       sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(n);
  const Eigen::Vector4d q = eig.eigenvectors().col(3);  // largest eigenvalue
  Eigen::Quaterniond quat(q[0], q[1], q[2], q[3]);
  quat.normalize();
  return quat.toRotationMatrix();
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr: identical images hit the 99 dB cap") {
  const ImageF a = random_image(16, 16, 3, 5);
  CHECK(psnr(a, a) == doctest::Approx(99.0));
}

TEST_CASE("psnr: closed-form values") {
  ImageF a = make_image(8, 8, 3, 0.5f);
  ImageF b = make_image(8, 8, 3, 0.6f);  // MSE = 0.01
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
  ImageF z = make_image(8, 8, 3, 0.0f);
  ImageF o = make_image(8, 8, 3, 1.0f);  // MSE = 1
  CHECK(psnr(z, o) == doctest::Approx(0.0).epsilon(1e-12));
  ImageF wrong = make_image(7, 8, 3, 0.0f);
  CHECK_THROWS_AS(psnr(z, wrong), std::invalid_argument);
}

TEST_CASE("psnr decreases monotonically with noise amplitude") {
  const ImageF gt = random_image(24, 24, 3, 6);
  Rng rng = Rng::seeded(6, 3);
  std::vector<float> noise(gt.data.size());
  for (auto& v : noise) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  double prev = 1e9;
  for (const double amp : {0.01, 0.03, 0.09, 0.27}) {
    ImageF noisy = gt;
    for (size_t i = 0; i < noisy.data.size(); ++i) {
      noisy.data[i] = std::clamp(gt.data[i] + static_cast<float>(amp) * noise[i],
                                 0.0f, 1.0f);
    }
    const double p = psnr(noisy, gt);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("ssim: identical non-constant images score exactly one") {
  const ImageF a = random_image(20, 18, 3, 7);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim: constant images follow the luminance closed form") {
  const double av = 0.3, bv = 0.8;
  const ImageF a = make_image(16, 16, 1, static_cast<float>(av));
  const ImageF b = make_image(16, 16, 1, static_cast<float>(bv));
  const double c1 = 0.01 * 0.01;
  const double expect = (2 * av * bv + c1) / (av * av + bv * bv + c1);
  CHECK(ssim(a, b) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("ssim: inverted binary image matches the direct windowed oracle") {
  // Checkerboard-ish binary image and its inverse.
  ImageF a = make_image(18, 18, 1, 0.0f);
  for (int y = 0; y < 18; ++y) {
    for (int x = 0; x < 18; ++x) {
      a.data[y * 18 + x] = ((x / 3 + y / 3) % 2 == 0) ? 1.0f : 0.0f;
    }
  }
  ImageF b = a;
  for (auto& v : b.data) v = 1.0f - v;
  const double got = ssim(a, b);
  CHECK(got < -0.5);  // strongly negative structural agreement

  // Direct per-window evaluation oracle.
  std::vector<double> kernel(11);
  double ksum = 0;
  for (int i = 0; i < 11; ++i) {
    const double x = i - 5.0;
    kernel[i] = std::exp(-x * x / (2 * 1.5 * 1.5));
    ksum += kernel[i];
  }
  for (auto& v : kernel) v /= ksum;
  double acc = 0;
  int count = 0;
  for (int wy = 0; wy + 11 <= 18; ++wy) {
    for (int wx = 0; wx + 11 <= 18; ++wx) {
      double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
      for (int dy = 0; dy < 11; ++dy) {
        for (int dx = 0; dx < 11; ++dx) {
          const double w = kernel[dy] * kernel[dx];
          const double va = a.data[(wy + dy) * 18 + wx + dx];
          const double vb = b.data[(wy + dy) * 18 + wx + dx];
          ma += w * va;
          mb += w * vb;
          maa += w * va * va;
          mbb += w * vb * vb;
          mab += w * va * vb;
        }
      }
      const double c1 = 1e-4, c2 = 9e-4;
      const double num = (2 * ma * mb + c1) * (2 * (mab - ma * mb) + c2);
      const double den = (ma * ma + mb * mb + c1) *
                         ((maa - ma * ma) + (mbb - mb * mb) + c2);
      acc += num / den;
      ++count;
    }
  }
  CHECK(got == doctest::Approx(acc / count).epsilon(1e-9));
}

TEST_CASE("ssim rejects images smaller than the window") {
  const ImageF a = make_image(8, 8, 1, 0.5f);
  CHECK_THROWS_AS(ssim(a, a), std::invalid_argument);
}

TEST_CASE("depth_l1: closed forms and masking") {
  std::vector<float> a(10, 2.0f), b(10, 2.0f);
  std::vector<uint8_t> valid(10, 1);
  CHECK(depth_l1(a, b, valid) == doctest::Approx(0.0));
  for (auto& v : b) v += 1.5f;
  CHECK(depth_l1(a, b, valid) == doctest::Approx(1.5).epsilon(1e-6));
  // Half offset by 2, half masked out.
  std::vector<float> c(10, 2.0f);
  for (int i = 0; i < 5; ++i) {
    c[i] = 4.0f;
    valid[5 + i] = 0;
  }
  CHECK(depth_l1(c, a, valid) == doctest::Approx(2.0).epsilon(1e-6));
  std::vector<uint8_t> none(10, 0);
  CHECK_THROWS_AS(depth_l1(a, b, none), std::invalid_argument);
}

TEST_CASE("umeyama: identity for matched sets") {
  const auto traj = random_trajectory(12, 8);
  std::vector<Vec3> pts;
  for (const auto& p : traj) pts.push_back(p.translation);
  const auto t = align_umeyama(pts, pts, false);
  CHECK(t.rotation.isApprox(Mat3::Identity(), 1e-9));
  CHECK(t.translation.norm() < 1e-9);
  CHECK(t.scale == doctest::Approx(1.0));
}

TEST_CASE("umeyama recovers random rigid transforms within 1e-9") {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    const auto traj = random_trajectory(15, 100 + seed);
    const Pose rigid = random_rigid(200 + seed);
    std::vector<Vec3> gt, est;
    for (const auto& p : traj) {
      gt.push_back(p.translation);
      est.push_back(rigid.apply(p.translation));
    }
    // align(est, gt) must recover rigid^{-1}.
    const auto t = align_umeyama(est, gt, false);
    const Pose inv = pose_inverse(rigid);
    CHECK((t.rotation - inv.rotation).norm() < 1e-9);
    CHECK((t.translation - inv.translation).norm() < 1e-9);

    // Horn quaternion oracle agrees on the rotation.
    const Mat3 horn = horn_rotation(est, gt);
    CHECK((t.rotation - horn).norm() < 1e-9);
  }
}

TEST_CASE("umeyama with scale recovers the inverse scale") {
  const auto traj = random_trajectory(10, 9);
  std::vector<Vec3> gt, est;
  for (const auto& p : traj) {
    gt.push_back(p.translation);
    est.push_back(2.0 * p.translation);
  }
  const auto t = align_umeyama(est, gt, true);
  CHECK(t.scale == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("umeyama rejects degenerate input") {
  std::vector<Vec3> line, target;
  for (int i = 0; i < 6; ++i) {
    line.push_back(Vec3(i, 0, 0));
    target.push_back(Vec3(0, i, 0));
  }
  CHECK_THROWS_AS(align_umeyama(line, target, false), std::invalid_argument);
  std::vector<Vec3> two{Vec3(0, 0, 0), Vec3(1, 1, 1)};
  CHECK_THROWS_AS(align_umeyama(two, two, false), std::invalid_argument);
}

TEST_CASE("ate: zero for identical and globally transformed trajectories") {
  const auto gt = random_trajectory(20, 10);
  CHECK(ate_rmse(gt, gt) == doctest::Approx(0.0).epsilon(1e-12));
  const Pose rigid = random_rigid(11);
  std::vector<Pose> est;
  for (const auto& p : gt) est.push_back(pose_compose(rigid, p));
  CHECK(ate_rmse(est, gt) < 1e-9);
}

TEST_CASE("ate: single displaced frame matches the alignment-aware oracle") {
  const auto gt = random_trajectory(16, 12);
  std::vector<Pose> est = gt;
  est[7].translation += Vec3(3.0, 0.0, 0.0);
  const double got = ate_rmse(est, gt);
  // Oracle: align with Horn + least-squares translation, then RMS.
  std::vector<Vec3> pe, pg;
  for (size_t i = 0; i < gt.size(); ++i) {
    pe.push_back(est[i].translation);
    pg.push_back(gt[i].translation);
  }
  const Mat3 r = horn_rotation(pe, pg);
  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (size_t i = 0; i < pe.size(); ++i) {
    mu_e += pe[i];
    mu_g += pg[i];
  }
  mu_e /= pe.size();
  mu_g /= pg.size();
  const Vec3 t = mu_g - r * mu_e;
  double sum = 0;
  for (size_t i = 0; i < pe.size(); ++i) {
    sum += (r * pe[i] + t - pg[i]).squaredNorm();
  }
  const double oracle = std::sqrt(sum / pe.size());
  CHECK(got == doctest::Approx(oracle).epsilon(1e-9));
  // Sanity: below the no-realignment bound 3/sqrt(N).
  CHECK(got <= 3.0 / std::sqrt(16.0) + 1e-9);
}

TEST_CASE("rpe: zero for identical, invariant to per-trajectory transforms") {
  const auto gt = random_trajectory(20, 13);
  const auto r0 = rpe(gt, gt, 1);
  CHECK(r0.trans == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r0.rot_deg == doctest::Approx(0.0).epsilon(1e-9));

  const Pose a = random_rigid(14), b = random_rigid(15);
  std::vector<Pose> est, gt2;
  for (const auto& p : gt) {
    est.push_back(pose_compose(a, p));
    gt2.push_back(pose_compose(b, p));
  }
  const auto r1 = rpe(est, gt2, 1);
  CHECK(r1.trans < 1e-9);
  CHECK(r1.rot_deg < 1e-7);
}

TEST_CASE("rpe validates arguments") {
  const auto gt = random_trajectory(5, 16);
  auto shorter = gt;
  shorter.pop_back();
  CHECK_THROWS_AS(rpe(shorter, gt, 1), std::invalid_argument);
  CHECK_THROWS_AS(rpe(gt, gt, 0), std::invalid_argument);
  CHECK_THROWS_AS(rpe(gt, gt, 5), std::invalid_argument);
}

TEST_CASE("eval report serialization") {
  namespace fs = std::filesystem;
  EvalReport report;
  for (int i = 0; i < 3; ++i) {
    EvalRow row;
    row.frame = i * 8;
    row.psnr = 30.0 + i;
    row.ssim = 0.9;
    row.depth_l1 = 0.01;
    report.rows.push_back(row);
  }
  finalize_report(&report);
  CHECK(report.mean_psnr == doctest::Approx(31.0));
  const auto dir = fs::temp_directory_path() / "hexflow_eval_test";
  fs::create_directories(dir);
  write_eval_csv(report, (dir / "eval.csv").string());
  write_eval_text(report, (dir / "eval.txt").string());
  std::ifstream csv(dir / "eval.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "frame,psnr,ssim,depth_l1,ate_rmse,rpe_trans,rpe_rot_deg");
  int lines = 0;
  std::string line;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 4);  // three frames + summary
  fs::remove_all(dir);
}

}  // TEST_SUITE
