// SPDX-License-Identifier: Apache-2.0
#include "hexflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "hexflow/common.hpp"

namespace hexflow {

double psnr(const ImageF& pred, const ImageF& gt) {
  if (pred.width != gt.width || pred.height != gt.height ||
      pred.channels != gt.channels || pred.data.size() != gt.data.size()) {
    throw std::invalid_argument("psnr: shape mismatch");
  }
  double mse = 0.0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - gt.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(pred.data.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel() {
  std::vector<double> k(kWin);
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - (kWin - 1) / 2.0;
    k[i] = std::exp(-x * x / (2.0 * kSigma * kSigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Separable valid-region Gaussian filter of one channel plane.
std::vector<double> blur_valid(const std::vector<double>& img, int w, int h,
                               const std::vector<double>& k, int* ow, int* oh) {
  const int vw = w - kWin + 1, vh = h - kWin + 1;
  std::vector<double> rows(static_cast<size_t>(h) * vw, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < vw; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += k[i] * img[static_cast<size_t>(y) * w + x + i];
      rows[static_cast<size_t>(y) * vw + x] = s;
    }
  }
  std::vector<double> out(static_cast<size_t>(vh) * vw, 0.0);
  for (int y = 0; y < vh; ++y) {
    for (int x = 0; x < vw; ++x) {
      double s = 0.0;
      for (int i = 0; i < kWin; ++i) s += k[i] * rows[static_cast<size_t>(y + i) * vw + x];
      out[static_cast<size_t>(y) * vw + x] = s;
    }
  }
  *ow = vw;
  *oh = vh;
  return out;
}

}  // namespace

double ssim(const ImageF& pred, const ImageF& gt) {
  if (pred.width != gt.width || pred.height != gt.height ||
      pred.channels != gt.channels) {
    throw std::invalid_argument("ssim: shape mismatch");
  }
  if (pred.width < kWin || pred.height < kWin) {
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  }
  const std::vector<double> kernel = gaussian_kernel();
  const int w = pred.width, h = pred.height, ch = pred.channels;
  double total = 0.0;
  for (int c = 0; c < ch; ++c) {
    std::vector<double> a(static_cast<size_t>(w) * h), b(a.size());
    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = static_cast<size_t>(y) * w + x;
        const double va = pred.at(x, y, c), vb = gt.at(x, y, c);
        a[i] = va;
        b[i] = vb;
        aa[i] = va * va;
        bb[i] = vb * vb;
        ab[i] = va * vb;
      }
    }
    int vw = 0, vh = 0;
    const auto mu_a = blur_valid(a, w, h, kernel, &vw, &vh);
    const auto mu_b = blur_valid(b, w, h, kernel, &vw, &vh);
    const auto mu_aa = blur_valid(aa, w, h, kernel, &vw, &vh);
    const auto mu_bb = blur_valid(bb, w, h, kernel, &vw, &vh);
    const auto mu_ab = blur_valid(ab, w, h, kernel, &vw, &vh);
    double sum = 0.0;
    for (size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = mu_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = mu_bb[i] - mu_b[i] * mu_b[i];
      const double cov = mu_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + kC1) * (2.0 * cov + kC2);
      const double den =
          (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + kC1) * (var_a + var_b + kC2);
      sum += num / den;
    }
    total += sum / static_cast<double>(mu_a.size());
  }
  return total / ch;
}

double depth_l1(std::span<const float> pred, std::span<const float> gt,
                std::span<const uint8_t> valid) {
  if (pred.size() != gt.size() || pred.size() != valid.size()) {
    throw std::invalid_argument("depth_l1: shape mismatch");
  }
  double sum = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    sum += std::abs(static_cast<double>(pred[i]) - gt[i]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("depth_l1: empty valid mask");
  return sum / static_cast<double>(count);
}

SimilarityTransform align_umeyama(std::span<const Vec3> est,
                                  std::span<const Vec3> gt, bool with_scale) {
  const size_t n = est.size();
  if (n != gt.size() || n < 3) {
    throw std::invalid_argument("align_umeyama: need >= 3 paired points");
  }
  Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_e += est[i];
    mu_g += gt[i];
  }
  mu_e /= static_cast<double>(n);
  mu_g /= static_cast<double>(n);

  Mat3 sigma = Mat3::Zero();
  double var_e = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec3 e = est[i] - mu_e;
    const Vec3 g = gt[i] - mu_g;
    sigma += g * e.transpose();
    var_e += e.squaredNorm();
  }
  sigma /= static_cast<double>(n);
  var_e /= static_cast<double>(n);

  Eigen::JacobiSVD<Mat3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  // Rotation is unrecoverable when two singular values vanish (points
  // collinear in one of the sets).
  if (d[0] <= 0.0 || d[1] <= d[0] * 1e-12) {
    throw std::invalid_argument("align_umeyama: degenerate configuration");
  }
  Mat3 s = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) {
    s(2, 2) = -1.0;
  }
  SimilarityTransform t;
  t.rotation = svd.matrixU() * s * svd.matrixV().transpose();
  if (with_scale) {
    if (var_e <= 0.0) {
      throw std::invalid_argument("align_umeyama: zero variance estimate set");
    }
    t.scale = (d.asDiagonal() * s).trace() / var_e;
  }
  t.translation = mu_g - t.scale * (t.rotation * mu_e);
  return t;
}

double ate_rmse(std::span<const Pose> est, std::span<const Pose> gt) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("ate_rmse: trajectory length mismatch");
  }
  std::vector<Vec3> pe(est.size()), pg(gt.size());
  for (size_t i = 0; i < est.size(); ++i) {
    pe[i] = est[i].translation;
    pg[i] = gt[i].translation;
  }
  const SimilarityTransform t = align_umeyama(pe, pg, /*with_scale=*/false);
  double sum = 0.0;
  for (size_t i = 0; i < pe.size(); ++i) {
    sum += (t.apply(pe[i]) - pg[i]).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pe.size()));
}

RpeResult rpe(std::span<const Pose> est, std::span<const Pose> gt, int delta) {
  if (est.size() != gt.size()) {
    throw std::invalid_argument("rpe: trajectory length mismatch");
  }
  if (delta < 1 || est.size() <= static_cast<size_t>(delta)) {
    throw std::invalid_argument("rpe: need delta >= 1 and enough frames");
  }
  RpeResult out;
  const size_t n = est.size() - delta;
  for (size_t i = 0; i < n; ++i) {
    const Pose rel_gt = pose_compose(pose_inverse(gt[i]), gt[i + delta]);
    const Pose rel_est = pose_compose(pose_inverse(est[i]), est[i + delta]);
    const Pose err = pose_compose(pose_inverse(rel_gt), rel_est);
    out.trans += err.translation.norm();
    out.rot_deg += rotation_angle(err.rotation) * 180.0 / M_PI;
  }
  out.trans /= static_cast<double>(n);
  out.rot_deg /= static_cast<double>(n);
  return out;
}

void finalize_report(EvalReport* report) {
  double p = 0, s = 0, d = 0;
  for (const auto& r : report->rows) {
    p += r.psnr;
    s += r.ssim;
    d += r.depth_l1;
  }
  const double n = report->rows.empty() ? 1.0 : static_cast<double>(report->rows.size());
  report->mean_psnr = p / n;
  report->mean_ssim = s / n;
  report->mean_depth_l1 = d / n;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("write_eval_csv: cannot open " + path);
  os << "frame,psnr,ssim,depth_l1,ate_rmse,rpe_trans,rpe_rot_deg\n";
  os.precision(10);
  for (const auto& r : report.rows) {
    os << r.frame << ',' << r.psnr << ',' << r.ssim << ',' << r.depth_l1
       << ",,,\n";
  }
  os << "mean," << report.mean_psnr << ',' << report.mean_ssim << ','
     << report.mean_depth_l1 << ',';
  if (report.has_trajectory) {
    os << report.ate << ',' << report.rpe_trans << ',' << report.rpe_rot_deg;
  } else {
    os << ",,";
  }
  os << '\n';
}

void write_eval_text(const EvalReport& report, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("write_eval_text: cannot open " + path);
  os.precision(6);
  os << "frames evaluated: " << report.rows.size() << '\n';
  os << "mean PSNR (dB):   " << report.mean_psnr << '\n';
  os << "mean SSIM:        " << report.mean_ssim << '\n';
  os << "mean depth L1:    " << report.mean_depth_l1 << '\n';
  if (report.has_trajectory) {
    os << "trajectory frames: " << report.trajectory_frames << '\n';
    os << "ATE-RMSE:          " << report.ate << '\n';
    os << "RPE-Trans:         " << report.rpe_trans << '\n';
    os << "RPE-Rot (deg):     " << report.rpe_rot_deg << '\n';
  }
}

}  // namespace hexflow
