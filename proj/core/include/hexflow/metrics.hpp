// SPDX-License-Identifier: Apache-2.0
//
// Image quality (PSNR, SSIM, depth L1) and trajectory metrics (ATE-RMSE
// with rigid alignment, RPE translation/rotation).

#pragma once

#include <span>
#include <string>
#include <vector>

#include "hexflow/geometry.hpp"
#include "hexflow/image_io.hpp"

namespace hexflow {

// 10 log10(1 / MSE) on [0,1] images, capped at 99 dB for identical inputs.
// Throws std::invalid_argument on shape mismatch.
double psnr(const ImageF& pred, const ImageF& gt);

// Windowed SSIM: 11x11 Gaussian (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
// computed per channel over fully-interior windows and averaged. Throws
// std::invalid_argument when the image is smaller than the window.
double ssim(const ImageF& pred, const ImageF& gt);

// Mean |pred - gt| over pixels with valid != 0. Throws on empty mask.
double depth_l1(std::span<const float> pred, std::span<const float> gt,
                std::span<const uint8_t> valid);

struct SimilarityTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

// Least-squares transform minimizing sum ||T(est_i) - gt_i||^2 (Umeyama).
// Throws std::invalid_argument for fewer than 3 points or a degenerate
// (rank-deficient) configuration.
SimilarityTransform align_umeyama(std::span<const Vec3> est,
                                  std::span<const Vec3> gt, bool with_scale);

// RMS translational residual after internal rigid alignment.
double ate_rmse(std::span<const Pose> est, std::span<const Pose> gt);

struct RpeResult {
  double trans = 0.0;  // mean relative translation error, scene units
  double rot_deg = 0.0;  // mean relative rotation error, degrees
};
RpeResult rpe(std::span<const Pose> est, std::span<const Pose> gt, int delta = 1);

struct EvalRow {
  int frame = 0;
  double psnr = 0, ssim = 0, depth_l1 = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr = 0, mean_ssim = 0, mean_depth_l1 = 0;
  bool has_trajectory = false;
  double ate = 0, rpe_trans = 0, rpe_rot_deg = 0;
  int trajectory_frames = 0;
};

void finalize_report(EvalReport* report);  // fills the means
void write_eval_csv(const EvalReport& report, const std::string& path);
void write_eval_text(const EvalReport& report, const std::string& path);

}  // namespace hexflow
