// SPDX-License-Identifier: Apache-2.0
#include "hexflow/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <Eigen/Geometry>

#include "hexflow/common.hpp"

namespace fs = std::filesystem;

namespace hexflow {

namespace {

std::string frame_file(const std::string& dir, int index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06d%s", index, ext);
  return dir + "/" + buf;
}

Intrinsics load_intrinsics(const std::string& path, std::string* unit) {
  std::ifstream is(path);
  if (!is) throw DataError("missing intrinsics file: " + path);
  Intrinsics intr;
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty intrinsics file: " + path);
  std::istringstream ss(line);
  if (!(ss >> intr.fx >> intr.fy >> intr.cx >> intr.cy >> intr.width >>
        intr.height)) {
    throw DataError("malformed intrinsics line in " + path);
  }
  if (!intr.valid()) throw DataError("invalid intrinsics values in " + path);
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "unit") {
      std::string value;
      if (ls >> value) *unit = value;
    } else {
      throw DataError("unknown intrinsics key '" + key + "' in " + path);
    }
  }
  return intr;
}

int count_contiguous_frames(const std::string& dir, const char* ext) {
  if (!fs::is_directory(dir)) throw DataError("missing directory: " + dir);
  int max_index = -1;
  size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.size() < 7 || name.substr(name.size() - std::strlen(ext)) != ext) {
      continue;
    }
    ++files;
    max_index = std::max(max_index, std::atoi(name.c_str()));
  }
  if (max_index < 0) throw DataError("no frames found in " + dir);
  if (files != static_cast<size_t>(max_index) + 1) {
    throw DataError("non-contiguous frame indices in " + dir);
  }
  for (int k = 0; k <= max_index; ++k) {
    if (!fs::exists(frame_file(dir, k, ext))) {
      throw DataError("non-contiguous frame indices in " + dir + ": missing " +
                      frame_file(dir, k, ext));
    }
  }
  return max_index + 1;
}

}  // namespace

Dataset load_dataset(const std::string& root) {
  Dataset ds;
  ds.intrinsics = load_intrinsics(root + "/intrinsics.txt", &ds.meta.unit);
  const int K = count_contiguous_frames(root + "/rgb", ".png");
  const int W = ds.intrinsics.width, H = ds.intrinsics.height;

  const bool fwd_dir = fs::is_directory(root + "/flow_fwd");
  const bool bwd_dir = fs::is_directory(root + "/flow_bwd");
  ds.has_flow = fwd_dir || bwd_dir;

  ds.frames.resize(K);
  for (int k = 0; k < K; ++k) {
    FrameRecord& fr = ds.frames[k];
    const std::string rgb_path = frame_file(root + "/rgb", k, ".png");
    fr.rgb = to_float(read_png_rgb8(rgb_path));
    if (fr.rgb.width != W || fr.rgb.height != H) {
      throw DataError("image resolution mismatch: " + rgb_path);
    }
    const std::string depth_path = frame_file(root + "/depth", k, ".bin");
    int dw = 0, dh = 0;
    fr.depth = read_depth_bin(depth_path, &dw, &dh);
    if (dw != W || dh != H) {
      throw DataError("depth resolution mismatch: " + depth_path);
    }
    for (const float d : fr.depth) {
      if (d < 0.0f || !std::isfinite(d)) {
        throw DataError("negative or non-finite depth in " + depth_path);
      }
    }
    if (ds.has_flow) {
      if (k + 1 < K) {
        const std::string p = frame_file(root + "/flow_fwd", k, ".flo");
        int fw = 0, fh = 0;
        fr.flow_fwd = read_flo(p, &fw, &fh);
        if (fw != W || fh != H) throw DataError("flow resolution mismatch: " + p);
      }
      if (k > 0) {
        const std::string p = frame_file(root + "/flow_bwd", k, ".flo");
        int fw = 0, fh = 0;
        fr.flow_bwd = read_flo(p, &fw, &fh);
        if (fw != W || fh != H) throw DataError("flow resolution mismatch: " + p);
      }
    }
  }

  const std::string traj_path = root + "/gt_traj.txt";
  if (fs::exists(traj_path)) {
    ds.gt_trajectory = read_trajectory(traj_path);
    if (static_cast<int>(ds.gt_trajectory.size()) != K) {
      throw DataError("gt_traj.txt frame count mismatch in " + root);
    }
  }
  compute_depth_stats(&ds);
  return ds;
}

void compute_depth_stats(Dataset* dataset) {
  std::vector<float> samples;
  double sum = 0.0;
  size_t count = 0;
  // Subsample pixels; percentiles do not need every value.
  const size_t stride = 7;
  for (const auto& fr : dataset->frames) {
    for (size_t i = 0; i < fr.depth.size(); i += stride) {
      const float d = fr.depth[i];
      if (d > 0.0f) {
        samples.push_back(d);
        sum += d;
        ++count;
      }
    }
  }
  if (samples.empty()) return;
  std::sort(samples.begin(), samples.end());
  auto pct = [&](double p) {
    const size_t i = static_cast<size_t>(p * (samples.size() - 1));
    return static_cast<double>(samples[i]);
  };
  DatasetMeta& m = dataset->meta;
  m.depth_p01 = pct(0.01);
  m.depth_p99 = pct(0.99);
  m.mean_depth = sum / static_cast<double>(count);
  // Corner pixels have the largest ray-distance per unit z.
  const Intrinsics& in = dataset->intrinsics;
  double corner = 1.0;
  for (const double u : {0.0, in.width - 1.0}) {
    for (const double v : {0.0, in.height - 1.0}) {
      corner = std::max(corner, 1.0 / ray_z_factor(Vec2(u, v), in));
    }
  }
  m.near_hint = 0.8 * m.depth_p01;
  m.far_hint = 1.2 * m.depth_p99 * corner;
}

void write_trajectory(std::span<const Pose> poses, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("write_trajectory: cannot open " + path);
  os.precision(17);
  for (size_t i = 0; i < poses.size(); ++i) {
    Eigen::Quaterniond q(poses[i].rotation);
    q.normalize();
    if (q.w() < 0) q.coeffs() = -q.coeffs();
    const Vec3& t = poses[i].translation;
    os << i << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x()
       << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
  if (!os) throw DataError("write_trajectory: write failed for " + path);
}

std::vector<Pose> read_trajectory(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("read_trajectory: cannot open " + path);
  std::vector<Pose> poses;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    long index;
    double tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> index >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw DataError("read_trajectory: malformed line " +
                      std::to_string(line_no) + " in " + path);
    }
    Eigen::Quaterniond q(qw, qx, qy, qz);
    const double norm = q.norm();
    if (norm <= 0.0) {
      throw DataError("read_trajectory: zero quaternion at line " +
                      std::to_string(line_no) + " in " + path);
    }
    if (std::abs(norm - 1.0) > 1e-9) {
      std::cerr << "read_trajectory: normalizing non-unit quaternion at line "
                << line_no << " of " << path << " (norm " << norm << ")\n";
    }
    q.normalize();
    Pose p;
    p.rotation = q.toRotationMatrix();
    p.translation = Vec3(tx, ty, tz);
    poses.push_back(p);
  }
  return poses;
}

}  // namespace hexflow
