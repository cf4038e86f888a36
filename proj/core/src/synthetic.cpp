// SPDX-License-Identifier: Apache-2.0
#include "hexflow/synthetic.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "hexflow/common.hpp"
#include "hexflow/random.hpp"

namespace fs = std::filesystem;

namespace hexflow {

namespace {

constexpr double kTwoPi = 6.283185307179586477;

double radius_at(double base, double amp, double freq, double phase,
                 double frame) {
  return base + amp * std::sin(kTwoPi * (freq * frame + phase));
}

// Nearest entry hit for a camera outside the sphere.
std::optional<double> hit_outside(const Vec3& o, const Vec3& d, const Vec3& c,
                                  double radius) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - radius * radius);
  if (disc < 0.0) return std::nullopt;
  const double t = -b - std::sqrt(disc);
  if (t <= 1e-9) return std::nullopt;
  return t;
}

// Exit hit for a camera inside the sphere (always exists).
double hit_inside(const Vec3& o, const Vec3& d, const Vec3& c, double radius) {
  const Vec3 oc = o - c;
  const double b = oc.dot(d);
  const double disc = b * b - (oc.squaredNorm() - radius * radius);
  return -b + std::sqrt(std::max(disc, 0.0));
}

struct Palette {
  int octaves = 0;
  Vec3 kvec[3][8];
  double phase[3][8];
  double amp[3][8];

  Vec3 color(const Vec3& m) const {
    Vec3 out;
    for (int ch = 0; ch < 3; ++ch) {
      double s = 0.0;
      for (int o = 0; o < octaves; ++o) {
        s += amp[ch][o] * std::sin(kvec[ch][o].dot(m) + phase[ch][o]);
      }
      out[ch] = std::clamp(0.5 + s, 0.02, 0.98);
    }
    return out;
  }
};

Palette make_palette(Rng& rng, int octaves, double scale) {
  Palette p;
  p.octaves = std::clamp(octaves, 1, 8);
  for (int ch = 0; ch < 3; ++ch) {
    double a = 0.26;
    for (int o = 0; o < p.octaves; ++o) {
      Vec3 dir(rng.normal(), rng.normal(), rng.normal());
      if (dir.norm() < 1e-6) dir = Vec3::UnitX();
      dir.normalize();
      p.kvec[ch][o] = dir * scale * std::pow(1.7, o);
      p.phase[ch][o] = rng.uniform(0.0, kTwoPi);
      p.amp[ch][o] = a;
      a *= 0.55;
    }
  }
  return p;
}

struct SceneSample {
  double t_hit = 0;    // ray distance
  int surface = 0;     // 0 = inner sphere, 1 = shell
  Vec3 point;          // world hit point at the query frame
  Vec3 material;       // rest-configuration point (deformation removed)
};

class Scene {
 public:
  Scene(const SyntheticRig& rig, uint64_t seed) : rig_(rig) {
    Rng rng = Rng::seeded(seed, 0x7e85);
    inner_palette_ = make_palette(rng, rig.texture_octaves, rig.texture_scale);
    env_palette_ = make_palette(rng, rig.texture_octaves, rig.texture_scale * 0.6);
  }

  double inner_radius(double frame) const {
    return radius_at(rig_.inner_radius, rig_.deform_amplitude, rig_.deform_freq,
                     rig_.deform_phase, frame);
  }
  double env_radius(double frame) const {
    return radius_at(rig_.env_radius, rig_.env_amplitude, rig_.deform_freq,
                     rig_.deform_phase, frame);
  }

  SceneSample trace(const Vec3& origin, const Vec3& dir, double frame) const {
    const Vec3& c = rig_.scene_center;
    SceneSample s;
    const double t_env = hit_inside(origin, dir, c, env_radius(frame));
    const auto t_inner = hit_outside(origin, dir, c, inner_radius(frame));
    if (t_inner && *t_inner < t_env) {
      s.t_hit = *t_inner;
      s.surface = 0;
      s.point = origin + s.t_hit * dir;
      s.material = c + (s.point - c) * (rig_.inner_radius / inner_radius(frame));
    } else {
      s.t_hit = t_env;
      s.surface = 1;
      s.point = origin + s.t_hit * dir;
      s.material = c + (s.point - c) * (rig_.env_radius / env_radius(frame));
    }
    return s;
  }

  // Where the material point of `s` sits at another frame.
  Vec3 deformed_at(const SceneSample& s, double frame) const {
    const Vec3& c = rig_.scene_center;
    const double scale = s.surface == 0 ? inner_radius(frame) / rig_.inner_radius
                                        : env_radius(frame) / rig_.env_radius;
    return c + (s.material - c) * scale;
  }

  Vec3 albedo(const SceneSample& s) const {
    return s.surface == 0 ? inner_palette_.color(s.material)
                          : env_palette_.color(s.material);
  }

 private:
  const SyntheticRig& rig_;
  Palette inner_palette_;
  Palette env_palette_;
};

Intrinsics rig_intrinsics(const SyntheticRig& rig) {
  Intrinsics intr;
  intr.fx = intr.fy = rig.focal;
  intr.cx = (rig.width - 1) / 2.0;
  intr.cy = (rig.height - 1) / 2.0;
  intr.width = rig.width;
  intr.height = rig.height;
  return intr;
}

}  // namespace

Pose rig_pose(const SyntheticRig& rig, int frame) {
  const double frac =
      rig.frame_count > 1 ? static_cast<double>(frame) / (rig.frame_count - 1)
                          : 0.0;
  const double theta =
      (rig.orbit_start_deg + rig.orbit_span_deg * frac) * M_PI / 180.0;
  const Vec3 pos = rig.scene_center + Vec3(rig.orbit_radius * std::cos(theta),
                                           rig.orbit_radius * std::sin(theta),
                                           rig.orbit_height);
  Vec3 look;
  if (rig.look_outward) {
    look = Vec3(std::cos(theta), std::sin(theta), 0.0);
  } else {
    look = (rig.scene_center - pos).normalized();
  }
  Vec3 up = Vec3::UnitZ();
  if (std::abs(look.dot(up)) > 0.99) up = Vec3::UnitX();
  const Vec3 x = up.cross(look).normalized();
  const Vec3 y = look.cross(x);
  Pose p;
  p.rotation.col(0) = x;
  p.rotation.col(1) = y;
  p.rotation.col(2) = look;
  p.translation = pos;
  return p;
}

double rig_trajectory_length(const SyntheticRig& rig) {
  double len = 0.0;
  for (int k = 1; k < rig.frame_count; ++k) {
    len += (rig_pose(rig, k).translation - rig_pose(rig, k - 1).translation)
               .norm();
  }
  return len;
}

Dataset generate_synthetic(const SyntheticRig& rig, uint64_t seed) {
  if (rig.frame_count < 1) throw DataError("generate_synthetic: no frames");
  if (rig.width < 8 || rig.height < 8) {
    throw DataError("generate_synthetic: image too small");
  }
  const double inner_max = rig.inner_radius + std::abs(rig.deform_amplitude);
  const double env_min = rig.env_radius - std::abs(rig.env_amplitude);
  if (inner_max + 0.05 >= env_min) {
    throw DataError("generate_synthetic: inner sphere reaches the shell");
  }
  for (int k = 0; k < rig.frame_count; ++k) {
    const double dist = (rig_pose(rig, k).translation - rig.scene_center).norm();
    if (dist <= inner_max + 0.05) {
      throw DataError("generate_synthetic: camera inside the deforming surface "
                      "at frame " + std::to_string(k));
    }
    if (dist >= env_min - 0.05) {
      throw DataError("generate_synthetic: camera outside the shell at frame " +
                      std::to_string(k));
    }
  }

  const Scene scene(rig, seed);
  const Intrinsics intr = rig_intrinsics(rig);
  const int W = rig.width, H = rig.height, K = rig.frame_count;

  Dataset ds;
  ds.intrinsics = intr;
  ds.meta.unit = rig.unit;
  ds.has_flow = K > 1;
  ds.frames.resize(K);
  ds.gt_trajectory.resize(K);
  for (int k = 0; k < K; ++k) ds.gt_trajectory[k] = rig_pose(rig, k);

  for (int k = 0; k < K; ++k) {
    FrameRecord& fr = ds.frames[k];
    fr.rgb.width = W;
    fr.rgb.height = H;
    fr.rgb.channels = 3;
    fr.rgb.data.resize(static_cast<size_t>(W) * H * 3);
    fr.depth.resize(static_cast<size_t>(W) * H);
    if (k + 1 < K) fr.flow_fwd.resize(static_cast<size_t>(W) * H * 2);
    if (k > 0) fr.flow_bwd.resize(static_cast<size_t>(W) * H * 2);

    const Pose& pose = ds.gt_trajectory[k];
    for (int v = 0; v < H; ++v) {
      for (int u = 0; u < W; ++u) {
        const Vec2 pixel(u, v);
        const Ray ray = cast_ray(pixel, pose, intr, k);
        const SceneSample hit = scene.trace(ray.origin, ray.direction, k);
        const size_t pix = static_cast<size_t>(v) * W + u;
        const Vec3 cam_pt = pose.apply_inverse(hit.point);
        fr.depth[pix] = static_cast<float>(cam_pt.z());
        const Vec3 rgb = scene.albedo(hit);
        for (int c = 0; c < 3; ++c) {
          fr.rgb.data[3 * pix + c] = static_cast<float>(rgb[c]);
        }
        for (int dir = 0; dir < 2; ++dir) {
          const int j = dir == 0 ? k + 1 : k - 1;
          if (j < 0 || j >= K) continue;
          const Vec3 moved = scene.deformed_at(hit, j);
          const Vec3 cam_j = ds.gt_trajectory[j].apply_inverse(moved);
          Vec2 flow = Vec2::Zero();
          Vec2 target;
          if (project_checked(cam_j, intr, &target)) {
            flow = pixel - target;  // source-minus-target convention
            // Unproject/reproject roundoff; static pixels store exact zero.
            if (std::abs(flow.x()) < 1e-9) flow.x() = 0.0;
            if (std::abs(flow.y()) < 1e-9) flow.y() = 0.0;
          }
          std::vector<float>& buf = dir == 0 ? fr.flow_fwd : fr.flow_bwd;
          buf[2 * pix] = static_cast<float>(flow.x());
          buf[2 * pix + 1] = static_cast<float>(flow.y());
        }
      }
    }
  }
  compute_depth_stats(&ds);
  return ds;
}

void write_synthetic(const SyntheticRig& rig, uint64_t seed,
                     const std::string& out_dir) {
  const Dataset ds = generate_synthetic(rig, seed);
  fs::create_directories(out_dir + "/rgb");
  fs::create_directories(out_dir + "/depth");
  if (ds.has_flow) {
    fs::create_directories(out_dir + "/flow_fwd");
    fs::create_directories(out_dir + "/flow_bwd");
  }
  {
    std::ofstream os(out_dir + "/intrinsics.txt");
    if (!os) throw DataError("write_synthetic: cannot open intrinsics.txt");
    os.precision(17);
    const Intrinsics& in = ds.intrinsics;
    os << in.fx << ' ' << in.fy << ' ' << in.cx << ' ' << in.cy << ' '
       << in.width << ' ' << in.height << '\n';
    os << "unit " << rig.unit << '\n';
  }
  char name[32];
  for (int k = 0; k < ds.frame_count(); ++k) {
    const FrameRecord& fr = ds.frames[k];
    std::snprintf(name, sizeof(name), "/%06d", k);
    write_png_rgb8(out_dir + "/rgb" + name + ".png", to_u8(fr.rgb));
    write_depth_bin(out_dir + "/depth" + name + ".bin", fr.rgb.width,
                    fr.rgb.height, fr.depth);
    if (!fr.flow_fwd.empty()) {
      write_flo(out_dir + "/flow_fwd" + name + ".flo", fr.rgb.width,
                fr.rgb.height, fr.flow_fwd);
    }
    if (!fr.flow_bwd.empty()) {
      write_flo(out_dir + "/flow_bwd" + name + ".flo", fr.rgb.width,
                fr.rgb.height, fr.flow_bwd);
    }
  }
  write_trajectory(ds.gt_trajectory, out_dir + "/gt_traj.txt");

  std::ofstream mf(out_dir + "/manifest.txt");
  if (!mf) throw DataError("write_synthetic: cannot open manifest.txt");
  mf.precision(17);
  mf << "seed = " << seed << '\n'
     << "frame_count = " << rig.frame_count << '\n'
     << "width = " << rig.width << '\n'
     << "height = " << rig.height << '\n'
     << "focal = " << rig.focal << '\n'
     << "inner_radius = " << rig.inner_radius << '\n'
     << "env_radius = " << rig.env_radius << '\n'
     << "deform_amplitude = " << rig.deform_amplitude << '\n'
     << "deform_freq = " << rig.deform_freq << '\n'
     << "deform_phase = " << rig.deform_phase << '\n'
     << "env_amplitude = " << rig.env_amplitude << '\n'
     << "orbit_radius = " << rig.orbit_radius << '\n'
     << "orbit_height = " << rig.orbit_height << '\n'
     << "orbit_start_deg = " << rig.orbit_start_deg << '\n'
     << "orbit_span_deg = " << rig.orbit_span_deg << '\n'
     << "look_outward = " << (rig.look_outward ? "true" : "false") << '\n'
     << "texture_octaves = " << rig.texture_octaves << '\n'
     << "texture_scale = " << rig.texture_scale << '\n'
     << "unit = " << rig.unit << '\n';
}

}  // namespace hexflow
