// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point: synthetic data generation, progressive
// training, multi-field rendering and evaluation.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
// error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "hexflow/config.hpp"
#include "hexflow/data.hpp"
#include "hexflow/metrics.hpp"
#include "hexflow/pipeline.hpp"
#include "hexflow/progressive.hpp"
#include "hexflow/renderer.hpp"
#include "hexflow/synthetic.hpp"
#include "hexflow/threading.hpp"

namespace fs = std::filesystem;
using namespace hexflow;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  std::string dataset_path;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
};

RunConfig assemble_config(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = load_config(args.config_path);
  for (const auto& o : args.overrides) apply_override(&cfg, o);
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  if (!args.dataset_path.empty()) cfg.dataset_path = args.dataset_path;
  if (args.seed) cfg.seed = *args.seed;
  if (args.threads) cfg.threads = *args.threads;
  validate_config(cfg);
  return cfg;
}

void echo_config(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) return;
  fs::create_directories(cfg.output_dir);
  save_config(cfg, cfg.output_dir + "/effective.cfg");
}

int cmd_synth(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) {
    throw ConfigError("synth: run.output_dir is required");
  }
  if (cfg.rig.frame_count < cfg.schedule.bootstrap_frames) {
    throw ConfigError("synth: frame_count " + std::to_string(cfg.rig.frame_count) +
                      " is below the bootstrap requirement of " +
                      std::to_string(cfg.schedule.bootstrap_frames) + " frames");
  }
  echo_config(cfg);
  write_synthetic(cfg.rig, cfg.seed, cfg.output_dir);
  std::cout << "wrote " << cfg.rig.frame_count << " frames to " << cfg.output_dir
            << " (trajectory length " << rig_trajectory_length(cfg.rig) << ")\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.dataset_path.empty()) throw ConfigError("train: dataset.path is required");
  if (cfg.output_dir.empty()) throw ConfigError("train: run.output_dir is required");
  echo_config(cfg);
  const Dataset dataset = load_dataset(cfg.dataset_path);
  const TrainSummary summary = train_progressive(dataset, cfg);
  std::cout << "training finished: " << summary.total_iterations
            << " iterations (bootstrap " << summary.bootstrap_iterations
            << ", append " << summary.append_iterations << ", refine "
            << summary.refine_iterations << "), pose updates "
            << summary.pose_updates << "\n";
  for (const auto& rec : summary.spawn_log) {
    std::cout << "model " << rec.model_index << ": frames [" << rec.first_frame
              << ", " << rec.last_frame << "], origin frame "
              << rec.origin_frame << ", trigger "
              << (rec.trigger == SpawnTrigger::kBootstrap
                      ? "bootstrap"
                      : rec.trigger == SpawnTrigger::kCount ? "count"
                                                            : "distance")
              << "\n";
  }
  return 0;
}

struct ModelEntry {
  int index = 0;
  std::string file;
  int first = 0, last = 0, origin = 0, frozen = 1;
};

std::vector<ModelEntry> read_models_manifest(const std::string& dir) {
  std::ifstream is(dir + "/models.txt");
  if (!is) throw DataError("missing models manifest: " + dir + "/models.txt");
  std::vector<ModelEntry> entries;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ModelEntry e;
    if (!(ss >> e.index >> e.file >> e.first >> e.last >> e.origin >> e.frozen)) {
      throw DataError("malformed models.txt line: " + line);
    }
    entries.push_back(e);
  }
  if (entries.empty()) throw DataError("models.txt lists no fields: " + dir);
  return entries;
}

std::vector<int> select_frames(const std::string& sel, const RunConfig& cfg,
                               int frame_count) {
  std::vector<int> frames;
  auto held_out = [&cfg](int k) {
    return cfg.eval_stride > 0 &&
           k % cfg.eval_stride == cfg.eval_offset % cfg.eval_stride;
  };
  if (sel == "eval") {
    for (int k = 0; k < frame_count; ++k) {
      if (held_out(k)) frames.push_back(k);
    }
    if (frames.empty()) {
      throw ConfigError("frame selection 'eval' is empty (eval.stride = " +
                        std::to_string(cfg.eval_stride) + ")");
    }
  } else if (sel == "all") {
    for (int k = 0; k < frame_count; ++k) frames.push_back(k);
  } else {
    const size_t colon = sel.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("bad --frames selection: " + sel);
    }
    const int a = std::atoi(sel.substr(0, colon).c_str());
    const int b = std::atoi(sel.substr(colon + 1).c_str());
    if (a < 0 || b < a || b >= frame_count) {
      throw ConfigError("--frames range out of bounds: " + sel);
    }
    for (int k = a; k <= b; ++k) frames.push_back(k);
  }
  return frames;
}

template <typename T>
int render_with_precision(const RunConfig& cfg, const Dataset& dataset,
                          const std::vector<ModelEntry>& manifest,
                          const std::string& models_dir,
                          const std::vector<Pose>& poses,
                          const std::vector<int>& frames) {
  std::vector<LocalField<T>> fields;
  for (const auto& e : manifest) {
    fields.push_back(load_field<T>(models_dir + "/" + e.file));
  }
  fs::create_directories(cfg.output_dir + "/rgb");
  fs::create_directories(cfg.output_dir + "/depth");

  const Intrinsics& intr = dataset.intrinsics;
  const int W = intr.width, H = intr.height;
  double near = cfg.near_override > 0 ? cfg.near_override : dataset.meta.near_hint;
  double far = cfg.far_override > 0 ? cfg.far_override : dataset.meta.far_hint;
  if (!(near > 0) || !(far > near)) {
    throw DataError("render: no usable near/far planes");
  }

  ThreadPool pool(cfg.threads > 0 ? cfg.threads : hardware_threads());
  RenderParams params;
  params.near = near;
  params.far = far;
  params.n_samples = cfg.n_samples;

  std::vector<const LocalField<T>*> field_ptrs;
  for (const auto& f : fields) field_ptrs.push_back(&f);

  int64_t blended_rays = 0;
  for (const int frame : frames) {
    FrameRender<T> out;
    try {
      out = render_frame_image<T>(field_ptrs, poses[frame], frame, intr,
                                  params, &pool);
    } catch (const std::domain_error& e) {
      throw DataError(e.what());  // checkpoint/dataset coverage mismatch
    }
    if (out.covering_fields == 2) blended_rays += static_cast<int64_t>(W) * H;
    char name[32];
    std::snprintf(name, sizeof(name), "/%06d", frame);
    write_png_rgb8(cfg.output_dir + "/rgb" + name + ".png", to_u8(out.rgb));
    write_depth_bin(cfg.output_dir + "/depth" + name + ".bin", W, H,
                    out.depth_z);
    std::cout << "rendered frame " << frame << " (" << out.covering_fields
              << " field(s))\n";
  }
  std::ofstream log(cfg.output_dir + "/render_log.txt");
  log << "frames = " << frames.size() << "\nblended_rays = " << blended_rays
      << "\n";
  std::cout << "blended_rays = " << blended_rays << "\n";
  return 0;
}

int cmd_render(const RunConfig& cfg, const std::string& models_dir,
               const std::string& traj_path, const std::string& frames_sel) {
  if (cfg.dataset_path.empty()) throw ConfigError("render: dataset.path is required");
  if (cfg.output_dir.empty()) throw ConfigError("render: run.output_dir is required");
  if (models_dir.empty()) throw ConfigError("render: --models is required");
  echo_config(cfg);
  const Dataset dataset = load_dataset(cfg.dataset_path);
  const auto manifest = read_models_manifest(models_dir);

  std::vector<Pose> poses;
  std::string traj = traj_path;
  if (traj.empty() && fs::exists(models_dir + "/trajectory.txt")) {
    traj = models_dir + "/trajectory.txt";
  }
  if (!traj.empty()) {
    poses = read_trajectory(traj);
  } else if (!dataset.gt_trajectory.empty()) {
    poses = dataset.gt_trajectory;
  } else {
    throw DataError("render: no trajectory available (no --traj, no "
                    "trajectory.txt, no gt_traj.txt)");
  }
  if (static_cast<int>(poses.size()) != dataset.frame_count()) {
    throw DataError("render: trajectory frame count mismatch");
  }
  const std::vector<int> frames = select_frames(frames_sel, cfg, dataset.frame_count());
  if (cfg.precision == 64) {
    return render_with_precision<double>(cfg, dataset, manifest, models_dir,
                                         poses, frames);
  }
  return render_with_precision<float>(cfg, dataset, manifest, models_dir, poses,
                                      frames);
}

int cmd_eval(const RunConfig& cfg, const std::string& renders_dir,
             const std::string& traj_path) {
  if (cfg.dataset_path.empty()) throw ConfigError("eval: dataset.path is required");
  if (renders_dir.empty()) throw ConfigError("eval: --renders is required");
  const std::string out_dir =
      cfg.output_dir.empty() ? renders_dir : cfg.output_dir;
  fs::create_directories(out_dir);
  const Dataset dataset = load_dataset(cfg.dataset_path);

  std::vector<int> frames;
  {
    const std::string rgb_dir = renders_dir + "/rgb";
    if (!fs::is_directory(rgb_dir)) {
      throw DataError("eval: missing renders directory " + rgb_dir);
    }
    for (const auto& entry : fs::directory_iterator(rgb_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.size() >= 4 && name.substr(name.size() - 4) == ".png") {
        frames.push_back(std::atoi(name.c_str()));
      }
    }
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw DataError("eval: no rendered frames in " + rgb_dir);
  }

  EvalReport report;
  char name[32];
  for (const int k : frames) {
    if (k < 0 || k >= dataset.frame_count()) {
      throw DataError("eval: rendered frame " + std::to_string(k) +
                      " outside the dataset");
    }
    std::snprintf(name, sizeof(name), "/%06d", k);
    const ImageF pred = to_float(read_png_rgb8(renders_dir + "/rgb" + name + ".png"));
    EvalRow row;
    row.frame = k;
    row.psnr = psnr(pred, dataset.frames[k].rgb);
    row.ssim = ssim(pred, dataset.frames[k].rgb);
    const std::string dpath = renders_dir + "/depth" + name + ".bin";
    if (fs::exists(dpath)) {
      int dw = 0, dh = 0;
      const std::vector<float> pd = read_depth_bin(dpath, &dw, &dh);
      const std::vector<float>& gd = dataset.frames[k].depth;
      if (pd.size() == gd.size()) {
        std::vector<uint8_t> valid(gd.size());
        for (size_t i = 0; i < gd.size(); ++i) valid[i] = gd[i] > 0 ? 1 : 0;
        row.depth_l1 = depth_l1(pd, gd, valid);
      }
    }
    report.rows.push_back(row);
  }
  finalize_report(&report);

  if (!traj_path.empty()) {
    if (dataset.gt_trajectory.empty()) {
      throw DataError("eval: --traj given but the dataset has no gt_traj.txt");
    }
    const std::vector<Pose> est = read_trajectory(traj_path);
    if (est.size() != dataset.gt_trajectory.size()) {
      throw DataError("eval: trajectory length mismatch");
    }
    report.has_trajectory = true;
    report.trajectory_frames = static_cast<int>(est.size());
    report.ate = ate_rmse(est, dataset.gt_trajectory);
    const RpeResult r = rpe(est, dataset.gt_trajectory, 1);
    report.rpe_trans = r.trans;
    report.rpe_rot_deg = r.rot_deg;
  }

  write_eval_csv(report, out_dir + "/eval.csv");
  write_eval_text(report, out_dir + "/eval.txt");
  std::cout << "frames " << report.rows.size() << "  mean PSNR "
            << report.mean_psnr << " dB  mean SSIM " << report.mean_ssim
            << "  mean depth L1 " << report.mean_depth_l1 << "\n";
  if (report.has_trajectory) {
    std::cout << "ATE-RMSE " << report.ate << "  RPE-Trans " << report.rpe_trans
              << "  RPE-Rot " << report.rpe_rot_deg << " deg\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  enable_flush_to_zero();
  CLI::App app{"hexflow: joint camera pose and local 4D radiance field "
               "optimization on video"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string models_dir, renders_dir, traj_path, frames_sel = "eval";

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "config file");
    sub->add_option("--set", args.overrides,
                    "override a config key: section.key=value");
    sub->add_option("--out", args.output_dir, "output directory");
    sub->add_option("--dataset", args.dataset_path, "dataset directory");
    sub->add_option("--seed", args.seed, "RNG seed");
    sub->add_option("--threads", args.threads, "worker threads (0 = all cores)");
  };

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth);
  CLI::App* train = app.add_subcommand("train", "run progressive optimization");
  add_common(train);
  CLI::App* render = app.add_subcommand("render", "render frames from checkpoints");
  add_common(render);
  render->add_option("--models", models_dir, "training output directory");
  render->add_option("--traj", traj_path, "trajectory file (defaults to models dir)");
  render->add_option("--frames", frames_sel, "eval | all | a:b");
  CLI::App* eval = app.add_subcommand("eval", "compute quality metrics");
  add_common(eval);
  eval->add_option("--renders", renders_dir, "rendered frames directory");
  eval->add_option("--traj", traj_path, "estimated trajectory file");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig cfg = assemble_config(args);
    if (synth->parsed()) return cmd_synth(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (render->parsed()) return cmd_render(cfg, models_dir, traj_path, frames_sel);
    if (eval->parsed()) return cmd_eval(cfg, renders_dir, traj_path);
    std::cerr << "no subcommand given\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
