// SPDX-License-Identifier: Apache-2.0
#include "hexflow/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace hexflow {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<int>(d);
  } catch (...) {
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return static_cast<uint64_t>(d);
  } catch (...) {
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError("bad boolean value for " + key + ": '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

// One entry per key; covers parse, override and serialize paths.
struct KeyDef {
  const char* section;
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = [] {
    std::vector<KeyDef> t;
    auto add = [&t](const char* sec, const char* key, auto setter, auto getter) {
      t.push_back(KeyDef{sec, key, setter, getter});
    };
#define STR_KEY(sec, key, field)                                       \
  add(sec, key, [](RunConfig& c, const std::string& v) { c.field = v; }, \
      [](const RunConfig& c) { return c.field; })
#define INT_KEY(sec, key, field)                                          \
  add(sec, key,                                                           \
      [](RunConfig& c, const std::string& v) {                            \
        c.field = parse_int(std::string(sec) + "." + key, v);             \
      },                                                                  \
      [](const RunConfig& c) { return std::to_string(c.field); })
#define DBL_KEY(sec, key, field)                                          \
  add(sec, key,                                                           \
      [](RunConfig& c, const std::string& v) {                            \
        c.field = parse_double(std::string(sec) + "." + key, v);          \
      },                                                                  \
      [](const RunConfig& c) { return fmt_double(c.field); })
#define BOOL_KEY(sec, key, field)                                         \
  add(sec, key,                                                           \
      [](RunConfig& c, const std::string& v) {                            \
        c.field = parse_bool(std::string(sec) + "." + key, v);            \
      },                                                                  \
      [](const RunConfig& c) { return c.field ? "true" : "false"; })

    add("run", "seed",
        [](RunConfig& c, const std::string& v) { c.seed = parse_u64("run.seed", v); },
        [](const RunConfig& c) { return std::to_string(c.seed); });
    INT_KEY("run", "threads", threads);
    INT_KEY("run", "precision", precision);
    STR_KEY("run", "output_dir", output_dir);

    STR_KEY("dataset", "path", dataset_path);
    DBL_KEY("dataset", "near", near_override);
    DBL_KEY("dataset", "far", far_override);

    INT_KEY("schedule", "t_k", schedule.t_k);
    DBL_KEY("schedule", "t_d", schedule.t_d);
    INT_KEY("schedule", "overlap", schedule.overlap);
    INT_KEY("schedule", "bootstrap_frames", schedule.bootstrap_frames);
    INT_KEY("schedule", "recent_window", schedule.recent_window);
    INT_KEY("schedule", "iters_per_frame", schedule.iters_per_frame);
    DBL_KEY("schedule", "refine_flow_cutoff", schedule.refine_flow_cutoff);
    INT_KEY("schedule", "batch_rays", schedule.batch_rays);
    INT_KEY("schedule", "refine_div", schedule.refine_div);

    INT_KEY("field", "spatial_res", spatial_res);
    INT_KEY("field", "temporal_res", temporal_res);
    INT_KEY("field", "channels", channels);
    INT_KEY("field", "hidden_width", hidden_width);
    INT_KEY("field", "view_freqs", view_freqs);
    DBL_KEY("field", "grid_init_scale", grid_init_scale);
    DBL_KEY("field", "initial_density", initial_density);
    DBL_KEY("field", "c2f_start", c2f_start);

    DBL_KEY("loss", "lambda_z", lambda_z);
    DBL_KEY("loss", "lambda_f", lambda_f);
    DBL_KEY("loss", "los_eps_start", los_eps_start);
    DBL_KEY("loss", "los_eps_end", los_eps_end);

    DBL_KEY("optimizer", "lr_planes", lr_planes);
    DBL_KEY("optimizer", "lr_mlp", lr_mlp);
    DBL_KEY("optimizer", "lr_pose", lr_pose);
    DBL_KEY("optimizer", "lr_decay", lr_decay);
    DBL_KEY("optimizer", "adam_beta1", adam_beta1);
    DBL_KEY("optimizer", "adam_beta2", adam_beta2);
    DBL_KEY("optimizer", "adam_eps", adam_eps);

    INT_KEY("render", "n_samples", n_samples);

    INT_KEY("eval", "stride", eval_stride);
    INT_KEY("eval", "offset", eval_offset);

    BOOL_KEY("pose", "optimization", pose_optimization);

    INT_KEY("synth", "frame_count", rig.frame_count);
    INT_KEY("synth", "width", rig.width);
    INT_KEY("synth", "height", rig.height);
    DBL_KEY("synth", "focal", rig.focal);
    DBL_KEY("synth", "inner_radius", rig.inner_radius);
    DBL_KEY("synth", "env_radius", rig.env_radius);
    DBL_KEY("synth", "deform_amplitude", rig.deform_amplitude);
    DBL_KEY("synth", "deform_freq", rig.deform_freq);
    DBL_KEY("synth", "deform_phase", rig.deform_phase);
    DBL_KEY("synth", "env_amplitude", rig.env_amplitude);
    DBL_KEY("synth", "orbit_radius", rig.orbit_radius);
    DBL_KEY("synth", "orbit_height", rig.orbit_height);
    DBL_KEY("synth", "orbit_start_deg", rig.orbit_start_deg);
    DBL_KEY("synth", "orbit_span_deg", rig.orbit_span_deg);
    BOOL_KEY("synth", "look_outward", rig.look_outward);
    INT_KEY("synth", "texture_octaves", rig.texture_octaves);
    DBL_KEY("synth", "texture_scale", rig.texture_scale);
    STR_KEY("synth", "unit", rig.unit);
#undef STR_KEY
#undef INT_KEY
#undef DBL_KEY
#undef BOOL_KEY
    return t;
  }();
  return table;
}

void set_key(RunConfig* cfg, const std::string& section, const std::string& key,
             const std::string& value) {
  for (const auto& def : key_table()) {
    if (section == def.section && key == def.key) {
      def.set(*cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + section + "." + key);
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("unterminated section header at line " +
                          std::to_string(line_no));
      }
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& def : key_table()) known |= section == def.section;
      if (!known) throw ConfigError("unknown config section: [" + section + "]");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("expected key = value at line " + std::to_string(line_no));
    }
    if (section.empty()) {
      throw ConfigError("key outside any section at line " + std::to_string(line_no));
    }
    set_key(&cfg, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

void apply_override(RunConfig* cfg, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  const std::string path = trim(assignment.substr(0, eq));
  const size_t dot = path.find('.');
  if (dot == std::string::npos) {
    throw ConfigError("override must look like section.key=value: " + assignment);
  }
  set_key(cfg, path.substr(0, dot), path.substr(dot + 1),
          trim(assignment.substr(eq + 1)));
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream os;
  std::string current;
  for (const auto& def : key_table()) {
    if (current != def.section) {
      if (!current.empty()) os << '\n';
      current = def.section;
      os << '[' << current << "]\n";
    }
    os << def.key << " = " << def.get(cfg) << '\n';
  }
  return os.str();
}

void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write config file: " + path);
  os << serialize_config(cfg);
}

void validate_config(const RunConfig& cfg) {
  if (cfg.precision != 32 && cfg.precision != 64) {
    throw ConfigError("run.precision must be 32 or 64");
  }
  if (cfg.threads < 0) throw ConfigError("run.threads must be >= 0");
  const ScheduleConfig& s = cfg.schedule;
  if (s.bootstrap_frames < 1) throw ConfigError("schedule.bootstrap_frames must be >= 1");
  if (s.overlap < 0 || s.overlap >= s.t_k) {
    throw ConfigError("schedule.overlap must satisfy 0 <= overlap < t_k");
  }
  if (s.recent_window < 1) throw ConfigError("schedule.recent_window must be >= 1");
  if (s.iters_per_frame < 1) throw ConfigError("schedule.iters_per_frame must be >= 1");
  if (s.batch_rays < 1) throw ConfigError("schedule.batch_rays must be >= 1");
  if (s.refine_div < 1) throw ConfigError("schedule.refine_div must be >= 1");
  if (s.refine_flow_cutoff < 0 || s.refine_flow_cutoff > 1) {
    throw ConfigError("schedule.refine_flow_cutoff must be in [0, 1]");
  }
  if (s.t_d <= 0) throw ConfigError("schedule.t_d must be positive");
  if (cfg.spatial_res < 2) throw ConfigError("field.spatial_res must be >= 2");
  if (cfg.temporal_res < 0) throw ConfigError("field.temporal_res must be >= 0");
  if (cfg.channels < 1 || cfg.channels > 64) {
    throw ConfigError("field.channels must be in [1, 64]");
  }
  if (cfg.hidden_width < 1) throw ConfigError("field.hidden_width must be >= 1");
  if (cfg.view_freqs < 1 || cfg.view_freqs > 8) {
    throw ConfigError("field.view_freqs must be in [1, 8]");
  }
  if (cfg.c2f_start <= 0 || cfg.c2f_start > 1) {
    throw ConfigError("field.c2f_start must be in (0, 1]");
  }
  if (cfg.lambda_z < 0 || cfg.lambda_f < 0) {
    throw ConfigError("loss weights must be nonnegative");
  }
  if (cfg.n_samples < 2) throw ConfigError("render.n_samples must be >= 2");
  if (cfg.eval_stride < 0) throw ConfigError("eval.stride must be >= 0");
  if (cfg.eval_stride > 0 && cfg.eval_offset < 0) {
    throw ConfigError("eval.offset must be >= 0");
  }
}

}  // namespace hexflow
