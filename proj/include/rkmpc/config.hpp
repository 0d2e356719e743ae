#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rkmpc/errors.hpp"
#include "rkmpc/koopman.hpp"
#include "rkmpc/plant.hpp"
#include "rkmpc/track.hpp"
#include "rkmpc/tracking_qp.hpp"
#include "rkmpc/vehicle.hpp"

namespace rkmpc {

struct TrackConfig {
  std::string file;
  std::string name = "track";
  double scale = 1.0;
  bool closed = true;
};

struct SimulateConfig {
  int laps = 1;
  double abort_lateral = 2.0;
};

struct CollectConfig {
  int laps = 2;
};

struct CompareConfig {
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::vector<std::size_t> sweep_sizes = {};
  std::size_t primary_size = 8000;
};

struct ExperimentConfig {
  int schema_version = 1;
  std::string output_dir = "out";
  std::uint64_t seed = 1;
  VehicleParams vehicle;
  PlantConfig plant;
  TrackConfig track;
  SpeedProfileConfig speed_profile;
  MpcConfig lmpc;
  MpcConfig kmpc;
  MpcConfig rkmpc_residual;
  PreprocessConfig preprocess;
  TrainConfig train;
  SimulateConfig simulate;
  CollectConfig collect;
  CompareConfig compare;

  ReferenceTrajectory build_track_reference() const {
    Track t = load_track_file(track.file, {track.scale, track.closed});
    return build_reference(t, speed_profile, vehicle);
  }
};

namespace detail {

// Best-effort line for an offending key: first occurrence of "key" in the
// raw text, counting newlines before it.
inline std::size_t key_line(const std::string& text, const std::string& key) {
  const auto pos = text.find("\"" + key + "\"");
  if (pos == std::string::npos) return 0;
  return 1 + static_cast<std::size_t>(
                 std::count(text.begin(), text.begin() + static_cast<long>(pos),
                            '\n'));
}

class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& node, const std::string& raw,
               std::string path)
      : node_(node), raw_(raw), path_(std::move(path)) {
    if (!node_.is_object()) {
      throw ParseError("config: expected object at " + path_);
    }
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    try {
      out = node_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("config: bad value for '" + path_ + key + "' (line " +
                       std::to_string(key_line(raw_, key)) + "): " + e.what());
    }
  }

  ConfigReader child(const std::string& key) {
    seen_.insert(key);
    return ConfigReader(node_.at(key), raw_, path_ + key + ".");
  }

  bool has_child(const std::string& key) {
    return node_.contains(key) && node_.at(key).is_object();
  }

  // Every key in the object must have been consumed by has()/get()/child().
  void finish() {
    for (const auto& item : node_.items()) {
      if (seen_.count(item.key()) == 0) {
        throw ParseError("config: unknown key '" + path_ + item.key() +
                         "' (line " +
                         std::to_string(key_line(raw_, item.key())) + ")");
      }
    }
  }

 private:
  const nlohmann::json& node_;
  const std::string& raw_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void read_mpc(ConfigReader r, MpcConfig& cfg) {
  r.get("horizon", cfg.horizon);
  r.get("w_position", cfg.w_position);
  r.get("w_heading", cfg.w_heading);
  r.get("w_speed", cfg.w_speed);
  r.get("w_steer", cfg.w_steer);
  r.get("soft_bound_weight", cfg.soft_bound_weight);
  r.get("soft_xy_bound", cfg.soft_xy_bound);
  r.get("soft_theta_bound", cfg.soft_theta_bound);
  r.get("steer_rate_weight", cfg.steer_rate_weight);
  r.get("qp_tol", cfg.qp_tol);
  r.get("qp_max_iter", cfg.qp_max_iter);
  r.get("soft_max_passes", cfg.soft_max_passes);
  if (r.has_child("residual_box")) {
    auto b = r.child("residual_box");
    b.get("dv_min", cfg.residual_box.dv_min);
    b.get("dv_max", cfg.residual_box.dv_max);
    b.get("ddelta_min", cfg.residual_box.ddelta_min);
    b.get("ddelta_max", cfg.residual_box.ddelta_max);
    b.finish();
  }
  r.finish();
  if (!cfg.valid()) throw InvalidArgument("config: invalid mpc block");
}

}  // namespace detail

// Strict load: unknown keys are rejected by name and line, referenced files
// must exist. Relative paths resolve against the config file's directory.
inline ExperimentConfig load_experiment_config(const std::string& raw,
                                               const std::string& base_dir) {
  nlohmann::json root;
  try {
    root = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: not valid JSON: ") + e.what());
  }

  ExperimentConfig cfg;
  detail::ConfigReader r(root, raw, "");
  r.get("schema_version", cfg.schema_version);
  if (cfg.schema_version != 1) {
    throw ParseError("config: unsupported schema_version " +
                     std::to_string(cfg.schema_version));
  }
  r.get("output_dir", cfg.output_dir);
  r.get("seed", cfg.seed);

  if (r.has_child("vehicle")) {
    auto v = r.child("vehicle");
    v.get("wheelbase", cfg.vehicle.wheelbase);
    v.get("sampling_period", cfg.vehicle.sampling_period);
    v.get("v_min", cfg.vehicle.v_min);
    v.get("v_max", cfg.vehicle.v_max);
    v.get("delta_min", cfg.vehicle.delta_min);
    v.get("delta_max", cfg.vehicle.delta_max);
    v.finish();
    if (!cfg.vehicle.valid()) throw InvalidArgument("config: invalid vehicle");
  }
  if (r.has_child("plant")) {
    auto p = r.child("plant");
    p.get("mass", cfg.plant.mass);
    p.get("yaw_inertia", cfg.plant.yaw_inertia);
    p.get("cg_to_front", cfg.plant.cg_to_front);
    p.get("cg_to_rear", cfg.plant.cg_to_rear);
    p.get("cornering_front", cfg.plant.cornering_front);
    p.get("cornering_rear", cfg.plant.cornering_rear);
    p.get("tau_steer", cfg.plant.tau_steer);
    p.get("tau_speed", cfg.plant.tau_speed);
    p.get("blend_v_lo", cfg.plant.blend_v_lo);
    p.get("blend_v_hi", cfg.plant.blend_v_hi);
    p.get("blend_relax", cfg.plant.blend_relax);
    p.get("substeps", cfg.plant.substeps);
    p.finish();
    if (!cfg.plant.valid()) throw InvalidArgument("config: invalid plant");
  }
  if (r.has_child("track")) {
    auto t = r.child("track");
    t.get("file", cfg.track.file);
    t.get("name", cfg.track.name);
    t.get("scale", cfg.track.scale);
    t.get("closed", cfg.track.closed);
    t.finish();
  }
  if (r.has_child("speed_profile")) {
    auto s = r.child("speed_profile");
    std::string mode = "constant";
    s.get("mode", mode);
    if (mode == "constant") {
      cfg.speed_profile.mode = SpeedProfileConfig::Mode::kConstant;
    } else if (mode == "curvature_limited") {
      cfg.speed_profile.mode = SpeedProfileConfig::Mode::kCurvatureLimited;
    } else {
      throw ParseError("config: speed_profile.mode must be 'constant' or "
                       "'curvature_limited', got '" + mode + "'");
    }
    s.get("v_const", cfg.speed_profile.v_const);
    s.get("v_cap", cfg.speed_profile.v_cap);
    s.get("a_lat_max", cfg.speed_profile.a_lat_max);
    s.get("v_floor", cfg.speed_profile.v_floor);
    s.finish();
  }
  if (r.has_child("lmpc")) detail::read_mpc(r.child("lmpc"), cfg.lmpc);
  if (r.has_child("kmpc")) detail::read_mpc(r.child("kmpc"), cfg.kmpc);
  if (r.has_child("rkmpc_residual")) {
    detail::read_mpc(r.child("rkmpc_residual"), cfg.rkmpc_residual);
  }
  if (r.has_child("preprocess")) {
    auto p = r.child("preprocess");
    p.get("conversion_ratio", cfg.preprocess.conversion_ratio);
    p.get("window", cfg.preprocess.window);
    p.get("inversion_threshold", cfg.preprocess.inversion_threshold);
    p.finish();
  }
  if (r.has_child("train")) {
    auto t = r.child("train");
    t.get("delta_huber", cfg.train.delta_huber);
    t.get("epochs", cfg.train.epochs);
    t.get("batch", cfg.train.batch);
    t.get("learning_rate", cfg.train.learning_rate);
    t.get("refit_every", cfg.train.refit_every);
    t.get("n_lift", cfg.train.n_lift);
    t.get("hidden", cfg.train.hidden);
    t.get("lifted_only_loss", cfg.train.lifted_only_loss);
    t.finish();
  }
  if (r.has_child("simulate")) {
    auto s = r.child("simulate");
    s.get("laps", cfg.simulate.laps);
    s.get("abort_lateral", cfg.simulate.abort_lateral);
    s.finish();
  }
  if (r.has_child("collect")) {
    auto c = r.child("collect");
    c.get("laps", cfg.collect.laps);
    c.finish();
  }
  if (r.has_child("compare")) {
    auto c = r.child("compare");
    c.get("seeds", cfg.compare.seeds);
    c.get("sweep_sizes", cfg.compare.sweep_sizes);
    c.get("primary_size", cfg.compare.primary_size);
    c.finish();
  }
  r.finish();

  if (!cfg.track.file.empty()) {
    namespace fs = std::filesystem;
    fs::path p(cfg.track.file);
    if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
    if (!fs::exists(p)) {
      throw ParseError("config: track file '" + p.string() + "' not found");
    }
    cfg.track.file = p.string();
  }
  return cfg;
}

inline ExperimentConfig load_experiment_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_experiment_config(
      ss.str(), std::filesystem::path(path).parent_path().string());
}

}  // namespace rkmpc
