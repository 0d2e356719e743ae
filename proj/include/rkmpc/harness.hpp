#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "rkmpc/controllers.hpp"
#include "rkmpc/csv.hpp"
#include "rkmpc/errors.hpp"
#include "rkmpc/koopman.hpp"
#include "rkmpc/plant.hpp"
#include "rkmpc/track.hpp"

namespace rkmpc {

struct RunRecord {
  double t = 0.0;
  PlantState plant;
  TrackingErrors error;
  ControllerOutput out;
  double steer_rate = 0.0;  // |delta_k - delta_{k-1}| / T, 0 on the first step
};

struct RunMeta {
  std::string track;
  std::string controller;
  std::string plant;  // compact plant-parameter descriptor
  std::uint64_t seed = 0;
  int laps_requested = 0;
  int laps_done = 0;
  double period = 0.05;
  bool completed = false;
  bool diverged = false;
  bool timed_out = false;
};

struct RunLog {
  std::vector<RunRecord> records;
  RunMeta meta;
};

struct Metrics {
  double mean_lateral = 0.0;     // m
  double mean_heading = 0.0;     // rad
  double mean_steer_rate = 0.0;  // rad/s
  double solve_mean_ms = 0.0;
  double solve_max_ms = 0.0;
  bool completed = false;
};

struct RunOptions {
  int laps = 1;
  double abort_lateral = 2.0;   // m, DivergedRun threshold
  double max_steps_factor = 3.0;
  std::uint64_t seed = 0;
  std::string track_name;
};

inline std::string plant_summary(const PlantConfig& c) {
  std::ostringstream os;
  os << "mass=" << csv::format_double(c.mass)
     << ";Cf=" << csv::format_double(c.cornering_front)
     << ";Cr=" << csv::format_double(c.cornering_rear)
     << ";tau_steer=" << csv::format_double(c.tau_steer)
     << ";tau_speed=" << csv::format_double(c.tau_speed)
     << ";substeps=" << c.substeps;
  return os.str();
}

// Steps plant and controller at the sampling period. Laps count on forward
// crossings of the start line (through reference point 0, perpendicular to
// the path tangent), guarded by proximity and a re-arm that requires the
// vehicle to approach the line from behind after covering most of the lap.
// A nonzero seed perturbs the initial pose deterministically (lateral offset
// up to 0.1 m, heading up to 0.05 rad), so distinct seeds give distinct runs
// while every controller sharing a seed faces the same initialization.
inline RunLog run_closed_loop(const ReferenceTrajectory& ref,
                              const PlantConfig& plant_cfg, Controller& ctrl,
                              const VehicleParams& params,
                              const RunOptions& opt) {
  if (opt.laps < 1) throw InvalidArgument("run_closed_loop: laps must be >= 1");
  if (!plant_cfg.valid()) throw InvalidArgument("run_closed_loop: bad plant");
  const double T = params.sampling_period;

  RunLog log;
  log.meta.track = opt.track_name;
  log.meta.controller = ctrl.name();
  log.meta.plant = plant_summary(plant_cfg);
  log.meta.seed = opt.seed;
  log.meta.laps_requested = opt.laps;
  log.meta.period = T;

  const ReferencePoint& start = ref.points.front();
  const Eigen::Vector2d p0(start.x, start.y);
  const Eigen::Vector2d tangent(std::cos(start.theta), std::sin(start.theta));
  const double arm_margin = 0.25 * start.v * T;
  const double proximity = opt.abort_lateral + 0.5;

  auto along = [&](const Eigen::Vector2d& p) {
    return tangent.dot(p - p0);
  };

  PlantState plant = plant_at_pose({start.x, start.y, start.theta});
  ctrl.reset();

  const std::size_t expected = ref.size() * static_cast<std::size_t>(opt.laps);
  const std::size_t max_steps =
      static_cast<std::size_t>(opt.max_steps_factor *
                               static_cast<double>(expected)) + 50;

  bool armed = false;
  std::size_t last_count_step = 0;
  double prev_delta = 0.0;
  bool have_prev = false;

  for (std::size_t step = 0;; ++step) {
    const VehicleState pose = plant.pose();
    RunRecord rec;
    rec.t = static_cast<double>(step) * T;
    rec.plant = plant;
    rec.error = project(pose, ref);
    rec.out = ctrl.step(pose);
    rec.steer_rate =
        have_prev ? std::abs(rec.out.final_input.delta - prev_delta) / T : 0.0;
    prev_delta = rec.out.final_input.delta;
    have_prev = true;
    log.records.push_back(rec);

    if (std::abs(rec.error.lateral) > opt.abort_lateral) {
      log.meta.diverged = true;
      break;
    }

    const double a_before = along({plant.x, plant.y});
    plant = step_plant(plant, rec.out.final_input, plant_cfg, T);
    const double a_after = along({plant.x, plant.y});

    const bool near = (Eigen::Vector2d(plant.x, plant.y) - p0).norm() < proximity;
    if (!armed && a_before < -arm_margin && near &&
        step > last_count_step + ref.size() / 2) {
      armed = true;
    }
    if (armed && a_before < 0.0 && a_after >= 0.0 && near) {
      ++log.meta.laps_done;
      last_count_step = step;
      armed = false;
      if (log.meta.laps_done >= opt.laps) {
        log.meta.completed = true;
        break;
      }
    }
    if (step + 1 >= max_steps) {
      log.meta.timed_out = true;
      break;
    }
  }
  return log;
}

// Aggregates per the metric definitions. Each column is accumulated in
// sorted value order, which makes every aggregate a symmetric function of
// the records: any ordering of the same log yields identical bits.
inline Metrics compute_metrics(const RunLog& log) {
  if (log.records.empty()) throw rkmpc::EmptyLog("compute_metrics: empty log");
  const std::size_t n = log.records.size();
  std::vector<double> lat, head, rate, solve;
  lat.reserve(n);
  head.reserve(n);
  rate.reserve(n);
  solve.reserve(n);
  for (const auto& r : log.records) {
    lat.push_back(std::abs(r.error.lateral));
    head.push_back(std::abs(r.error.heading));
    rate.push_back(r.steer_rate);
    solve.push_back(r.out.solve_seconds);
  }
  const auto sorted_sum = [](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (const double x : v) s += x;
    return s;
  };
  Metrics m;
  const double count = static_cast<double>(n);
  m.mean_lateral = sorted_sum(lat) / count;
  m.mean_heading = sorted_sum(head) / count;
  m.mean_steer_rate = n > 1 ? sorted_sum(rate) / (count - 1.0) : 0.0;
  m.solve_mean_ms = 1e3 * sorted_sum(solve) / count;
  m.solve_max_ms = 1e3 * solve.back();  // sorted ascending: max is last
  m.completed = log.meta.completed;
  return m;
}

// Drives the mismatch plant with the LMPC and exports the command/pose log
// used by preprocessing.
inline DriveLog collect_training_log(const ReferenceTrajectory& ref,
                                     const PlantConfig& plant_cfg,
                                     const MpcConfig& lmpc_cfg,
                                     const VehicleParams& params,
                                     const RunOptions& opt) {
  if (opt.laps < 1) {
    throw InvalidArgument("collect_training_log: laps must be >= 1");
  }
  LmpcController lmpc(ref, lmpc_cfg, params);
  const RunLog run = run_closed_loop(ref, plant_cfg, lmpc, params, opt);
  if (run.meta.diverged) {
    throw Error("collect_training_log: LMPC diverged while collecting");
  }
  DriveLog log;
  log.period = params.sampling_period;
  log.records.reserve(run.records.size());
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    const RunRecord& r = run.records[i];
    log.records.push_back({static_cast<double>(i) * params.sampling_period,
                           r.plant.x, r.plant.y, r.plant.theta,
                           r.out.final_input.v, r.out.final_input.delta});
  }
  return log;
}

inline constexpr const char* kRunLogHeader =
    "t,x,y,theta,lat_err,head_err,v_cmd,delta_cmd,v_final,delta_final,"
    "solve_ms";

inline void write_run_log(std::ostream& out, const RunLog& log) {
  out << "# track=" << log.meta.track << "\n";
  out << "# controller=" << log.meta.controller << "\n";
  out << "# plant=" << log.meta.plant << "\n";
  out << "# seed=" << log.meta.seed << "\n";
  out << "# laps_requested=" << log.meta.laps_requested << "\n";
  out << "# laps_done=" << log.meta.laps_done << "\n";
  out << "# period=" << csv::format_double(log.meta.period) << "\n";
  out << "# completed=" << (log.meta.completed ? 1 : 0) << "\n";
  out << "# diverged=" << (log.meta.diverged ? 1 : 0) << "\n";
  out << "# timed_out=" << (log.meta.timed_out ? 1 : 0) << "\n";
  out << kRunLogHeader << "\n";
  for (const auto& r : log.records) {
    out << csv::format_double(r.t) << ',' << csv::format_double(r.plant.x)
        << ',' << csv::format_double(r.plant.y) << ','
        << csv::format_double(r.plant.theta) << ','
        << csv::format_double(r.error.lateral) << ','
        << csv::format_double(r.error.heading) << ','
        << csv::format_double(r.out.baseline.v) << ','
        << csv::format_double(r.out.baseline.delta) << ','
        << csv::format_double(r.out.final_input.v) << ','
        << csv::format_double(r.out.final_input.delta) << ','
        << csv::format_double(1e3 * r.out.solve_seconds) << "\n";
  }
}

inline void write_run_log_file(const std::string& path, const RunLog& log) {
  std::ofstream out(path);
  if (!out) throw ParseError("write_run_log: cannot open '" + path + "'");
  write_run_log(out, log);
}

inline RunLog read_run_log(std::istream& in) {
  RunLog log;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto meta_value = [](const std::string& l) {
    return l.substr(l.find('=') + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = line.substr(1);
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      std::string key = body.substr(0, eq);
      key.erase(0, key.find_first_not_of(' '));
      const std::string value = meta_value(body);
      if (key == "track") log.meta.track = value;
      else if (key == "controller") log.meta.controller = value;
      else if (key == "plant") log.meta.plant = value;
      else if (key == "seed") log.meta.seed = std::stoull(value);
      else if (key == "laps_requested") log.meta.laps_requested = std::stoi(value);
      else if (key == "laps_done") log.meta.laps_done = std::stoi(value);
      else if (key == "period") log.meta.period = std::stod(value);
      else if (key == "completed") log.meta.completed = value == "1";
      else if (key == "diverged") log.meta.diverged = value == "1";
      else if (key == "timed_out") log.meta.timed_out = value == "1";
      continue;
    }
    if (!header_seen) {
      if (line != kRunLogHeader) {
        throw ParseError("read_run_log: unexpected header at line " +
                         std::to_string(line_no));
      }
      header_seen = true;
      continue;
    }
    const auto fields = csv::split(line);
    if (fields.size() != 11) {
      throw ParseError("read_run_log: expected 11 fields at line " +
                       std::to_string(line_no));
    }
    RunRecord r;
    r.t = csv::to_double(fields[0], "read_run_log", line_no);
    r.plant.x = csv::to_double(fields[1], "read_run_log", line_no);
    r.plant.y = csv::to_double(fields[2], "read_run_log", line_no);
    r.plant.theta = csv::to_double(fields[3], "read_run_log", line_no);
    r.error.lateral = csv::to_double(fields[4], "read_run_log", line_no);
    r.error.heading = csv::to_double(fields[5], "read_run_log", line_no);
    r.out.baseline.v = csv::to_double(fields[6], "read_run_log", line_no);
    r.out.baseline.delta = csv::to_double(fields[7], "read_run_log", line_no);
    r.out.final_input.v = csv::to_double(fields[8], "read_run_log", line_no);
    r.out.final_input.delta = csv::to_double(fields[9], "read_run_log", line_no);
    r.out.solve_seconds =
        1e-3 * csv::to_double(fields[10], "read_run_log", line_no);
    log.records.push_back(r);
  }
  // Rates are derived data; rebuild them from the command sequence.
  for (std::size_t i = 1; i < log.records.size(); ++i) {
    log.records[i].steer_rate =
        std::abs(log.records[i].out.final_input.delta -
                 log.records[i - 1].out.final_input.delta) /
        log.meta.period;
  }
  return log;
}

inline RunLog read_run_log_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("read_run_log: cannot open '" + path + "'");
  return read_run_log(in);
}

}  // namespace rkmpc
