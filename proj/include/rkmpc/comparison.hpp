#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "rkmpc/config.hpp"
#include "rkmpc/controllers.hpp"
#include "rkmpc/harness.hpp"
#include "rkmpc/koopman.hpp"

namespace rkmpc {

struct ComparisonCell {
  std::string controller;
  std::string track;
  std::uint64_t seed = 0;
  std::size_t samples = 0;  // training samples behind the model, 0 for lmpc
  Metrics metrics;
  bool diverged = false;
};

struct TrainedPair {
  std::size_t requested = 0;
  std::size_t actual = 0;
  KoopmanResidualModel residual;
  KoopmanResidualModel absolute;
};

struct ComparisonReport {
  std::vector<ComparisonCell> cells;
  PreprocessStats preprocess_stats;
  std::vector<TrainedPair> models;  // sorted by size, last entry = primary
  std::size_t primary_size = 0;
  std::string track;
};

namespace detail {

inline std::vector<ResidualSample> subsample(
    const std::vector<ResidualSample>& all, std::size_t count,
    std::uint64_t seed) {
  if (count >= all.size()) return all;
  std::vector<std::size_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (count + 1)));
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  std::vector<ResidualSample> out;
  out.reserve(count);
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace detail

// Collects one drive log, builds residual and absolute-input datasets from
// it, trains a model pair per requested sample count, then runs every
// controller over the shared seed list. Identical seeds see identical
// plants, so rows compare like for like.
inline ComparisonReport run_comparison(const ExperimentConfig& cfg,
                                       std::ostream* progress = nullptr) {
  auto note = [&](const std::string& msg) {
    if (progress) (*progress) << msg << "\n" << std::flush;
  };

  const ReferenceTrajectory ref = cfg.build_track_reference();
  ComparisonReport report;
  report.track = cfg.track.name;
  report.primary_size = cfg.compare.primary_size;

  note("collecting drive log (" + std::to_string(cfg.collect.laps) + " laps)");
  RunOptions collect_opt;
  collect_opt.laps = cfg.collect.laps;
  collect_opt.abort_lateral = cfg.simulate.abort_lateral;
  collect_opt.seed = cfg.seed;
  collect_opt.track_name = cfg.track.name;
  const DriveLog drive =
      collect_training_log(ref, cfg.plant, cfg.lmpc, cfg.vehicle, collect_opt);

  PreprocessConfig pp = cfg.preprocess;
  pp.seed = cfg.seed;
  note("preprocessing " + std::to_string(drive.records.size()) + " records");
  const std::vector<ResidualSample> residual_all = build_residual_dataset(
      drive, cfg.vehicle, cfg.lmpc, pp, &report.preprocess_stats, false);
  const std::vector<ResidualSample> absolute_all =
      build_residual_dataset(drive, cfg.vehicle, cfg.lmpc, pp, nullptr, true);

  std::set<std::size_t> sizes(cfg.compare.sweep_sizes.begin(),
                              cfg.compare.sweep_sizes.end());
  sizes.insert(cfg.compare.primary_size);
  for (std::size_t size : sizes) {
    TrainedPair pair;
    pair.requested = size;
    const auto res_sub = detail::subsample(residual_all, size, cfg.seed);
    const auto abs_sub = detail::subsample(absolute_all, size, cfg.seed);
    pair.actual = res_sub.size();
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    note("training pair on " + std::to_string(pair.actual) + " samples");
    pair.residual = train_lifting(res_sub, tc);
    pair.absolute = train_lifting(abs_sub, tc);
    pair.absolute.meta.input_mode = "absolute";
    report.models.push_back(std::move(pair));
  }

  auto run_cell = [&](Controller& ctrl, std::uint64_t seed,
                      std::size_t samples) {
    RunOptions opt;
    opt.laps = cfg.simulate.laps;
    opt.abort_lateral = cfg.simulate.abort_lateral;
    opt.seed = seed;
    opt.track_name = cfg.track.name;
    const RunLog log = run_closed_loop(ref, cfg.plant, ctrl, cfg.vehicle, opt);
    ComparisonCell cell;
    cell.controller = ctrl.name();
    cell.track = cfg.track.name;
    cell.seed = seed;
    cell.samples = samples;
    cell.metrics = compute_metrics(log);
    cell.diverged = log.meta.diverged;
    report.cells.push_back(cell);
  };

  for (std::uint64_t seed : cfg.compare.seeds) {
    note("running seed " + std::to_string(seed));
    LmpcController lmpc(ref, cfg.lmpc, cfg.vehicle);
    run_cell(lmpc, seed, 0);
    for (const TrainedPair& pair : report.models) {
      KmpcController kmpc(ref, pair.absolute, cfg.kmpc, cfg.vehicle);
      run_cell(kmpc, seed, pair.actual);
      RkmpcController rkmpc(ref, pair.residual, cfg.lmpc, cfg.rkmpc_residual,
                            cfg.vehicle);
      run_cell(rkmpc, seed, pair.actual);
    }
  }
  return report;
}

namespace detail {

struct AggRow {
  std::string controller;
  std::size_t samples = 0;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  std::size_t completed = 0;
  double lat = 0.0, head = 0.0, rate = 0.0, solve_mean = 0.0, solve_max = 0.0;
  bool usable = false;  // at least one non-diverged run behind the means
};

// Means over the non-diverged runs for one (controller, samples) group.
inline std::vector<AggRow> aggregate(const ComparisonReport& report,
                                     std::size_t primary_actual) {
  std::vector<AggRow> rows;
  auto find_row = [&](const std::string& c, std::size_t s) -> AggRow& {
    for (auto& r : rows) {
      if (r.controller == c && r.samples == s) return r;
    }
    rows.push_back({});
    rows.back().controller = c;
    rows.back().samples = s;
    return rows.back();
  };
  for (const auto& cell : report.cells) {
    if (cell.controller != "lmpc" && cell.samples != primary_actual) continue;
    AggRow& row = find_row(cell.controller, cell.samples);
    ++row.runs;
    if (cell.diverged) {
      ++row.diverged;
      continue;
    }
    if (cell.metrics.completed) ++row.completed;
    row.lat += cell.metrics.mean_lateral;
    row.head += cell.metrics.mean_heading;
    row.rate += cell.metrics.mean_steer_rate;
    row.solve_mean += cell.metrics.solve_mean_ms;
    row.solve_max = std::max(row.solve_max, cell.metrics.solve_max_ms);
  }
  for (auto& row : rows) {
    const std::size_t good = row.runs - row.diverged;
    if (good > 0) {
      row.usable = true;
      row.lat /= static_cast<double>(good);
      row.head /= static_cast<double>(good);
      row.rate /= static_cast<double>(good);
      row.solve_mean /= static_cast<double>(good);
    }
  }
  std::sort(rows.begin(), rows.end(), [](const AggRow& a, const AggRow& b) {
    auto order = [](const std::string& c) {
      if (c == "lmpc") return 0;
      if (c == "kmpc") return 1;
      return 2;
    };
    return order(a.controller) < order(b.controller);
  });
  return rows;
}

inline std::string fmt_cell(double v, bool usable) {
  if (!usable || !std::isfinite(v)) return "-";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace detail

// Headline table at the primary training size, means over seeds. Percentage
// columns are recomputed here from the aggregated means, never cached.
inline void write_report_csv(std::ostream& out,
                             const ComparisonReport& report) {
  std::size_t primary_actual = 0;
  for (const auto& pair : report.models) {
    if (pair.requested == report.primary_size) primary_actual = pair.actual;
  }
  const auto rows = detail::aggregate(report, primary_actual);
  const detail::AggRow* lmpc = nullptr;
  for (const auto& r : rows) {
    if (r.controller == "lmpc") lmpc = &r;
  }
  out << "controller,samples,runs,diverged,completed,mean_lat_m,"
         "mean_head_rad,mean_steer_rate_rad_s,solve_mean_ms,solve_max_ms,"
         "lat_delta_pct,head_delta_pct\n";
  for (const auto& r : rows) {
    out << r.controller << ',' << r.samples << ',' << r.runs << ','
        << r.diverged << ',' << r.completed << ','
        << detail::fmt_cell(r.lat, r.usable) << ','
        << detail::fmt_cell(r.head, r.usable) << ','
        << detail::fmt_cell(r.rate, r.usable) << ','
        << detail::fmt_cell(r.solve_mean, r.usable) << ','
        << detail::fmt_cell(r.solve_max, r.usable);
    if (r.controller != "lmpc" && lmpc && lmpc->usable && r.usable &&
        lmpc->lat > 0.0 && lmpc->head > 0.0) {
      out << ',' << detail::fmt_cell(100.0 * (r.lat - lmpc->lat) / lmpc->lat,
                                     true)
          << ','
          << detail::fmt_cell(100.0 * (r.head - lmpc->head) / lmpc->head,
                              true);
    } else {
      out << ",-,-";
    }
    out << "\n";
  }
}

// One row per run and metric so downstream tools can pivot freely.
inline void write_sweep_csv(std::ostream& out,
                            const ComparisonReport& report) {
  out << "controller,samples,track,seed,metric,value\n";
  auto emit = [&](const ComparisonCell& c, const char* metric, double value,
                  bool suppress) {
    out << c.controller << ',' << c.samples << ',' << c.track << ',' << c.seed
        << ',' << metric << ',';
    if (suppress || !std::isfinite(value)) {
      out << '-';
    } else {
      out << csv::format_double(value);
    }
    out << "\n";
  };
  for (const auto& c : report.cells) {
    emit(c, "mean_lat_m", c.metrics.mean_lateral, c.diverged);
    emit(c, "mean_head_rad", c.metrics.mean_heading, c.diverged);
    emit(c, "mean_steer_rate_rad_s", c.metrics.mean_steer_rate, c.diverged);
    emit(c, "solve_mean_ms", c.metrics.solve_mean_ms, false);
    emit(c, "solve_max_ms", c.metrics.solve_max_ms, false);
    emit(c, "completed", c.metrics.completed ? 1.0 : 0.0, false);
    emit(c, "diverged", c.diverged ? 1.0 : 0.0, false);
  }
}

inline std::string format_text_table(const ComparisonReport& report) {
  std::size_t primary_actual = 0;
  for (const auto& pair : report.models) {
    if (pair.requested == report.primary_size) primary_actual = pair.actual;
  }
  const auto rows = detail::aggregate(report, primary_actual);
  const detail::AggRow* lmpc = nullptr;
  for (const auto& r : rows) {
    if (r.controller == "lmpc") lmpc = &r;
  }
  std::string s;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "track %s, %zu training samples\n",
                report.track.c_str(), primary_actual);
  s += buf;
  std::snprintf(buf, sizeof(buf), "%-8s %10s %12s %12s %12s %10s %8s\n",
                "ctrl", "lat[m]", "head[rad]", "rate[rad/s]", "solve[ms]",
                "lat d%", "runs");
  s += buf;
  for (const auto& r : rows) {
    std::string delta = "-";
    if (r.controller != "lmpc" && lmpc && lmpc->usable && r.usable &&
        lmpc->lat > 0.0) {
      char d[32];
      std::snprintf(d, sizeof(d), "%+.2f", 100.0 * (r.lat - lmpc->lat) /
                                                lmpc->lat);
      delta = d;
    }
    std::snprintf(buf, sizeof(buf), "%-8s %10s %12s %12s %12s %10s %5zu/%zu\n",
                  r.controller.c_str(), detail::fmt_cell(r.lat, r.usable).c_str(),
                  detail::fmt_cell(r.head, r.usable).c_str(),
                  detail::fmt_cell(r.rate, r.usable).c_str(),
                  detail::fmt_cell(r.solve_mean, r.usable).c_str(),
                  delta.c_str(), r.runs - r.diverged, r.runs);
    s += buf;
  }
  return s;
}

}  // namespace rkmpc
