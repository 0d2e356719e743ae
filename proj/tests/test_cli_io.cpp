#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "rkmpc/comparison.hpp"
#include "rkmpc/config.hpp"
#include "rkmpc/harness.hpp"
#include "rkmpc/koopman_io.hpp"

namespace {

namespace fs = std::filesystem;

std::string temp_dir() {
  const std::string dir = ::testing::TempDir() + "rkmpc_cli_io";
  fs::create_directories(dir);
  return dir;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  ASSERT_TRUE(out.is_open()) << path;
  out << content;
}

std::string circle_track_csv(int n = 150, double radius = 3.0) {
  std::ostringstream os;
  os << "# x_m,y_m,w_tr_right_m,w_tr_left_m\n";
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / n;
    os << radius * std::cos(a) << "," << radius * std::sin(a) << ",0.5,0.5\n";
  }
  return os.str();
}

// Full-schema config pointing at a small circular track.
std::string full_config_json() {
  return R"({
  "schema_version": 1,
  "output_dir": "runs",
  "seed": 42,
  "vehicle": {"wheelbase": 0.33, "sampling_period": 0.05, "v_min": 0.0,
              "v_max": 3.0, "delta_min": -0.35, "delta_max": 0.35},
  "plant": {"mass": 4.2, "substeps": 16},
  "track": {"file": "circle.csv", "name": "circle", "scale": 1.0,
            "closed": true},
  "speed_profile": {"mode": "constant", "v_const": 1.4},
  "lmpc": {"horizon": 18, "w_heading": 2.0,
           "residual_box": {"dv_min": -0.2, "dv_max": 0.2}},
  "kmpc": {"horizon": 14},
  "rkmpc_residual": {"horizon": 10, "w_steer": 0.7,
                     "residual_box": {"dv_min": -0.05, "dv_max": 0.05,
                                      "ddelta_min": -0.02,
                                      "ddelta_max": 0.02}},
  "preprocess": {"conversion_ratio": 0.3, "window": 11,
                 "inversion_threshold": 0.1},
  "train": {"epochs": 3, "n_lift": 6, "hidden": 16,
            "learning_rate": 0.0005, "batch": 128, "delta_huber": 0.8,
            "refit_every": 1, "lifted_only_loss": false},
  "simulate": {"laps": 1, "abort_lateral": 1.8},
  "collect": {"laps": 1},
  "compare": {"seeds": [5, 6], "sweep_sizes": [200],
              "primary_size": 400}
})";
}

TEST(ExperimentConfig, FullSchemaRoundTrips) {
  const std::string dir = temp_dir();
  write_file(dir + "/circle.csv", circle_track_csv());
  const rkmpc::ExperimentConfig cfg =
      rkmpc::load_experiment_config(full_config_json(), dir);

  EXPECT_EQ(cfg.schema_version, 1);
  EXPECT_EQ(cfg.output_dir, "runs");
  EXPECT_EQ(cfg.seed, 42u);
  EXPECT_DOUBLE_EQ(cfg.vehicle.wheelbase, 0.33);
  EXPECT_DOUBLE_EQ(cfg.vehicle.v_max, 3.0);
  EXPECT_DOUBLE_EQ(cfg.plant.mass, 4.2);
  EXPECT_EQ(cfg.plant.substeps, 16);
  EXPECT_EQ(cfg.track.name, "circle");
  EXPECT_TRUE(cfg.track.closed);
  EXPECT_EQ(cfg.speed_profile.mode, rkmpc::SpeedProfileConfig::Mode::kConstant);
  EXPECT_DOUBLE_EQ(cfg.speed_profile.v_const, 1.4);
  EXPECT_EQ(cfg.lmpc.horizon, 18);
  EXPECT_DOUBLE_EQ(cfg.lmpc.w_heading, 2.0);
  EXPECT_DOUBLE_EQ(cfg.lmpc.residual_box.dv_min, -0.2);
  EXPECT_EQ(cfg.kmpc.horizon, 14);
  EXPECT_EQ(cfg.rkmpc_residual.horizon, 10);
  EXPECT_DOUBLE_EQ(cfg.rkmpc_residual.residual_box.ddelta_max, 0.02);
  EXPECT_DOUBLE_EQ(cfg.preprocess.conversion_ratio, 0.3);
  EXPECT_EQ(cfg.preprocess.window, 11);
  EXPECT_EQ(cfg.train.epochs, 3);
  EXPECT_EQ(cfg.train.n_lift, 6);
  EXPECT_EQ(cfg.simulate.laps, 1);
  EXPECT_DOUBLE_EQ(cfg.simulate.abort_lateral, 1.8);
  EXPECT_EQ(cfg.collect.laps, 1);
  EXPECT_EQ(cfg.compare.seeds, (std::vector<std::uint64_t>{5, 6}));
  EXPECT_EQ(cfg.compare.primary_size, 400u);

  // The referenced track resolves against the config directory.
  EXPECT_TRUE(fs::path(cfg.track.file).is_absolute());
  EXPECT_NE(cfg.track.file.find("circle.csv"), std::string::npos);
  const rkmpc::ReferenceTrajectory ref = cfg.build_track_reference();
  EXPECT_GT(ref.size(), 100u);
}

void expect_parse_error(const std::string& raw, const std::string& base,
                        const std::vector<std::string>& substrings) {
  try {
    rkmpc::load_experiment_config(raw, base);
    FAIL() << "expected ParseError";
  } catch (const rkmpc::ParseError& e) {
    const std::string msg = e.what();
    for (const auto& s : substrings) {
      EXPECT_NE(msg.find(s), std::string::npos)
          << "message '" << msg << "' lacks '" << s << "'";
    }
  }
}

TEST(ExperimentConfig, UnknownTopLevelKeyNamedWithLine) {
  expect_parse_error(
      "{\n  \"schema_version\": 1,\n  \"mystery_knob\": 3\n}", "",
      {"mystery_knob", "line 3"});
}

TEST(ExperimentConfig, UnknownNestedKeyNamed) {
  expect_parse_error(
      "{\n  \"schema_version\": 1,\n  \"train\": {\n    \"learning_rte\": 0.1\n  }\n}",
      "", {"learning_rte", "line 4"});
}

TEST(ExperimentConfig, RejectsWrongSchemaVersion) {
  expect_parse_error("{\"schema_version\": 2}", "", {"schema_version"});
}

TEST(ExperimentConfig, RejectsUnknownSpeedMode) {
  expect_parse_error(
      "{\"schema_version\": 1, \"speed_profile\": {\"mode\": \"warp\"}}", "",
      {"warp"});
}

TEST(ExperimentConfig, RejectsMissingTrackFile) {
  const std::string dir = temp_dir();
  expect_parse_error(
      "{\"schema_version\": 1, \"track\": {\"file\": \"no_such.csv\"}}", dir,
      {"not found"});
}

TEST(ExperimentConfig, RejectsMalformedJson) {
  expect_parse_error("{ nope", "", {"not valid JSON"});
}

// --- comparison plumbing -------------------------------------------------

std::vector<rkmpc::ResidualSample> indexed_samples(std::size_t n) {
  std::vector<rkmpc::ResidualSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].du = Eigen::Vector2d(static_cast<double>(i), 0.0);
  }
  return out;
}

TEST(Subsample, DeterministicSortedSubset) {
  const auto all = indexed_samples(100);
  const auto a = rkmpc::detail::subsample(all, 10, 7);
  const auto b = rkmpc::detail::subsample(all, 10, 7);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].du.x(), b[i].du.x());
    if (i > 0) EXPECT_GT(a[i].du.x(), a[i - 1].du.x());  // original order kept
    EXPECT_GE(a[i].du.x(), 0.0);
    EXPECT_LT(a[i].du.x(), 100.0);
  }

  const auto c = rkmpc::detail::subsample(all, 10, 8);
  bool any_diff = false;
  for (std::size_t i = 0; i < c.size(); ++i) {
    any_diff = any_diff || c[i].du.x() != a[i].du.x();
  }
  EXPECT_TRUE(any_diff);

  const auto everything = rkmpc::detail::subsample(all, 500, 7);
  EXPECT_EQ(everything.size(), all.size());
}

rkmpc::ComparisonCell make_cell(const std::string& ctrl, std::size_t samples,
                                std::uint64_t seed, double lat, double head,
                                bool diverged) {
  rkmpc::ComparisonCell c;
  c.controller = ctrl;
  c.track = "tiny";
  c.seed = seed;
  c.samples = samples;
  c.metrics.mean_lateral = lat;
  c.metrics.mean_heading = head;
  c.metrics.mean_steer_rate = 0.4;
  c.metrics.solve_mean_ms = 2.0;
  c.metrics.solve_max_ms = 5.0;
  c.metrics.completed = !diverged;
  c.diverged = diverged;
  return c;
}

rkmpc::ComparisonReport fabricated_report() {
  rkmpc::ComparisonReport rep;
  rep.track = "tiny";
  rep.primary_size = 2000;
  rkmpc::TrainedPair pair;
  pair.requested = 2000;
  pair.actual = 1500;
  rep.models.push_back(pair);
  rep.cells.push_back(make_cell("lmpc", 0, 1, 0.05, 0.02, false));
  rep.cells.push_back(make_cell("kmpc", 1500, 1, 0.08, 0.03, false));
  rep.cells.push_back(make_cell("rkmpc", 1500, 1, 0.03, 0.01, false));
  rep.cells.push_back(make_cell("rkmpc", 1500, 2, 1.0, 1.0, true));
  return rep;
}

TEST(ComparisonWriters, ReportCsvShapeAndDeltas) {
  const rkmpc::ComparisonReport rep = fabricated_report();
  std::stringstream ss;
  rkmpc::write_report_csv(ss, rep);
  std::string line;
  ASSERT_TRUE(std::getline(ss, line));
  EXPECT_EQ(line,
            "controller,samples,runs,diverged,completed,mean_lat_m,"
            "mean_head_rad,mean_steer_rate_rad_s,solve_mean_ms,solve_max_ms,"
            "lat_delta_pct,head_delta_pct");

  std::vector<std::string> rows;
  while (std::getline(ss, line)) rows.push_back(line);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].substr(0, 5), "lmpc,");
  EXPECT_EQ(rows[1].substr(0, 5), "kmpc,");
  EXPECT_EQ(rows[2].substr(0, 6), "rkmpc,");
  // The baseline row carries no deltas; the others recompute them from the
  // aggregated means: kmpc +60%, rkmpc -40% on lateral error.
  EXPECT_NE(rows[0].find(",-,-"), std::string::npos);
  EXPECT_NE(rows[1].find(",60,"), std::string::npos);
  EXPECT_NE(rows[2].find(",-40,"), std::string::npos);
  // The diverged rkmpc run is counted but excluded from the means.
  EXPECT_NE(rows[2].find("rkmpc,1500,2,1,1,0.03"), std::string::npos);
}

TEST(ComparisonWriters, SweepCsvSuppressesDivergedErrorMetrics) {
  const rkmpc::ComparisonReport rep = fabricated_report();
  std::stringstream ss;
  rkmpc::write_sweep_csv(ss, rep);
  std::string line;
  ASSERT_TRUE(std::getline(ss, line));
  EXPECT_EQ(line, "controller,samples,track,seed,metric,value");
  std::vector<std::string> rows;
  while (std::getline(ss, line)) rows.push_back(line);
  EXPECT_EQ(rows.size(), rep.cells.size() * 7);
  EXPECT_NE(std::find(rows.begin(), rows.end(),
                      "rkmpc,1500,tiny,2,mean_lat_m,-"),
            rows.end());
  EXPECT_NE(std::find(rows.begin(), rows.end(),
                      "rkmpc,1500,tiny,2,diverged,1"),
            rows.end());
  EXPECT_NE(std::find(rows.begin(), rows.end(),
                      "lmpc,0,tiny,1,mean_lat_m,0.05"),
            rows.end());
}

TEST(ComparisonWriters, TextTableMentionsTrackAndControllers) {
  const std::string table = rkmpc::format_text_table(fabricated_report());
  EXPECT_NE(table.find("tiny"), std::string::npos);
  EXPECT_NE(table.find("lmpc"), std::string::npos);
  EXPECT_NE(table.find("rkmpc"), std::string::npos);
}

// --- process-level CLI ---------------------------------------------------

struct CmdResult {
  int exit_code = -1;
  std::string output;
};

CmdResult run_cmd(const std::string& cmd) {
  CmdResult res;
  const std::string full = cmd + " 2>&1";
  FILE* pipe = popen(full.c_str(), "r");
  if (pipe == nullptr) return res;
  char buf[4096];
  while (fgets(buf, sizeof(buf), pipe) != nullptr) res.output += buf;
  const int status = pclose(pipe);
  if (WIFEXITED(status)) res.exit_code = WEXITSTATUS(status);
  return res;
}

class CliProcess : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = temp_dir() + "/proc";
    fs::create_directories(dir_);
    write_file(dir_ + "/circle.csv", circle_track_csv());
    write_file(dir_ + "/exp.json", full_config_json());
    cli_ = RKMPC_CLI_PATH;
    env_ = "RKMPC_OUTPUT_ROOT=" + dir_ + "/out ";
  }

  std::string dir_, cli_, env_;
};

TEST_F(CliProcess, HelpExitsCleanly) {
  EXPECT_EQ(run_cmd(cli_ + " --help").exit_code, 0);
}

TEST_F(CliProcess, UnknownControllerPrintsGrammarAndFails) {
  const CmdResult res = run_cmd(env_ + cli_ + " simulate --config " + dir_ +
                                "/exp.json --controller warp");
  EXPECT_EQ(res.exit_code, 1);
  EXPECT_NE(res.output.find("--controller"), std::string::npos);
}

TEST_F(CliProcess, SimulateWritesReadableRunLog) {
  const CmdResult res = run_cmd(env_ + cli_ + " simulate --config " + dir_ +
                                "/exp.json --controller lmpc --laps 1");
  ASSERT_EQ(res.exit_code, 0) << res.output;

  std::string found;
  for (const auto& entry : fs::recursive_directory_iterator(dir_ + "/out")) {
    if (entry.path().filename() == "run_log.csv") found = entry.path();
  }
  ASSERT_FALSE(found.empty()) << res.output;
  const rkmpc::RunLog log = rkmpc::read_run_log_file(found);
  EXPECT_GT(log.records.size(), 100u);
  EXPECT_EQ(log.meta.controller, "lmpc");
  EXPECT_TRUE(log.meta.completed);
}

TEST_F(CliProcess, PipelineArtifactsRoundTrip) {
  const std::string log = dir_ + "/drive.csv";
  const std::string ds = dir_ + "/dataset.csv";
  const std::string model = dir_ + "/model.json";

  CmdResult res = run_cmd(env_ + cli_ + " collect --config " + dir_ +
                          "/exp.json --laps 1 --out " + log);
  ASSERT_EQ(res.exit_code, 0) << res.output;
  EXPECT_NO_THROW(rkmpc::read_drive_log_file(log).validate());

  res = run_cmd(env_ + cli_ + " preprocess --config " + dir_ + "/exp.json" +
                " --log " + log + " --out " + ds);
  ASSERT_EQ(res.exit_code, 0) << res.output;
  const rkmpc::LoadedDataset loaded = rkmpc::read_dataset_file(ds);
  EXPECT_EQ(loaded.mode, "residual");
  EXPECT_GE(loaded.samples.size(), 100u);

  res = run_cmd(env_ + cli_ + " train --config " + dir_ + "/exp.json" +
                " --dataset " + ds + " --out " + model);
  ASSERT_EQ(res.exit_code, 0) << res.output;
  const rkmpc::KoopmanResidualModel m = rkmpc::load_model_file(model);
  EXPECT_EQ(m.meta.input_mode, "residual");

  // Mode conflicts between the flag and the dataset's own stamp are runtime
  // errors, not silent reinterpretation.
  res = run_cmd(env_ + cli_ + " train --config " + dir_ + "/exp.json" +
                " --dataset " + ds + " --out " + model + " --mode absolute");
  EXPECT_EQ(res.exit_code, 2);

  res = run_cmd(env_ + cli_ + " eval --config " + dir_ + "/exp.json" +
                " --model " + model + " --controller rkmpc --laps 1");
  EXPECT_EQ(res.exit_code, 0) << res.output;
}

}  // namespace
