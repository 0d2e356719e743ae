// Command-line front end: simulate, collect, preprocess, train, eval,
// compare. Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "rkmpc/rkmpc.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string controller;
  std::string model_path;
  std::string log_path;
  std::string dataset_path;
  std::string out_name;
  std::string mode;
  int laps = -1;
  long long seed = -1;
};

// Output root: config's output_dir unless RKMPC_OUTPUT_ROOT overrides it.
// Each invocation gets a fresh stamped subfolder so runs never clobber
// each other; file contents stay deterministic.
fs::path make_run_dir(const rkmpc::ExperimentConfig& cfg,
                      const std::string& verb) {
  fs::path root = cfg.output_dir;
  if (const char* env = std::getenv("RKMPC_OUTPUT_ROOT")) {
    if (*env != '\0') root = env;
  }
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
  fs::path dir = root / (verb + "-" + stamp);
  for (int k = 1; fs::exists(dir); ++k) {
    dir = root / (verb + "-" + std::string(stamp) + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  return dir;
}

fs::path resolve_out(const fs::path& run_dir, const std::string& name) {
  fs::path p(name);
  return p.is_absolute() ? p : run_dir / p;
}

rkmpc::ExperimentConfig load_config(const CommonArgs& a) {
  rkmpc::ExperimentConfig cfg =
      rkmpc::load_experiment_config_file(a.config_path);
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.laps >= 1) cfg.simulate.laps = a.laps;
  return cfg;
}

std::unique_ptr<rkmpc::Controller> make_controller(
    const std::string& name, const std::string& model_path,
    const rkmpc::ReferenceTrajectory& ref, const rkmpc::ExperimentConfig& cfg,
    rkmpc::KoopmanResidualModel& model_storage) {
  if (name == "lmpc") {
    return std::make_unique<rkmpc::LmpcController>(ref, cfg.lmpc, cfg.vehicle);
  }
  if (model_path.empty()) {
    throw rkmpc::InvalidArgument("controller '" + name +
                                 "' needs --model pointing at a trained model");
  }
  model_storage = rkmpc::load_model_file(model_path);
  if (name == "kmpc") {
    if (model_storage.meta.input_mode != "absolute") {
      throw rkmpc::InvalidArgument(
          "kmpc expects a model trained in absolute mode, got '" +
          model_storage.meta.input_mode + "'");
    }
    return std::make_unique<rkmpc::KmpcController>(ref, model_storage,
                                                   cfg.kmpc, cfg.vehicle);
  }
  if (model_storage.meta.input_mode != "residual") {
    throw rkmpc::InvalidArgument(
        "rkmpc expects a model trained in residual mode, got '" +
        model_storage.meta.input_mode + "'");
  }
  return std::make_unique<rkmpc::RkmpcController>(
      ref, model_storage, cfg.lmpc, cfg.rkmpc_residual, cfg.vehicle);
}

void print_metrics(const rkmpc::RunLog& log) {
  const rkmpc::Metrics m = rkmpc::compute_metrics(log);
  std::cout << "laps " << log.meta.laps_done << "/"
            << log.meta.laps_requested
            << (log.meta.diverged ? " (diverged)" : "")
            << (log.meta.timed_out ? " (timed out)" : "") << "\n"
            << "mean |lateral|   " << m.mean_lateral << " m\n"
            << "mean |heading|   " << m.mean_heading << " rad\n"
            << "mean steer rate  " << m.mean_steer_rate << " rad/s\n"
            << "solve time       " << m.solve_mean_ms << " ms mean, "
            << m.solve_max_ms << " ms max\n";
}

int run_single(const CommonArgs& a) {
  const rkmpc::ExperimentConfig cfg = load_config(a);
  const rkmpc::ReferenceTrajectory ref = cfg.build_track_reference();
  rkmpc::KoopmanResidualModel model;
  auto ctrl = make_controller(a.controller, a.model_path, ref, cfg, model);

  rkmpc::RunOptions opt;
  opt.laps = cfg.simulate.laps;
  opt.abort_lateral = cfg.simulate.abort_lateral;
  opt.seed = cfg.seed;
  opt.track_name = cfg.track.name;

  const rkmpc::RunLog log =
      rkmpc::run_closed_loop(ref, cfg.plant, *ctrl, cfg.vehicle, opt);
  const fs::path dir = make_run_dir(cfg, a.controller);
  const fs::path out = dir / "run_log.csv";
  rkmpc::write_run_log_file(out.string(), log);
  std::cout << "run log: " << out.string() << "\n";
  print_metrics(log);
  if (log.meta.diverged) {
    std::cerr << "error: run diverged (|lateral| exceeded "
              << cfg.simulate.abort_lateral << " m)\n";
    return 2;
  }
  return 0;
}

int run_collect(const CommonArgs& a) {
  const rkmpc::ExperimentConfig cfg = load_config(a);
  const rkmpc::ReferenceTrajectory ref = cfg.build_track_reference();
  rkmpc::RunOptions opt;
  opt.laps = a.laps;
  opt.abort_lateral = cfg.simulate.abort_lateral;
  opt.seed = cfg.seed;
  opt.track_name = cfg.track.name;
  const rkmpc::DriveLog log =
      rkmpc::collect_training_log(ref, cfg.plant, cfg.lmpc, cfg.vehicle, opt);
  const fs::path dir = make_run_dir(cfg, "collect");
  const fs::path out = resolve_out(dir, a.out_name);
  rkmpc::write_drive_log_file(out.string(), log);
  std::cout << "drive log: " << out.string() << " (" << log.records.size()
            << " records)\n";
  return 0;
}

int run_preprocess(const CommonArgs& a) {
  const rkmpc::ExperimentConfig cfg = load_config(a);
  const rkmpc::DriveLog log = rkmpc::read_drive_log_file(a.log_path);
  rkmpc::PreprocessConfig pp = cfg.preprocess;
  pp.seed = cfg.seed;
  const bool absolute = a.mode == "absolute";
  rkmpc::PreprocessStats stats;
  const auto samples = rkmpc::build_residual_dataset(log, cfg.vehicle,
                                                     cfg.lmpc, pp, &stats,
                                                     absolute);
  const fs::path dir = make_run_dir(cfg, "preprocess");
  const fs::path out = resolve_out(dir, a.out_name);
  rkmpc::write_dataset_file(out.string(), samples,
                            absolute ? "absolute" : "residual");
  std::cout << "dataset: " << out.string() << "\n"
            << "records " << stats.log_records << ", origins "
            << stats.origins_used << "/" << stats.origins_requested
            << ", window skips " << stats.window_skips
            << ", inversion failures " << stats.inversion_failures
            << ", samples " << stats.samples << "\n";
  return 0;
}

int run_train(const CommonArgs& a) {
  const rkmpc::ExperimentConfig cfg = load_config(a);
  const rkmpc::LoadedDataset data = rkmpc::read_dataset_file(a.dataset_path);
  if (!a.mode.empty() && a.mode != data.mode) {
    throw rkmpc::InvalidArgument("--mode " + a.mode +
                                 " conflicts with dataset mode '" + data.mode +
                                 "'");
  }
  rkmpc::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  rkmpc::KoopmanResidualModel model = rkmpc::train_lifting(data.samples, tc);
  model.meta.input_mode = data.mode;
  const fs::path dir = make_run_dir(cfg, "train");
  const fs::path out = resolve_out(dir, a.out_name);
  rkmpc::save_model_file(out.string(), model);
  std::cout << "model: " << out.string() << "\n"
            << "samples " << model.meta.sample_count << ", loss "
            << model.meta.initial_loss << " -> " << model.meta.final_loss
            << " (best epoch " << model.meta.best_epoch << "/"
            << model.meta.epochs_run << ")"
            << (model.meta.diverged ? " [diverged]" : "") << "\n";
  return 0;
}

int run_compare(const CommonArgs& a) {
  const rkmpc::ExperimentConfig cfg = load_config(a);
  const rkmpc::ComparisonReport report = rkmpc::run_comparison(cfg, &std::cout);
  const fs::path dir = make_run_dir(cfg, "compare");
  {
    std::ofstream out(dir / "report.csv");
    rkmpc::write_report_csv(out, report);
  }
  {
    std::ofstream out(dir / "sweep.csv");
    rkmpc::write_sweep_csv(out, report);
  }
  const std::string table = rkmpc::format_text_table(report);
  {
    std::ofstream out(dir / "table.txt");
    out << table;
  }
  for (std::size_t i = 0; i < report.models.size(); ++i) {
    const auto& pair = report.models[i];
    const std::string tag = std::to_string(pair.actual);
    rkmpc::save_model_file((dir / ("model_residual_" + tag + ".json")).string(),
                           pair.residual);
    rkmpc::save_model_file((dir / ("model_absolute_" + tag + ".json")).string(),
                           pair.absolute);
  }
  std::cout << table << "report dir: " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory tracking stack: linear MPC baseline plus a "
               "learned lifted-linear residual correction"};
  app.require_subcommand(1);
  CommonArgs a;

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "experiment config (JSON)")
        ->required();
  };

  CLI::App* sim = app.add_subcommand("simulate", "closed-loop run");
  add_config(sim);
  sim->add_option("--controller", a.controller, "lmpc|kmpc|rkmpc")
      ->required()
      ->check(CLI::IsMember({"lmpc", "kmpc", "rkmpc"}));
  sim->add_option("--laps", a.laps, "laps to drive");
  sim->add_option("--seed", a.seed, "seed override");
  sim->add_option("--model", a.model_path, "trained model (kmpc/rkmpc)");

  CLI::App* col = app.add_subcommand("collect", "record an LMPC drive log");
  add_config(col);
  col->add_option("--laps", a.laps, "laps to record")->required();
  col->add_option("--out", a.out_name, "drive log file")->required();
  col->add_option("--seed", a.seed, "seed override");

  CLI::App* pre = app.add_subcommand("preprocess",
                                     "drive log -> training dataset");
  add_config(pre);
  pre->add_option("--log", a.log_path, "drive log CSV")
      ->required()
      ->check(CLI::ExistingFile);
  pre->add_option("--out", a.out_name, "dataset file")->required();
  pre->add_option("--mode", a.mode, "residual|absolute (default residual)")
      ->check(CLI::IsMember({"residual", "absolute"}));
  pre->add_option("--seed", a.seed, "seed override");

  CLI::App* tr = app.add_subcommand("train", "fit lifted model on a dataset");
  add_config(tr);
  tr->add_option("--dataset", a.dataset_path, "dataset file")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--out", a.out_name, "model file")->required();
  tr->add_option("--mode", a.mode, "residual|absolute (must match dataset)")
      ->check(CLI::IsMember({"residual", "absolute"}));
  tr->add_option("--seed", a.seed, "seed override");

  CLI::App* ev = app.add_subcommand("eval", "run a trained model closed loop");
  add_config(ev);
  ev->add_option("--model", a.model_path, "trained model")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--controller", a.controller, "lmpc|kmpc|rkmpc")
      ->required()
      ->check(CLI::IsMember({"lmpc", "kmpc", "rkmpc"}));
  ev->add_option("--laps", a.laps, "laps to drive");
  ev->add_option("--seed", a.seed, "seed override");

  CLI::App* cmp = app.add_subcommand("compare", "full controller comparison");
  add_config(cmp);
  cmp->add_option("--seed", a.seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    std::cerr << app.help() << "\n";
    return 1;
  }

  try {
    if (sim->parsed()) return run_single(a);
    if (col->parsed()) return run_collect(a);
    if (pre->parsed()) return run_preprocess(a);
    if (tr->parsed()) return run_train(a);
    if (ev->parsed()) return run_single(a);
    if (cmp->parsed()) return run_compare(a);
  } catch (const rkmpc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
