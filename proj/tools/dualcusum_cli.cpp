// Command-line driver: calibrate detectors, run experiments, reproduce the
// published comparison tables.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 calibration failure.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dualcusum/config.hpp"
#include "dualcusum/report.hpp"

#ifndef DUALCUSUM_PRESET_DIR
#define DUALCUSUM_PRESET_DIR "presets"
#endif

namespace {

using namespace dualcusum;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCalibration = 4;

struct CommonFlags {
  std::string preset;
  std::string config_path;
  std::string detector;
  std::vector<double> alphas;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> trials;
  std::optional<std::size_t> cal_trials;
  std::optional<unsigned> workers;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_trials) {
  cmd->add_option("--preset", f.preset, "Scenario preset name (file in the preset directory)");
  cmd->add_option("--config", f.config_path, "Experiment configuration file");
  cmd->add_option("--detector", f.detector, "dual_cusum | global_cusum | or | and | majority");
  cmd->add_option("--alpha", f.alphas, "Target run-level false-alarm probability (repeatable)");
  cmd->add_option("--seed", f.seed, "Master seed");
  if (with_trials) cmd->add_option("--trials", f.trials, "Measurement trials per cell");
  cmd->add_option("--cal-trials", f.cal_trials, "Calibration trials");
  cmd->add_option("--workers", f.workers, "Worker threads");
  cmd->add_option("--out", f.out, "Output CSV path (default: stdout)");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cli::io_error("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

cli::ExperimentConfig build_config(const CommonFlags& f, const cli::PresetResolver& presets) {
  std::string text;
  if (!f.config_path.empty()) {
    text = read_file(f.config_path);
    if (!f.preset.empty()) throw cli::config_error("preset", "give either --preset or --config, not both");
  } else if (!f.preset.empty()) {
    text = "preset = " + f.preset + "\n";
  } else {
    throw cli::config_error("preset", "one of --preset or --config is required");
  }
  auto cfg = cli::parse_config(text, presets);
  if (!f.detector.empty()) cfg.detector = cli::parse_detector_kind(f.detector);
  if (!f.alphas.empty()) cfg.alphas = f.alphas;
  if (f.seed) cfg.seed = *f.seed;
  if (f.trials) cfg.trials = *f.trials;
  if (f.cal_trials) cfg.cal_trials = *f.cal_trials;
  if (f.workers) cfg.workers = *f.workers;
  if (!f.out.empty()) cfg.out = f.out;
  cfg.validate();
  return cfg;
}

void write_text(const std::string& doc, const std::string& path) {
  if (path.empty() || path == "-") {
    std::fwrite(doc.data(), 1, doc.size(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cli::io_error("cannot open '" + path + "' for writing");
  out << doc;
  if (!out.flush()) throw cli::io_error("failed writing '" + path + "'");
}

int cmd_calibrate(const CommonFlags& flags, const cli::PresetResolver& presets) {
  const auto cfg = build_config(flags, presets);
  std::vector<sim::CalibrationResult> results;
  for (double alpha : cfg.alphas) {
    std::cerr << "calibrating " << cli::to_string(cfg.detector) << " at alpha=" << alpha << "\n";
    results.push_back(cli::calibrate(cfg, alpha));
  }
  write_text(cli::format_calibration(results), cfg.out);
  return 0;
}

int cmd_run(const CommonFlags& flags, const cli::PresetResolver& presets) {
  const auto cfg = build_config(flags, presets);
  std::vector<cli::ResultRow> rows;
  for (double alpha : cfg.alphas) {
    std::cerr << "running " << cli::to_string(cfg.detector) << " at alpha=" << alpha << "\n";
    const auto cell = cli::run_cell(cfg, alpha);
    auto row = cli::make_row("run", sim::detector_name(cell.detector), alpha, cfg);
    row.metrics = cell.metrics;
    rows.push_back(std::move(row));
  }
  cli::write_results(rows, cfg.out);
  return 0;
}

int cmd_reproduce(int table, const CommonFlags& flags, const cli::PresetResolver& presets) {
  cli::RunSettings s;
  if (flags.seed) s.seed = *flags.seed;
  if (flags.trials) s.trials = *flags.trials;
  if (flags.cal_trials) s.cal_trials = *flags.cal_trials;
  if (flags.workers) s.workers = *flags.workers;
  if (s.trials < 1 || s.cal_trials < 1 || s.workers < 1)
    throw cli::config_error("trials", "trial and worker counts must be >= 1");
  const auto rows = cli::reproduce_table(table, s, presets, [table](const std::string& det, double alpha) {
    std::cerr << "table " << table << ": " << det << " at alpha=" << alpha << "\n";
  });
  cli::write_results(rows, flags.out);
  for (const auto& r : rows)
    if (r.status == "calibration-failed") return kExitCalibration;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DualCUSUM cooperative spectrum sensing testbed"};
  app.require_subcommand(1);

  std::string preset_dir;
  if (const char* env = std::getenv("DUALCUSUM_PRESET_DIR")) preset_dir = env;
  if (preset_dir.empty()) preset_dir = DUALCUSUM_PRESET_DIR;
  app.add_option("--preset-dir", preset_dir, "Directory holding <name>.cfg presets");

  CommonFlags cal_flags, run_flags, rep_flags;
  auto* calibrate = app.add_subcommand("calibrate", "Tune detector thresholds to target false-alarm levels");
  add_common(calibrate, cal_flags, false);
  auto* run = app.add_subcommand("run", "Calibrate and measure one detector");
  add_common(run, run_flags, true);
  auto* reproduce = app.add_subcommand("reproduce", "Reproduce a published comparison table");
  int table = 0;
  reproduce->add_option("--table", table, "Table number (1-5)")->required();
  reproduce->add_option("--seed", rep_flags.seed, "Master seed");
  reproduce->add_option("--trials", rep_flags.trials, "Measurement trials per cell");
  reproduce->add_option("--cal-trials", rep_flags.cal_trials, "Calibration trials");
  reproduce->add_option("--workers", rep_flags.workers, "Worker threads");
  reproduce->add_option("--out", rep_flags.out, "Output CSV path (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const auto presets = cli::directory_presets(preset_dir);
  try {
    if (*calibrate) return cmd_calibrate(cal_flags, presets);
    if (*run) return cmd_run(run_flags, presets);
    return cmd_reproduce(table, rep_flags, presets);
  } catch (const cli::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const stats::domain_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cli::io_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const sim::calibration_failure& e) {
    std::cerr << "calibration failure: " << e.what() << "\n";
    return kExitCalibration;
  }
}
