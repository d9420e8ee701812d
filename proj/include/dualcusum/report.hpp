#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "dualcusum/config.hpp"
#include "dualcusum/sim.hpp"

namespace dualcusum::cli {

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Running one (detector, alpha) cell

struct CellOutcome {
  std::optional<sim::CalibrationResult> calibration;  // absent when thresholds were fixed
  sim::Detector detector;
  sim::Metrics metrics;
};

inline sim::CalibrationOptions calibration_options(const ExperimentConfig& cfg) {
  sim::CalibrationOptions o;
  o.n_cal = cfg.cal_trials;
  o.refine_rounds = cfg.refine_rounds;
  o.plan = {cfg.seed, cfg.workers};
  return o;
}

/// Calibrates the configured detector to run-level false-alarm target `alpha`.
inline sim::CalibrationResult calibrate(const ExperimentConfig& cfg, double alpha) {
  const auto opts = calibration_options(cfg);
  if (auto rule = fusion_rule(cfg.detector))
    return sim::calibrate_slot_fusion(cfg.scenario, algos::SlotFusionParams::make(*rule, cfg.scenario.nodes(), 0.0, cfg.quorum),
                                      alpha, opts);
  if (cfg.detector == DetectorKind::GlobalCusum) return sim::calibrate_global_cusum(cfg.scenario, alpha, opts);
  return sim::calibrate_dual_cusum(cfg.scenario, alpha, cfg.b, cfg.I, cfg.gamma_grid, opts);
}

/// Calibration (unless the config fixes the thresholds) followed by a
/// measurement on fresh streams.
inline CellOutcome run_cell(const ExperimentConfig& cfg, double alpha) {
  CellOutcome out;
  if (cfg.has_fixed_thresholds()) {
    out.detector = cfg.detector_params();
  } else {
    out.calibration = calibrate(cfg, alpha);
    out.detector = out.calibration->detector;
  }
  out.metrics = sim::measure(cfg.scenario, out.detector, cfg.trials, {cfg.seed, cfg.workers});
  return out;
}

// ---------------------------------------------------------------------------
// Published tables

inline constexpr std::array<double, 3> kTableAlphas{0.1, 0.027, 0.01};

enum class TableMetric { Edd, Etr };

struct TableRowSpec {
  std::string label;
  std::optional<DetectorKind> detector;  // nullopt: algorithm not reproduced here
  std::array<double, 3> published;         // indexed like kTableAlphas
};

struct TableSpec {
  int id = 0;
  std::string preset;
  TableMetric metric = TableMetric::Edd;
  std::vector<TableRowSpec> rows;
};

/// Published values, keyed by the alphas 0.1 / 0.027 / 0.01. Rows without
/// a detector are listed for completeness and reported as out of scope.
/// Table 5's slot-rule rows carry no published value (NaN); they are measured
/// so DualCUSUM's transmission count can be compared against them.
inline const std::vector<TableSpec>& published_tables() {
  constexpr double none = std::numeric_limits<double>::quiet_NaN();
  static const std::vector<TableSpec> tables{
      {1,
       "gaussian6",
       TableMetric::Edd,
       {{"OR", DetectorKind::Or, {24.9260, 73.4785, 154.2}},
        {"AND", DetectorKind::And, {14.6451, 34.9357, 63.4647}},
        {"MAJORITY", DetectorKind::Majority, {9.1071, 22.8804, 43.6}},
        {"DualCUSUM", DetectorKind::DualCusum, {3.6553, 5.0933, 5.9856}}}},
      {2,
       "energy6",
       TableMetric::Edd,
       {{"OR", DetectorKind::Or, {5.2674, 13.904, 25.8454}},
        {"AND", DetectorKind::And, {4.5480, 9.3234, 15.304}},
        {"MAJORITY", DetectorKind::Majority, {2.2942, 5.0638, 8.2840}},
        {"MAJORITY+CL", std::nullopt, {2.344, 5.16, 8.54}},
        {"DualCUSUM", DetectorKind::DualCusum, {1.7766, 2.5966, 3.25}}}},
      {3,
       "coop2",
       TableMetric::Edd,
       {{"Cooperative", std::nullopt, {6.22, 12.8, 19.4}},
        {"DualCUSUM", DetectorKind::DualCusum, {3.25, 4.71, 5.5443}}}},
      {4,
       "energy6",
       TableMetric::Edd,
       {{"MDC", std::nullopt, {1.0063, 2.25, 3.5683}},
        {"DualCUSUM", DetectorKind::DualCusum, {1.7766, 2.5966, 3.25}},
        {"GlobalCUSUM", DetectorKind::GlobalCusum, {0.8034, 1.3359, 1.7}}}},
      {5,
       "energy6",
       TableMetric::Etr,
       {{"MAJORITY+CL", std::nullopt, {18.8333, 24.167, 28.38}},
        {"Linear cooperation", std::nullopt, {18.75, 21.6226, 23.4762}},
        {"DualCUSUM", DetectorKind::DualCusum, {2.38, 2.1526, 1.9833}},
        {"OR", DetectorKind::Or, {none, none, none}},
        {"AND", DetectorKind::And, {none, none, none}},
        {"MAJORITY", DetectorKind::Majority, {none, none, none}}}},
  };
  return tables;
}

inline const TableSpec& published_table(int id) {
  for (const auto& t : published_tables())
    if (t.id == id) return t;
  throw config_error("table", "no table " + std::to_string(id) + " (expected 1-5)");
}

// ---------------------------------------------------------------------------
// Result rows and CSV

struct ResultRow {
  std::string table;
  std::string detector;
  double alpha = 0.0;
  std::optional<sim::Metrics> metrics;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  std::optional<double> paper_value;
  std::string status = "ok";
};

inline constexpr const char* kCsvHeader =
    "table,detector,alpha,pfa_hat,pfa_ci,edd_uncond,edd_cond,edd_ci,etr,pd_hat,trials,seed,paper_value,status";

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

/// CSV document for `rows`, sorted by (table, detector, alpha).
inline std::string format_results(std::vector<ResultRow> rows) {
  if (rows.empty()) throw algos::contract_violation("write_results: no rows");
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.table, a.detector, a.alpha) < std::tie(b.table, b.detector, b.alpha);
  });
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : rows) {
    std::vector<std::string> f{csv_field(r.table), csv_field(r.detector), format_number(r.alpha)};
    if (r.metrics) {
      const auto& m = *r.metrics;
      for (double v : {m.pfa_hat, m.pfa_ci, m.edd_unconditional, m.edd_conditional, m.edd_ci, m.etr_hat})
        f.push_back(format_number(v));
      f.push_back(format_optional(m.pd_hat));
      f.push_back(std::to_string(r.trials));
    } else {
      f.insert(f.end(), 8, std::string());
    }
    f.push_back(std::to_string(r.seed));
    f.push_back(format_optional(r.paper_value));
    f.push_back(csv_field(r.status));
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (i) out += ',';
      out += f[i];
    }
    out += '\n';
  }
  return out;
}

/// Writes the CSV to `path`, or to stdout when `path` is empty or "-".
inline void write_results(const std::vector<ResultRow>& rows, const std::string& path) {
  const std::string doc = format_results(rows);
  if (path.empty() || path == "-") {
    std::fwrite(doc.data(), 1, doc.size(), stdout);
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open '" + path + "' for writing");
  out << doc;
  out.flush();
  if (!out) throw io_error("failed writing '" + path + "'");
}

inline ResultRow make_row(std::string table, std::string detector, double alpha, const ExperimentConfig& cfg) {
  ResultRow r;
  r.table = std::move(table);
  r.detector = std::move(detector);
  r.alpha = alpha;
  r.trials = cfg.trials;
  r.seed = cfg.seed;
  return r;
}

struct RunSettings {
  std::size_t trials = 50000;
  std::size_t cal_trials = 20000;
  std::uint64_t seed = 1;
  unsigned workers = 1;
};

/// Progress callback: (detector label, alpha).
using Progress = std::function<void(const std::string&, double)>;

/// Every (row, alpha) cell of a published table. In-scope cells are
/// calibrated and measured; the rest carry status "out-of-scope". A cell
/// whose calibration fails carries status "calibration-failed".
inline std::vector<ResultRow> reproduce_table(int table_id, const RunSettings& settings, const PresetResolver& presets,
                                              const Progress& progress = {}) {
  const auto& spec = published_table(table_id);
  const std::string table = std::to_string(spec.id);
  ExperimentConfig base = parse_config("preset = " + spec.preset, presets);
  base.trials = settings.trials;
  base.cal_trials = settings.cal_trials;
  base.seed = settings.seed;
  base.workers = settings.workers;

  std::vector<ResultRow> rows;
  for (const auto& row : spec.rows) {
    for (std::size_t ai = 0; ai < kTableAlphas.size(); ++ai) {
      const double alpha = kTableAlphas[ai];
      auto r = make_row(table, row.label, alpha, base);
      if (!std::isnan(row.published[ai])) r.paper_value = row.published[ai];
      if (!row.detector) {
        r.status = "out-of-scope";
        r.trials = 0;
        rows.push_back(std::move(r));
        continue;
      }
      if (progress) progress(row.label, alpha);
      ExperimentConfig cfg = base;
      cfg.detector = *row.detector;
      try {
        r.metrics = run_cell(cfg, alpha).metrics;
      } catch (const sim::calibration_failure&) {
        r.status = "calibration-failed";
      }
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

/// Calibration report: one line per alpha with the tuned thresholds.
inline std::string format_calibration(const std::vector<sim::CalibrationResult>& results) {
  std::string out = "detector,alpha,gamma,threshold,achieved_pfa,pfa_ci,n_cal,edd_estimate,status\n";
  for (const auto& c : results) {
    std::string gamma;
    if (const auto* d = std::get_if<algos::DualCusumParams>(&c.detector)) gamma = format_number(d->gamma);
    out += sim::detector_name(c.detector) + ',' + format_number(c.alpha) + ',' + gamma + ',' +
           format_number(sim::alarm_threshold(c.detector)) + ',' + format_number(c.achieved_pfa) + ',' +
           format_number(c.pfa_ci) + ',' + std::to_string(c.n_cal) + ',' +
           (std::isnan(c.edd_estimate) ? std::string() : format_number(c.edd_estimate)) + ',' +
           (c.within_ci() ? "ok" : "outside-ci") + '\n';
  }
  return out;
}

}  // namespace dualcusum::cli
