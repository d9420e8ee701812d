#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualcusum/sim.hpp"

namespace dualcusum::cli {

/// Invalid experiment configuration. `key` names the offending entry.
class config_error : public std::runtime_error {
 public:
  config_error(std::string key, const std::string& what)
      : std::runtime_error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

enum class DetectorKind { DualCusum, GlobalCusum, Or, And, Majority };

inline std::string_view to_string(DetectorKind k) {
  switch (k) {
    case DetectorKind::DualCusum: return "dual_cusum";
    case DetectorKind::GlobalCusum: return "global_cusum";
    case DetectorKind::Or: return "or";
    case DetectorKind::And: return "and";
    case DetectorKind::Majority: return "majority";
  }
  return "?";
}

inline DetectorKind parse_detector_kind(std::string_view name) {
  for (auto k : {DetectorKind::DualCusum, DetectorKind::GlobalCusum, DetectorKind::Or, DetectorKind::And,
                 DetectorKind::Majority})
    if (to_string(k) == name) return k;
  throw config_error("detector", "unknown detector '" + std::string(name) + "'");
}

inline std::optional<algos::FusionRule> fusion_rule(DetectorKind k) {
  switch (k) {
    case DetectorKind::Or: return algos::FusionRule::Or;
    case DetectorKind::And: return algos::FusionRule::And;
    case DetectorKind::Majority: return algos::FusionRule::Majority;
    default: return std::nullopt;
  }
}

inline std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 0; i <= 20; i += 2) g.push_back(i);
  return g;
}

struct ExperimentConfig {
  std::string preset;
  sim::Scenario scenario;
  DetectorKind detector = DetectorKind::DualCusum;
  double b = 3.1623;
  double I = 5.0;
  std::vector<double> gamma_grid = default_gamma_grid();
  int refine_rounds = 3;
  std::optional<int> quorum;
  // Fixed thresholds; when the detector's threshold is given, `run` skips calibration.
  std::optional<double> gamma;
  std::optional<double> beta;
  std::optional<double> eta;
  std::vector<double> alphas{0.1, 0.027, 0.01};
  std::size_t trials = 50000;
  std::size_t cal_trials = 20000;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  std::string out;

  void validate() const {
    const auto& s = scenario;
    if (s.node_params.empty()) throw config_error("node_params", "at least one node is required");
    for (double v : s.node_params)
      if (!std::isfinite(v)) throw config_error("node_params", "entries must be finite");
    if (!(s.node_noise_variance > 0.0)) throw config_error("node_noise_variance", "must be positive");
    if (!(s.fusion_noise_variance > 0.0)) throw config_error("fusion_noise_variance", "must be positive");
    if (!(s.rho > 0.0 && s.rho < 1.0)) throw config_error("rho", "must lie in (0,1)");
    if (s.samples_per_slot < 1) throw config_error("samples_per_slot", "must be >= 1");
    if (s.horizon_after_change < 1) throw config_error("horizon", "must be >= 1");
    try {
      scenario.validate();
    } catch (const std::invalid_argument& e) {
      throw config_error("scenario", e.what());
    }
    for (double a : alphas)
      if (!(a > 0.0 && a < 1.0)) throw config_error("alphas", "every alpha must lie in (0,1)");
    if (alphas.empty()) throw config_error("alphas", "at least one alpha is required");
    if (trials < 1) throw config_error("trials", "must be >= 1");
    if (cal_trials < 1) throw config_error("cal_trials", "must be >= 1");
    if (workers < 1) throw config_error("workers", "must be >= 1");
    if (!(b > 0.0)) throw config_error("b", "must be positive");
    if (!(I > 0.0)) throw config_error("I", "must be positive");
    if (gamma_grid.empty()) throw config_error("gamma_grid", "must be nonempty");
    for (double g : gamma_grid)
      if (!(g >= 0.0)) throw config_error("gamma_grid", "entries must be nonnegative");
    if (refine_rounds < 0) throw config_error("refine_rounds", "must be >= 0");
    if (gamma && !(*gamma >= 0.0)) throw config_error("gamma", "must be nonnegative");
    if (beta && !(*beta >= 0.0)) throw config_error("beta", "must be nonnegative");
    if (quorum && (*quorum < 1 || *quorum > scenario.nodes())) throw config_error("quorum", "must lie in [1, L]");
    if (quorum && detector != DetectorKind::Majority) throw config_error("quorum", "only applies to the majority rule");
  }

  /// Detector with whatever thresholds the config fixes; missing ones are 0.
  sim::Detector detector_params() const {
    if (auto rule = fusion_rule(detector))
      return algos::SlotFusionParams::make(*rule, scenario.nodes(), eta.value_or(0.0), quorum);
    if (detector == DetectorKind::GlobalCusum) return algos::GlobalCusumParams{beta.value_or(0.0)};
    return algos::DualCusumParams{b, gamma.value_or(0.0), beta.value_or(0.0), I};
  }

  bool has_fixed_thresholds() const {
    if (fusion_rule(detector)) return eta.has_value();
    if (detector == DetectorKind::GlobalCusum) return beta.has_value();
    return beta.has_value() && gamma.has_value();
  }
};

/// Maps a preset name to its document text; nullopt when unknown.
using PresetResolver = std::function<std::optional<std::string>(const std::string&)>;

inline PresetResolver directory_presets(std::filesystem::path dir) {
  return [dir = std::move(dir)](const std::string& name) -> std::optional<std::string> {
    for (char c : name)
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return std::nullopt;
    std::ifstream in(dir / (name + ".cfg"));
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

using Entries = std::map<std::string, std::pair<std::string, int>>;  // key -> (value, line)

inline Entries tokenize(std::string_view text) {
  Entries entries;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw config_error("", "line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw config_error("", "line " + std::to_string(line_no) + ": empty key");
    if (value.empty()) throw config_error(key, "empty value");
    if (!entries.emplace(key, std::make_pair(value, line_no)).second) throw config_error(key, "duplicate key");
  }
  return entries;
}

inline double parse_real(const std::string& key, std::string_view v) {
  v = trim(v);
  if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end || std::isnan(out)) throw config_error(key, "not a number: '" + std::string(v) + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end) throw config_error(key, "not a nonnegative integer: '" + std::string(v) + "'");
  return out;
}

inline std::vector<double> parse_list(const std::string& key, std::string_view v) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const auto comma = v.find(',', pos);
    const auto item = v.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    out.push_back(parse_real(key, item));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline void apply(ExperimentConfig& cfg, const std::string& key, const std::string& v) {
  auto& s = cfg.scenario;
  if (key == "kind") {
    if (v == "gaussian") s.kind = sim::ScenarioKind::GaussianShift;
    else if (v == "energy") s.kind = sim::ScenarioKind::Energy;
    else throw config_error(key, "expected 'gaussian' or 'energy'");
  } else if (key == "node_params") {
    s.node_params = parse_list(key, v);
  } else if (key == "node_noise_variance") {
    s.node_noise_variance = parse_real(key, v);
  } else if (key == "fusion_noise_variance") {
    s.fusion_noise_variance = parse_real(key, v);
  } else if (key == "rho") {
    s.rho = parse_real(key, v);
  } else if (key == "samples_per_slot") {
    s.samples_per_slot = static_cast<int>(parse_uint(key, v));
  } else if (key == "horizon") {
    s.horizon_after_change = static_cast<std::int64_t>(parse_uint(key, v));
  } else if (key == "detector") {
    cfg.detector = parse_detector_kind(v);
  } else if (key == "b") {
    cfg.b = parse_real(key, v);
  } else if (key == "I") {
    cfg.I = parse_real(key, v);
  } else if (key == "gamma_grid") {
    cfg.gamma_grid = parse_list(key, v);
  } else if (key == "refine_rounds") {
    cfg.refine_rounds = static_cast<int>(parse_uint(key, v));
  } else if (key == "gamma") {
    cfg.gamma = parse_real(key, v);
  } else if (key == "beta") {
    cfg.beta = parse_real(key, v);
  } else if (key == "eta") {
    cfg.eta = parse_real(key, v);
  } else if (key == "quorum") {
    cfg.quorum = static_cast<int>(parse_uint(key, v));
  } else if (key == "alphas") {
    cfg.alphas = parse_list(key, v);
  } else if (key == "trials") {
    cfg.trials = parse_uint(key, v);
  } else if (key == "cal_trials") {
    cfg.cal_trials = parse_uint(key, v);
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, v);
  } else if (key == "workers") {
    cfg.workers = static_cast<unsigned>(parse_uint(key, v));
  } else if (key == "out") {
    cfg.out = v;
  } else {
    throw config_error(key, "unknown key");
  }
}

}  // namespace detail

/// Parses a `key = value` document (one entry per line, `#` comments, list
/// values comma-separated). A `preset = name` entry loads that preset first;
/// the document's own entries then override it.
inline ExperimentConfig parse_config(std::string_view text, const PresetResolver& presets = {}) {
  auto entries = detail::tokenize(text);
  ExperimentConfig cfg;
  if (const auto it = entries.find("preset"); it != entries.end()) {
    const std::string name = it->second.first;
    const auto body = presets ? presets(name) : std::nullopt;
    if (!body) throw config_error("preset", "unknown preset '" + name + "'");
    const auto base = detail::tokenize(*body);
    if (base.contains("preset")) throw config_error("preset", "presets cannot name another preset");
    for (const auto& [key, value] : base) detail::apply(cfg, key, value.first);
    cfg.preset = name;
    entries.erase(it);
  }
  for (const auto& [key, value] : entries) detail::apply(cfg, key, value.first);
  cfg.validate();
  return cfg;
}

}  // namespace dualcusum::cli
