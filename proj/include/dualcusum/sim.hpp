#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "dualcusum/algos.hpp"
#include "dualcusum/detect.hpp"
#include "dualcusum/stats.hpp"

namespace dualcusum::sim {

using stats::RandomStream;

// ---------------------------------------------------------------------------
// Scenario

enum class ScenarioKind { GaussianShift, Energy };

/// Generative model for one sensing session.
///
/// `node_params` holds post-change means for the Gaussian-shift kind and
/// primary-to-node channel gains in dB for the energy kind.
struct Scenario {
  ScenarioKind kind = ScenarioKind::GaussianShift;
  std::vector<double> node_params;
  double node_noise_variance = 1.0;
  double fusion_noise_variance = 1.0;
  double rho = 0.01;
  int samples_per_slot = 1;
  std::int64_t horizon_after_change = 100000;

  int nodes() const { return static_cast<int>(node_params.size()); }

  void validate() const {
    if (node_params.empty()) throw std::invalid_argument("scenario: node_params must be nonempty");
    for (double v : node_params)
      if (!std::isfinite(v)) throw std::invalid_argument("scenario: node_params must be finite");
    if (!(node_noise_variance > 0.0)) throw std::invalid_argument("scenario: node_noise_variance must be positive");
    if (!(fusion_noise_variance > 0.0)) throw std::invalid_argument("scenario: fusion_noise_variance must be positive");
    if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("scenario: rho must lie in (0,1)");
    if (kind == ScenarioKind::Energy && samples_per_slot < 1)
      throw std::invalid_argument("scenario: samples_per_slot must be >= 1");
    if (horizon_after_change < 1) throw std::invalid_argument("scenario: horizon_after_change must be >= 1");
  }

  std::vector<detect::GaussianShiftModel> gaussian_models() const {
    std::vector<detect::GaussianShiftModel> m;
    for (double mu : node_params) m.push_back({mu, node_noise_variance});
    return m;
  }

  /// Energies are normalized by the per-sample noise variance, so both
  /// hypotheses have unit-variance chi-square laws.
  std::vector<detect::EnergyModel> energy_models() const {
    std::vector<detect::EnergyModel> m;
    for (double g : node_params) m.push_back(detect::EnergyModel::from_gain_db(samples_per_slot, g, node_noise_variance));
    return m;
  }
};

namespace detail {

/// Per-node quantities precomputed from a Scenario for slot generation.
struct SlotSource {
  ScenarioKind kind;
  int samples;
  double noise_sd;
  std::vector<double> post_offset;  // mean (gaussian) or amplitude h_l (energy)

  explicit SlotSource(const Scenario& s)
      : kind(s.kind), samples(s.samples_per_slot), noise_sd(std::sqrt(s.node_noise_variance)) {
    for (double v : s.node_params)
      post_offset.push_back(kind == ScenarioKind::GaussianShift ? v : std::sqrt(stats::db_to_linear(v)));
  }

  double draw(RandomStream& stream, std::size_t l, bool post_change) const {
    const double offset = post_change ? post_offset[l] : 0.0;
    if (kind == ScenarioKind::GaussianShift) return offset + noise_sd * stream.standard_normal();
    double e = 0.0;
    for (int k = 0; k < samples; ++k) {
      const double v = offset + noise_sd * stream.standard_normal();
      e += v * v;
    }
    return e / (noise_sd * noise_sd);
  }
};

}  // namespace detail

/// One slot statistic at node l: a raw sample (Gaussian-shift kind) or the
/// normalized energy of N samples (energy kind).
inline double gen_slot_statistic(RandomStream& stream, const Scenario& scenario, std::size_t l, bool post_change) {
  if (l >= scenario.node_params.size()) throw algos::contract_violation("gen_slot_statistic: node index out of range");
  return detail::SlotSource(scenario).draw(stream, l, post_change);
}

// ---------------------------------------------------------------------------
// Detectors and trials

using Detector = std::variant<algos::DualCusumParams, algos::GlobalCusumParams, algos::SlotFusionParams>;

inline std::string detector_name(const Detector& d) {
  if (std::holds_alternative<algos::DualCusumParams>(d)) return "DualCUSUM";
  if (std::holds_alternative<algos::GlobalCusumParams>(d)) return "GlobalCUSUM";
  return std::string(algos::to_string(std::get<algos::SlotFusionParams>(d).rule));
}

inline bool is_slot_rule(const Detector& d) { return std::holds_alternative<algos::SlotFusionParams>(d); }

/// The detector's alarm threshold (beta or eta).
inline double alarm_threshold(const Detector& d) {
  return std::visit(
      [](const auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, algos::SlotFusionParams>) {
          return p.eta;
        } else {
          return p.beta;
        }
      },
      d);
}

inline Detector with_threshold(Detector d, double threshold) {
  std::visit(
      [threshold](auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, algos::SlotFusionParams>) {
          p.eta = threshold;
        } else {
          p.beta = threshold;
        }
      },
      d);
  return d;
}

struct TrialResult {
  std::int64_t change_time = 1;
  std::optional<std::int64_t> alarm_time;
  std::int64_t delay = 0;  // (tau - T)^+
  bool false_alarm = false;
  std::vector<std::int64_t> transmissions;
  bool censored = false;
  bool memoryless = false;       // slot rule: i.i.d. per-slot decisions
  bool alarm_at_change = false;  // alarm raised in slot T itself
};

namespace detail {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

struct TrialOptions {
  std::optional<std::int64_t> change_time;
  // Run the detector without a threshold through slot T-1 and report the
  // largest score seen; the trial is then cut short.
  bool pre_change_peak_only = false;
};

struct TrialRun {
  TrialResult result;
  double pre_change_peak = -std::numeric_limits<double>::infinity();
};

template <detect::LlrKernel K>
TrialRun run_trial(RandomStream& stream, const Scenario& scenario, const SlotSource& source, std::span<const K> models,
                   const Detector& detector, const TrialOptions& opts) {
  const std::size_t L = models.size();
  TrialRun run;
  TrialResult& r = run.result;
  r.change_time = opts.change_time ? *opts.change_time : stats::sample_geometric(stream, scenario.rho);
  r.transmissions.assign(L, 0);
  r.memoryless = is_slot_rule(detector);
  const std::int64_t T = r.change_time;
  const std::int64_t last_slot = opts.pre_change_peak_only ? T - 1 : T + scenario.horizon_after_change - 1;
  const double threshold = opts.pre_change_peak_only ? kUnbounded : alarm_threshold(detector);

  std::vector<double> x(L);
  std::vector<std::uint8_t> mask(L);
  algos::DualCusumState dual(L);
  detect::CusumValue global;
  const auto* dual_params = std::get_if<algos::DualCusumParams>(&detector);
  const auto* global_params = std::get_if<algos::GlobalCusumParams>(&detector);
  const auto* slot_params = std::get_if<algos::SlotFusionParams>(&detector);
  algos::DualCusumParams dual_run = dual_params ? *dual_params : algos::DualCusumParams{};
  dual_run.beta = kUnbounded;

  for (std::int64_t k = 1; k <= last_slot; ++k) {
    const bool post = k >= T;
    for (std::size_t l = 0; l < L; ++l) x[l] = source.draw(stream, l, post);

    double score = 0.0;
    if (dual_params) {
      const double z = std::sqrt(scenario.fusion_noise_variance) * stream.standard_normal();
      const auto slot = algos::advance_dual_cusum(dual, std::span<const double>(x), z, models, dual_run,
                                                  scenario.fusion_noise_variance, std::span(mask));
      for (std::size_t l = 0; l < L; ++l) r.transmissions[l] += mask[l];
      score = slot.score;
    } else if (global_params) {
      global = algos::global_cusum_step(global, std::span<const double>(x), models, algos::GlobalCusumParams{kUnbounded}).state;
      for (auto& t : r.transmissions) ++t;
      score = global.value();
    } else {
      score = algos::slot_fusion_score(x, slot_params->quorum);
      for (auto& t : r.transmissions) ++t;
    }

    if (!post) run.pre_change_peak = std::max(run.pre_change_peak, score);
    if (score > threshold) {
      r.alarm_time = k;
      break;
    }
  }

  if (!opts.pre_change_peak_only) {
    if (r.alarm_time) {
      r.false_alarm = *r.alarm_time < T;
      r.delay = std::max<std::int64_t>(0, *r.alarm_time - T);
      r.alarm_at_change = *r.alarm_time == T;
    } else {
      r.censored = true;
    }
  }
  return run;
}

inline TrialRun dispatch_trial(RandomStream& stream, const Scenario& scenario, const Detector& detector,
                               const TrialOptions& opts) {
  const SlotSource source(scenario);
  if (scenario.kind == ScenarioKind::GaussianShift) {
    const auto models = scenario.gaussian_models();
    return run_trial(stream, scenario, source, std::span<const detect::GaussianShiftModel>(models), detector, opts);
  }
  const auto models = scenario.energy_models();
  return run_trial(stream, scenario, source, std::span<const detect::EnergyModel>(models), detector, opts);
}

inline void validate_detector(const Scenario& scenario, const Detector& detector) {
  std::visit(
      [&](const auto& p) {
        if constexpr (std::is_same_v<std::decay_t<decltype(p)>, algos::SlotFusionParams>) {
          p.validate(scenario.nodes());
        } else if constexpr (std::is_same_v<std::decay_t<decltype(p)>, algos::DualCusumParams>) {
          // gamma = +inf and beta = +inf are legal "never" settings
          if (!(p.b > 0.0) || !(p.I > 0.0) || !(p.gamma >= 0.0) || !(p.beta >= 0.0))
            throw std::invalid_argument("DualCusumParams out of range");
        } else {
          p.validate();
        }
      },
      detector);
}

}  // namespace detail

/// Simulates one sensing session: T ~ Geometric(rho) unless overridden,
/// pre-change slots for k < T, post-change for k >= T, stopping at the first
/// alarm or after `horizon_after_change` post-change slots (censored).
///
/// Stream draw order per trial is: T, then per slot the L node statistics in
/// node order, then the fusion noise (DualCUSUM only). Any two thresholds on
/// the same stream therefore see the same noise path.
inline TrialResult simulate_trial(RandomStream& stream, const Scenario& scenario, const Detector& detector,
                                  std::optional<std::int64_t> change_time = {}) {
  scenario.validate();
  detail::validate_detector(scenario, detector);
  if (change_time && *change_time < 1) throw std::invalid_argument("simulate_trial: change time must be >= 1");
  return detail::dispatch_trial(stream, scenario, detector, {change_time, false}).result;
}

/// Largest threshold-free detector score over the pre-change slots of a
/// trial; the trial raises a false alarm at threshold theta iff the peak
/// exceeds theta. -inf when T = 1.
inline double pre_change_peak(RandomStream& stream, const Scenario& scenario, const Detector& detector) {
  scenario.validate();
  detail::validate_detector(scenario, detector);
  return detail::dispatch_trial(stream, scenario, detector, {std::nullopt, true}).pre_change_peak;
}

// ---------------------------------------------------------------------------
// Parallel execution

/// Evaluates fn(i) for i in [first, first + count) over `workers` threads and
/// returns the results ordered by i.
template <typename F>
auto parallel_trials(std::uint64_t first, std::size_t count, unsigned workers, F&& fn)
    -> std::vector<std::invoke_result_t<F&, std::uint64_t>> {
  using R = std::invoke_result_t<F&, std::uint64_t>;
  std::vector<std::optional<R>> slots(count);
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) slots[i].emplace(fn(first + i));
  } else {
    constexpr std::size_t chunk = 64;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto body = [&] {
      try {
        for (;;) {
          const std::size_t begin = next.fetch_add(chunk);
          if (begin >= count) break;
          const std::size_t end = std::min(count, begin + chunk);
          for (std::size_t i = begin; i < end; ++i) slots[i].emplace(fn(first + i));
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = count;
      }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  std::vector<R> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Stream layout shared by calibration and measurement. Calibration uses
/// indices [0, n_cal); measurement starts at a disjoint offset.
struct RunPlan {
  std::uint64_t seed = 1;
  unsigned workers = 1;
  static constexpr std::uint64_t kMeasurementOffset = std::uint64_t{1} << 40;
};

inline std::vector<TrialResult> run_trials(const Scenario& scenario, const Detector& detector, std::uint64_t first,
                                           std::size_t count, const RunPlan& plan) {
  scenario.validate();
  detail::validate_detector(scenario, detector);
  return parallel_trials(first, count, plan.workers, [&](std::uint64_t i) {
    RandomStream stream(plan.seed, i);
    return detail::dispatch_trial(stream, scenario, detector, {}).result;
  });
}

inline std::vector<double> pre_change_peaks(const Scenario& scenario, const Detector& detector, std::uint64_t first,
                                            std::size_t count, const RunPlan& plan) {
  return parallel_trials(first, count, plan.workers, [&](std::uint64_t i) {
    RandomStream stream(plan.seed, i);
    return pre_change_peak(stream, scenario, detector);
  });
}

// ---------------------------------------------------------------------------
// Metrics

/// Half-width of the normal-approximation 95% binomial interval.
inline double binomial_ci95(double p, std::size_t n) {
  return 1.959963984540054 * std::sqrt(std::max(0.0, p * (1.0 - p)) / static_cast<double>(n));
}

struct Metrics {
  std::size_t n_trials = 0;
  double pfa_hat = 0.0;
  double pfa_ci = 0.0;
  double edd_unconditional = 0.0;  // mean (tau - T)^+ over non-censored trials
  double edd_conditional = 0.0;    // mean tau - T over trials with tau >= T
  double edd_ci = 0.0;             // 95% half-width for edd_unconditional
  double edd_conditional_sd = 0.0;
  double etr_hat = 0.0;
  std::optional<double> pd_hat;  // slot rules only
  std::size_t detections = 0;    // non-censored trials with tau >= T
  double censor_rate = 0.0;
};

inline Metrics estimate_metrics(std::span<const TrialResult> results) {
  if (results.empty()) throw algos::contract_violation("estimate_metrics: empty results");
  Metrics m;
  m.n_trials = results.size();
  std::size_t false_alarms = 0, censored = 0, detections = 0, at_change = 0;
  double sum_delay = 0.0, sum_delay_sq = 0.0, sum_cond = 0.0, sum_cond_sq = 0.0, sum_etr = 0.0;
  const bool memoryless = results.front().memoryless;
  for (const auto& r : results) {
    if (r.censored) {
      ++censored;
      continue;
    }
    const double d = static_cast<double>(r.delay);
    sum_delay += d;
    sum_delay_sq += d * d;
    if (r.false_alarm) {
      ++false_alarms;
    } else {
      ++detections;
      sum_cond += d;
      sum_cond_sq += d * d;
      at_change += r.alarm_at_change ? 1 : 0;
    }
    double tx = 0.0;
    for (auto t : r.transmissions) tx += static_cast<double>(t);
    sum_etr += r.transmissions.empty() ? 0.0 : tx / static_cast<double>(r.transmissions.size());
  }
  const double n = static_cast<double>(m.n_trials);
  const double kept = static_cast<double>(m.n_trials - censored);
  m.pfa_hat = static_cast<double>(false_alarms) / n;
  m.pfa_ci = binomial_ci95(m.pfa_hat, m.n_trials);
  m.censor_rate = static_cast<double>(censored) / n;
  m.detections = detections;
  if (kept > 0) {
    m.edd_unconditional = sum_delay / kept;
    const double var = std::max(0.0, sum_delay_sq / kept - m.edd_unconditional * m.edd_unconditional);
    m.edd_ci = 1.959963984540054 * std::sqrt(var / kept);
    m.etr_hat = sum_etr / kept;
  }
  if (detections > 0) {
    const double dn = static_cast<double>(detections);
    m.edd_conditional = sum_cond / dn;
    m.edd_conditional_sd = std::sqrt(std::max(0.0, sum_cond_sq / dn - m.edd_conditional * m.edd_conditional));
    if (memoryless) m.pd_hat = static_cast<double>(at_change) / dn;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Run-level / slot-level false-alarm conversion under geometric T

inline double eq2_run_to_slot(double run_pfa, double rho) {
  if (!(run_pfa > 0.0 && run_pfa < 1.0)) throw stats::domain_error("eq2_run_to_slot: P_FA must lie in (0,1)");
  if (!(rho > 0.0 && rho < 1.0)) throw stats::domain_error("eq2_run_to_slot: rho must lie in (0,1)");
  return run_pfa * rho / ((1.0 - run_pfa) * (1.0 - rho));
}

inline double eq2_slot_to_run(double slot_pfa, double rho) {
  if (!(slot_pfa > 0.0)) throw stats::domain_error("eq2_slot_to_run: p_fa must be positive");
  if (!(rho > 0.0 && rho < 1.0)) throw stats::domain_error("eq2_slot_to_run: rho must lie in (0,1)");
  const double a = slot_pfa * (1.0 - rho);
  return a / (rho + a);
}

// ---------------------------------------------------------------------------
// Calibration

class calibration_failure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Outcome of tuning one gamma (DualCUSUM) or the single threshold of the
/// other detectors.
struct ThresholdCandidate {
  double gamma = 0.0;
  double threshold = 0.0;
  double achieved_pfa = 0.0;
  bool attained = false;
  double edd = std::numeric_limits<double>::quiet_NaN();
};

struct CalibrationResult {
  Detector detector;
  double alpha = 0.0;
  double achieved_pfa = 0.0;
  double pfa_ci = 0.0;  // 95% binomial half-width at (alpha, n_cal)
  std::size_t n_cal = 0;
  double edd_estimate = std::numeric_limits<double>::quiet_NaN();
  std::vector<ThresholdCandidate> candidates;

  bool within_ci() const { return std::abs(achieved_pfa - alpha) <= pfa_ci; }
};

struct CalibrationOptions {
  std::size_t n_cal = 20000;
  int refine_rounds = 3;  // DualCUSUM gamma refinement
  RunPlan plan;
};

namespace detail {

inline double empirical_pfa(std::span<const double> peaks, double threshold) {
  std::size_t n = 0;
  for (double p : peaks) n += p > threshold ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(peaks.size());
}

/// Bisection on a threshold whose false-alarm fraction over fixed noise paths
/// is nonincreasing. Requires pfa(lo) >= alpha >= pfa(hi); returns the upper
/// end of the final bracket, so the result never over-alarms.
inline double bisect_threshold(std::span<const double> peaks, double alpha, double lo, double hi) {
  double pfa_lo = empirical_pfa(peaks, lo);
  double pfa_hi = empirical_pfa(peaks, hi);
  for (int it = 0; it < 200; ++it) {
    if (pfa_lo < pfa_hi) throw std::logic_error("false-alarm rate increased with the threshold on fixed noise paths");
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (hi - lo <= 1e-12 * std::max(1.0, std::abs(hi))) break;
    const double pfa_mid = empirical_pfa(peaks, mid);
    if (pfa_mid > alpha) {
      lo = mid;
      pfa_lo = pfa_mid;
    } else {
      hi = mid;
      pfa_hi = pfa_mid;
    }
  }
  return hi;
}

/// Tunes a CUSUM fusion threshold beta >= 0 on pre-change peaks.
inline ThresholdCandidate calibrate_beta(std::span<const double> peaks, double alpha, double ci) {
  ThresholdCandidate c;
  const double at_zero = empirical_pfa(peaks, 0.0);
  if (at_zero <= alpha) {
    c.threshold = 0.0;
    c.achieved_pfa = at_zero;
  } else {
    double hi = 1.0;
    while (empirical_pfa(peaks, hi) > alpha) {
      hi *= 2.0;
      if (!std::isfinite(hi)) throw calibration_failure("calibration: no finite beta reaches alpha");
    }
    c.threshold = bisect_threshold(peaks, alpha, 0.0, hi);
    c.achieved_pfa = empirical_pfa(peaks, c.threshold);
  }
  c.attained = std::abs(c.achieved_pfa - alpha) <= ci;
  return c;
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw stats::domain_error("calibration: alpha must lie in (0,1)");
}

}  // namespace detail

/// Per-node threshold for a slot rule: analytic chain through the run/slot
/// conversion, the rule's binomial tail and the per-node tail quantile.
inline double analytic_slot_threshold(const Scenario& scenario, const algos::SlotFusionParams& rule, double alpha) {
  const double p_fused = eq2_run_to_slot(alpha, scenario.rho);
  const double p_node = algos::rule_invert_pfa(p_fused, scenario.nodes(), rule);
  if (scenario.kind == ScenarioKind::GaussianShift)
    return std::sqrt(scenario.node_noise_variance) * stats::normal_tail_threshold(p_node);
  return stats::chi2_tail_threshold(scenario.samples_per_slot, p_node);
}

/// Analytic threshold, checked on n_cal fixed noise paths and bisected there
/// when the empirical false-alarm rate falls outside the 95% interval.
inline CalibrationResult calibrate_slot_fusion(const Scenario& scenario, algos::SlotFusionParams rule, double alpha,
                                               const CalibrationOptions& opts = {}) {
  detail::check_alpha(alpha);
  scenario.validate();
  rule.validate(scenario.nodes());
  CalibrationResult out;
  out.alpha = alpha;
  out.n_cal = opts.n_cal;
  out.pfa_ci = binomial_ci95(alpha, opts.n_cal);

  rule.eta = analytic_slot_threshold(scenario, rule, alpha);
  const auto peaks = pre_change_peaks(scenario, rule, 0, opts.n_cal, opts.plan);
  double achieved = detail::empirical_pfa(peaks, rule.eta);
  if (std::abs(achieved - alpha) > out.pfa_ci) {
    double lo = rule.eta, hi = rule.eta;
    double width = 0.5;
    while (detail::empirical_pfa(peaks, lo) < alpha) lo -= (width *= 2.0);
    width = 0.5;
    while (detail::empirical_pfa(peaks, hi) > alpha) hi += (width *= 2.0);
    rule.eta = detail::bisect_threshold(peaks, alpha, lo, hi);
    achieved = detail::empirical_pfa(peaks, rule.eta);
  }
  out.achieved_pfa = achieved;
  out.detector = rule;
  out.candidates.push_back({0.0, rule.eta, achieved, out.within_ci(), std::numeric_limits<double>::quiet_NaN()});
  if (!out.within_ci()) throw calibration_failure("calibration: slot rule cannot reach alpha");
  return out;
}

inline CalibrationResult calibrate_global_cusum(const Scenario& scenario, double alpha,
                                                const CalibrationOptions& opts = {}) {
  detail::check_alpha(alpha);
  CalibrationResult out;
  out.alpha = alpha;
  out.n_cal = opts.n_cal;
  out.pfa_ci = binomial_ci95(alpha, opts.n_cal);
  const auto peaks = pre_change_peaks(scenario, algos::GlobalCusumParams{0.0}, 0, opts.n_cal, opts.plan);
  const auto c = detail::calibrate_beta(peaks, alpha, out.pfa_ci);
  out.candidates.push_back(c);
  if (!c.attained) throw calibration_failure("calibration: GlobalCUSUM cannot reach alpha");
  out.detector = algos::GlobalCusumParams{c.threshold};
  out.achieved_pfa = c.achieved_pfa;
  return out;
}

/// For each local threshold gamma, tunes beta on the calibration paths and
/// scores the pair by its unconditional EDD on those same paths. After the
/// grid, the best gamma is refined locally: its two neighbours at half the
/// grid spacing are tried, then at a quarter, and so on for
/// `refine_rounds` rounds. Ties go to the earlier candidate.
inline CalibrationResult calibrate_dual_cusum(const Scenario& scenario, double alpha, double b, double I,
                                              std::span<const double> gamma_grid, const CalibrationOptions& opts = {}) {
  detail::check_alpha(alpha);
  if (gamma_grid.empty()) throw std::invalid_argument("calibrate_dual_cusum: gamma grid is empty");
  CalibrationResult out;
  out.alpha = alpha;
  out.n_cal = opts.n_cal;
  out.pfa_ci = binomial_ci95(alpha, opts.n_cal);

  std::optional<std::size_t> best;
  auto evaluate = [&](double gamma) {
    for (const auto& c : out.candidates)
      if (c.gamma == gamma) return;
    const algos::DualCusumParams probe{b, gamma, 0.0, I};
    const auto peaks = pre_change_peaks(scenario, probe, 0, opts.n_cal, opts.plan);
    auto c = detail::calibrate_beta(peaks, alpha, out.pfa_ci);
    c.gamma = gamma;
    if (c.attained) {
      const auto trials = run_trials(scenario, algos::DualCusumParams{b, gamma, c.threshold, I}, 0, opts.n_cal, opts.plan);
      c.edd = estimate_metrics(trials).edd_unconditional;
      if (!best || c.edd < out.candidates[*best].edd) best = out.candidates.size();
    }
    out.candidates.push_back(c);
  };

  for (double gamma : gamma_grid) {
    if (!(gamma >= 0.0)) throw std::invalid_argument("calibrate_dual_cusum: gamma must be nonnegative");
    evaluate(gamma);
  }

  std::vector<double> sorted(gamma_grid.begin(), gamma_grid.end());
  std::sort(sorted.begin(), sorted.end());
  double spacing = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i] > sorted[i - 1]) spacing = std::min(spacing, sorted[i] - sorted[i - 1]);
  if (!std::isfinite(spacing)) spacing = 1.0;  // single-point grid
  for (int round = 0; best && round < opts.refine_rounds; ++round) {
    spacing *= 0.5;
    const double centre = out.candidates[*best].gamma;
    if (centre - spacing >= 0.0) evaluate(centre - spacing);
    evaluate(centre + spacing);
  }

  if (!best) throw calibration_failure("calibration: no gamma in the grid lets DualCUSUM reach alpha");
  const auto& c = out.candidates[*best];
  out.detector = algos::DualCusumParams{b, c.gamma, c.threshold, I};
  out.achieved_pfa = c.achieved_pfa;
  out.edd_estimate = c.edd;
  return out;
}

/// Fresh-stream measurement of a tuned detector.
inline Metrics measure(const Scenario& scenario, const Detector& detector, std::size_t trials, const RunPlan& plan) {
  const auto results = run_trials(scenario, detector, RunPlan::kMeasurementOffset, trials, plan);
  return estimate_metrics(results);
}

}  // namespace dualcusum::sim
