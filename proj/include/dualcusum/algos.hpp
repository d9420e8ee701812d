#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dualcusum/detect.hpp"

namespace dualcusum::algos {

using detect::CusumValue;

class contract_violation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {
inline void expect_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw contract_violation(std::string(what) + ": dimension mismatch");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// DualCUSUM

struct DualCusumParams {
  double b = 1.0;
  double gamma = 0.0;  // local threshold
  double beta = 0.0;   // fusion threshold
  double I = 1.0;      // design drift multiplier

  void validate() const {
    if (!(b > 0.0)) throw std::invalid_argument("DualCusumParams: b must be positive");
    if (!(I > 0.0)) throw std::invalid_argument("DualCusumParams: I must be positive");
    if (!(gamma >= 0.0)) throw std::invalid_argument("DualCusumParams: gamma must be nonnegative");
    if (!(beta >= 0.0)) throw std::invalid_argument("DualCusumParams: beta must be nonnegative");
  }

  detect::FusionChannel channel(double fusion_noise_variance) const { return {b, I, fusion_noise_variance}; }
};

struct DualCusumState {
  std::vector<CusumValue> w;
  CusumValue f;

  DualCusumState() = default;
  explicit DualCusumState(std::size_t nodes) : w(nodes) {}
};

/// What one DualCUSUM slot produced besides the state update.
struct DualCusumSlot {
  bool alarm = false;
  int transmitters = 0;
  double fused = 0.0;  // Y = b * transmitters + z
  double score = 0.0;  // F after the update
};

/// In-place DualCUSUM slot: local CUSUMs, gated transmissions, physical-layer
/// sum at the fusion center, fusion CUSUM against the design drift bI.
/// `transmit_mask[l]` is set to 1 for every node with W > gamma.
template <detect::LlrKernel K>
DualCusumSlot advance_dual_cusum(DualCusumState& state, std::span<const double> x, double z, std::span<const K> models,
                                 const DualCusumParams& params, double fusion_noise_variance,
                                 std::span<std::uint8_t> transmit_mask) {
  detail::expect_same_size(state.w.size(), x.size(), "dual_cusum_step");
  detail::expect_same_size(models.size(), x.size(), "dual_cusum_step");
  detail::expect_same_size(transmit_mask.size(), x.size(), "dual_cusum_step");

  DualCusumSlot out;
  for (std::size_t l = 0; l < x.size(); ++l) {
    state.w[l] = detect::cusum_step(state.w[l], llr(models[l], x[l]));
    const bool tx = state.w[l].value() > params.gamma;
    transmit_mask[l] = tx ? 1 : 0;
    out.transmitters += tx ? 1 : 0;
  }
  out.fused = params.b * out.transmitters + z;
  state.f = detect::cusum_step(state.f, detect::llr_fusion(out.fused, params.channel(fusion_noise_variance)));
  out.score = state.f.value();
  out.alarm = out.score > params.beta;
  return out;
}

struct DualCusumStepResult {
  DualCusumState state;
  bool alarm = false;
  std::vector<bool> transmit_mask;
  double fused = 0.0;
};

/// Value-semantics form of advance_dual_cusum.
template <detect::LlrKernel K>
DualCusumStepResult dual_cusum_step(const DualCusumState& state, std::span<const double> x, double z,
                                    std::span<const K> models, const DualCusumParams& params,
                                    double fusion_noise_variance = 1.0) {
  DualCusumStepResult r{state, false, {}, 0.0};
  std::vector<std::uint8_t> mask(x.size());
  detail::expect_same_size(mask.size(), state.w.size(), "dual_cusum_step");
  const auto slot = advance_dual_cusum(r.state, x, z, models, params, fusion_noise_variance, std::span(mask));
  r.alarm = slot.alarm;
  r.fused = slot.fused;
  r.transmit_mask.assign(mask.begin(), mask.end());
  return r;
}

// ---------------------------------------------------------------------------
// GlobalCUSUM

struct GlobalCusumParams {
  double beta = 0.0;

  void validate() const {
    if (!(beta >= 0.0)) throw std::invalid_argument("GlobalCusumParams: beta must be nonnegative");
  }
};

struct GlobalCusumStepResult {
  CusumValue state;
  bool alarm = false;
};

/// Centralized CUSUM on the joint LLR. Node observations are independent, so
/// the joint log-likelihood ratio is the sum of the per-node ones.
template <detect::LlrKernel K>
GlobalCusumStepResult global_cusum_step(CusumValue state, std::span<const double> x, std::span<const K> models,
                                        const GlobalCusumParams& params) {
  detail::expect_same_size(models.size(), x.size(), "global_cusum_step");
  double xi = 0.0;
  for (std::size_t l = 0; l < x.size(); ++l) xi += llr(models[l], x[l]);
  const CusumValue next = detect::cusum_step(state, xi);
  return {next, next.value() > params.beta};
}

// ---------------------------------------------------------------------------
// Slot-based hard-decision fusion

enum class FusionRule { Or, And, Majority };

inline std::string_view to_string(FusionRule r) {
  switch (r) {
    case FusionRule::Or: return "OR";
    case FusionRule::And: return "AND";
    case FusionRule::Majority: return "MAJORITY";
  }
  return "?";
}

/// Strict majority of L nodes.
inline int majority_quorum(int nodes) { return nodes / 2 + 1; }

struct SlotFusionParams {
  double eta = 0.0;  // common per-node decision threshold
  FusionRule rule = FusionRule::Or;
  int quorum = 1;

  static SlotFusionParams make(FusionRule rule, int nodes, double eta = 0.0, std::optional<int> quorum = {}) {
    SlotFusionParams p{eta, rule, 1};
    switch (rule) {
      case FusionRule::Or: p.quorum = 1; break;
      case FusionRule::And: p.quorum = nodes; break;
      case FusionRule::Majority: p.quorum = quorum.value_or(majority_quorum(nodes)); break;
    }
    p.validate(nodes);
    return p;
  }

  void validate(int nodes) const {
    if (quorum < 1 || quorum > nodes) throw std::invalid_argument("SlotFusionParams: quorum must lie in [1, L]");
    if (rule == FusionRule::Or && quorum != 1) throw std::invalid_argument("SlotFusionParams: OR requires quorum 1");
    if (rule == FusionRule::And && quorum != nodes) throw std::invalid_argument("SlotFusionParams: AND requires quorum L");
    if (std::isnan(eta)) throw std::invalid_argument("SlotFusionParams: eta is NaN");
  }
};

/// The quorum-th largest slot statistic. A slot alarms exactly when this
/// exceeds eta, so it is the detector's threshold-free score.
inline double slot_fusion_score(std::span<const double> stats, int quorum) {
  if (quorum < 1 || static_cast<std::size_t>(quorum) > stats.size())
    throw contract_violation("slot_fusion_score: quorum out of range");
  double buf[64];
  std::vector<double> heap;
  std::span<double> work;
  if (stats.size() <= 64) {
    std::copy(stats.begin(), stats.end(), buf);
    work = std::span<double>(buf, stats.size());
  } else {
    heap.assign(stats.begin(), stats.end());
    work = heap;
  }
  auto nth = work.begin() + (quorum - 1);
  std::nth_element(work.begin(), nth, work.end(), std::greater<>());
  return *nth;
}

inline bool slot_fusion_step(std::span<const double> stats, const SlotFusionParams& params) {
  int votes = 0;
  for (double s : stats) votes += s > params.eta ? 1 : 0;
  return votes >= params.quorum;
}

/// P(Bin(L, p) >= quorum): fused slot false-alarm probability from the per-node one.
inline double rule_fused_pfa(double p, int nodes, const SlotFusionParams& params) {
  if (!(p >= 0.0 && p <= 1.0)) throw stats::domain_error("rule_fused_pfa: p must lie in [0,1]");
  params.validate(nodes);
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;
  if (params.quorum == 1) return -std::expm1(nodes * std::log1p(-p));
  if (params.quorum == nodes) return std::pow(p, nodes);
  double tail = 0.0;
  for (int k = params.quorum; k <= nodes; ++k) {
    const double log_binom = std::lgamma(nodes + 1.0) - std::lgamma(k + 1.0) - std::lgamma(nodes - k + 1.0);
    tail += std::exp(log_binom + k * std::log(p) + (nodes - k) * std::log1p(-p));
  }
  return std::min(tail, 1.0);
}

/// Per-node probability p with rule_fused_pfa(p) = p_fused.
inline double rule_invert_pfa(double p_fused, int nodes, const SlotFusionParams& params) {
  if (!(p_fused > 0.0 && p_fused < 1.0)) throw stats::domain_error("rule_invert_pfa: target must lie in (0,1)");
  params.validate(nodes);
  double lo = 0.0;
  double hi = 1.0;
  while (true) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (rule_fused_pfa(mid, nodes, params) < p_fused) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace dualcusum::algos
