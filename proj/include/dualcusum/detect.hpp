#pragma once

#include <algorithm>
#include <concepts>
#include <stdexcept>

#include "dualcusum/stats.hpp"

namespace dualcusum::detect {

/// CUSUM statistic. Holds W at a node or F at the fusion center; never negative.
class CusumValue {
 public:
  constexpr CusumValue() = default;
  explicit CusumValue(double v) : value_(v) {
    if (!(v >= 0.0)) throw std::invalid_argument("CusumValue must be nonnegative");
  }

  constexpr double value() const { return value_; }

  friend constexpr bool operator==(CusumValue, CusumValue) = default;

 private:
  double value_ = 0.0;
};

/// max(0, w + xi)
inline CusumValue cusum_step(CusumValue w, double xi) {
  const double next = w.value() + xi;
  return next > 0.0 ? CusumValue(next) : CusumValue();
}

/// Mean shift 0 -> post_mean in Gaussian noise, one observation per slot.
struct GaussianShiftModel {
  double post_mean = 0.0;
  double noise_variance = 1.0;

  void validate() const {
    if (!(noise_variance > 0.0)) throw std::invalid_argument("GaussianShiftModel: noise_variance must be positive");
  }
};

/// Slot energy of `samples_per_slot` unit-variance samples: central chi-square
/// before the change, noncentral with `noncentrality` = N |h|^2 after.
struct EnergyModel {
  int samples_per_slot = 1;
  double noncentrality = 0.0;

  void validate() const {
    if (samples_per_slot < 1) throw std::invalid_argument("EnergyModel: samples_per_slot must be >= 1");
    if (!(noncentrality >= 0.0)) throw std::invalid_argument("EnergyModel: noncentrality must be nonnegative");
  }

  static EnergyModel from_gain_db(int samples_per_slot, double gain_db, double noise_variance = 1.0) {
    return {samples_per_slot, samples_per_slot * stats::db_to_linear(gain_db) / noise_variance};
  }
};

/// Node-to-fusion multiple-access channel as seen by the fusion CUSUM.
/// The fusion likelihood assumes `I` simultaneous transmitters of amplitude `b`.
struct FusionChannel {
  double b = 1.0;
  double I = 1.0;
  double noise_variance = 1.0;

  void validate() const {
    if (!(b > 0.0)) throw std::invalid_argument("FusionChannel: b must be positive");
    if (!(I > 0.0)) throw std::invalid_argument("FusionChannel: I must be positive");
    if (!(noise_variance > 0.0)) throw std::invalid_argument("FusionChannel: noise_variance must be positive");
  }

  double design_mean() const { return b * I; }
};

inline double llr_gaussian_shift(double x, const GaussianShiftModel& model) {
  const double mu = model.post_mean;
  return (mu * x - 0.5 * mu * mu) / model.noise_variance;
}

inline double llr_energy(double e, const EnergyModel& model) {
  if (!(e > 0.0)) throw stats::domain_error("llr_energy: slot energy must be positive");
  if (model.noncentrality == 0.0) return 0.0;
  return stats::noncentral_chi2_logpdf(e, model.samples_per_slot, model.noncentrality) -
         stats::central_chi2_logpdf(e, model.samples_per_slot);
}

/// Gaussian LLR between N(bI, sigma_z^2) and N(0, sigma_z^2), whatever the
/// number of nodes actually transmitting.
inline double llr_fusion(double y, const FusionChannel& ch) {
  const double m = ch.design_mean();
  return (m * y - 0.5 * m * m) / ch.noise_variance;
}

// Uniform spelling used by the detectors.
inline double llr(const GaussianShiftModel& m, double x) { return llr_gaussian_shift(x, m); }
inline double llr(const EnergyModel& m, double x) { return llr_energy(x, m); }

template <typename K>
concept LlrKernel = requires(const K& k, double x) {
  { llr(k, x) } -> std::convertible_to<double>;
  k.validate();
};

}  // namespace dualcusum::detect
