#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace dualcusum::stats {

class domain_error : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw domain_error(what);
}

// Bisection for a decreasing function f on [lo, hi] with f(lo) >= target >= f(hi).
template <typename F>
double bisect_decreasing(F&& f, double target, double lo, double hi, double abs_tol, double rel_tol) {
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (hi - lo <= abs_tol + rel_tol * std::max(std::abs(lo), std::abs(hi))) break;
    if (f(mid) > target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

inline double db_to_linear(double g_db) { return std::pow(10.0, g_db / 10.0); }

inline double normal_logpdf(double x, double mean, double variance) {
  detail::require(variance > 0.0, "normal_logpdf: variance must be positive");
  const double d = x - mean;
  return -0.5 * std::log(2.0 * std::numbers::pi * variance) - d * d / (2.0 * variance);
}

/// P(Z > x) for standard normal Z.
inline double normal_tail(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Upper-tail quantile of the standard normal: returns eta with P(Z > eta) = p.
inline double normal_tail_threshold(double p) {
  detail::require(p > 0.0 && p < 1.0, "normal_tail_threshold: p must lie in (0,1)");
  return detail::bisect_decreasing(normal_tail, p, -40.0, 40.0, 1e-14, 0.0);
}

namespace detail {

inline double gamma_p_series(double a, double x) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 0; n < 100000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Modified Lentz evaluation of the continued fraction for Q(a, x).
inline double gamma_q_continued_fraction(double a, double x) {
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-17) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
inline double reg_gamma_q(double a, double x) {
  detail::require(a > 0.0, "reg_gamma_q: a must be positive");
  detail::require(x >= 0.0, "reg_gamma_q: x must be nonnegative");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
  return detail::gamma_q_continued_fraction(a, x);
}

inline double central_chi2_logpdf(double x, int dof) {
  detail::require(x > 0.0, "central_chi2_logpdf: x must be positive");
  detail::require(dof > 0, "central_chi2_logpdf: dof must be positive");
  const double k = 0.5 * dof;
  return -k * std::numbers::ln2 - std::lgamma(k) + (k - 1.0) * std::log(x) - 0.5 * x;
}

/// Noncentral chi-square log-density as a log-sum-exp over the Poisson(lambda/2)
/// mixture of central chi-square densities with dof + 2j degrees of freedom.
///
/// Mixture terms relative to the j = 0 component follow the recurrence
///   t_{j+1} / t_j = (lambda x / 4) / ((j + 1)(dof/2 + j)),
/// so they are accumulated in scaled linear space (rescaled before overflow).
/// The series stops once terms are decreasing and 40 log-units below the
/// largest term seen.
inline double noncentral_chi2_logpdf(double x, int dof, double lambda) {
  detail::require(x > 0.0, "noncentral_chi2_logpdf: x must be positive");
  detail::require(dof > 0, "noncentral_chi2_logpdf: dof must be positive");
  detail::require(lambda >= 0.0, "noncentral_chi2_logpdf: lambda must be nonnegative");
  const double base = central_chi2_logpdf(x, dof);
  if (lambda == 0.0) return base;

  const double half_dof = 0.5 * dof;
  const double step = 0.25 * lambda * x;
  const double cutoff = std::exp(-40.0);
  constexpr double rescale_at = 1e280;

  double log_scale = 0.0;
  double term = 1.0;
  double largest = 1.0;
  double sum = 1.0;
  for (int j = 0; j < 10000000; ++j) {
    const double ratio = step / ((j + 1.0) * (half_dof + j));
    term *= ratio;
    largest = std::max(largest, term);
    sum += term;
    if (ratio < 1.0 && term < largest * cutoff) break;
    if (sum > rescale_at) {
      log_scale += std::log(sum);
      term /= sum;
      largest /= sum;
      sum = 1.0;
    }
  }
  return base - 0.5 * lambda + log_scale + std::log(sum);
}

/// Returns eta with Q(dof/2, eta/2) = p.
inline double chi2_tail_threshold(int dof, double p) {
  detail::require(dof > 0, "chi2_tail_threshold: dof must be positive");
  detail::require(p > 0.0 && p < 1.0, "chi2_tail_threshold: p must lie in (0,1)");
  const double a = 0.5 * dof;
  auto tail = [a](double eta) { return reg_gamma_q(a, 0.5 * eta); };
  double hi = std::max(1.0, static_cast<double>(dof));
  while (tail(hi) > p) hi *= 2.0;
  return detail::bisect_decreasing(tail, p, 0.0, hi, 0.0, 1e-13);
}

/// Reproducible random substream. Substream `stream_index` of `master_seed`
/// is seeded through a seed sequence over both words, so the pair fully
/// determines the draws.
class RandomStream {
 public:
  RandomStream(std::uint64_t master_seed, std::uint64_t stream_index)
      : master_seed_(master_seed), stream_index_(stream_index), engine_(make_engine(master_seed, stream_index)) {}

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_index() const { return stream_index_; }

  /// Uniform draw on (0, 1].
  double uniform_open_closed() { return (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53; }

  double standard_normal() { return normal_(engine_); }

 private:
  static std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eed5eedu};
    return std::mt19937_64(seq);
  }

  std::uint64_t master_seed_;
  std::uint64_t stream_index_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

inline double sample_normal(RandomStream& stream, double mean, double variance) {
  detail::require(variance > 0.0, "sample_normal: variance must be positive");
  return mean + std::sqrt(variance) * stream.standard_normal();
}

/// Geometric law on {1, 2, ...} with P[T = n] = (1 - rho)^(n-1) rho, by inversion.
inline std::int64_t sample_geometric(RandomStream& stream, double rho) {
  detail::require(rho > 0.0 && rho <= 1.0, "sample_geometric: rho must lie in (0,1]");
  const double u = stream.uniform_open_closed();
  if (rho == 1.0) return 1;
  const double n = std::ceil(std::log(u) / std::log1p(-rho));
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(n));
}

}  // namespace dualcusum::stats
