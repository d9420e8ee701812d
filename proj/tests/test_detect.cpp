#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dualcusum/detect.hpp"
#include "dualcusum/stats.hpp"

using namespace dualcusum;
using namespace dualcusum::detect;

TEST(Cusum, StepExamples) {
  EXPECT_EQ(cusum_step(CusumValue(0.0), -1.0).value(), 0.0);
  EXPECT_EQ(cusum_step(CusumValue(0.5), 1.0).value(), 1.5);
  EXPECT_EQ(cusum_step(CusumValue(2.0), -2.0).value(), 0.0);
  EXPECT_THROW(CusumValue(-0.1), std::invalid_argument);
}

TEST(Cusum, NonnegativeAndMonotone) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> w(0.0, 10.0), xi(-10.0, 10.0), d(0.0, 3.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = w(rng), x = xi(rng);
    const auto next = cusum_step(CusumValue(a), x);
    EXPECT_GE(next.value(), 0.0);
    EXPECT_LE(next.value(), cusum_step(CusumValue(a + d(rng)), x).value());
    EXPECT_LE(next.value(), cusum_step(CusumValue(a), x + d(rng)).value());
  }
}

TEST(LlrGaussian, Examples) {
  const GaussianShiftModel m{0.5, 1.0};
  EXPECT_NEAR(llr_gaussian_shift(1.0, m), 0.375, 1e-15);
  EXPECT_NEAR(llr_gaussian_shift(0.25, m), 0.0, 1e-15);
  EXPECT_EQ(llr_gaussian_shift(3.0, GaussianShiftModel{0.0, 1.0}), 0.0);
}

TEST(LlrGaussian, MatchesLogDensityDifference) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mu(-3.0, 3.0), var(0.1, 4.0), x(-8.0, 8.0);
  for (int i = 0; i < 10000; ++i) {
    const GaussianShiftModel m{mu(rng), var(rng)};
    const double v = x(rng);
    const double direct = stats::normal_logpdf(v, m.post_mean, m.noise_variance) - stats::normal_logpdf(v, 0.0, m.noise_variance);
    EXPECT_NEAR(llr_gaussian_shift(v, m), direct, 1e-10);
  }
}

TEST(LlrEnergy, Examples) {
  const auto m = EnergyModel::from_gain_db(20, -3.7);
  EXPECT_NEAR(m.noncentrality, 8.5315903760318532, 1e-12);
  EXPECT_NEAR(llr_energy(25.0, m), 0.21670702019516624, 1e-10);
  EXPECT_EQ(llr_energy(25.0, EnergyModel{20, 0.0}), 0.0);
  EXPECT_THROW(llr_energy(0.0, m), stats::domain_error);
  EXPECT_THROW(llr_energy(-2.0, m), stats::domain_error);
}

TEST(LlrEnergy, IncreasingInEnergy) {
  for (double g : {-9.5, -3.7, 5.0}) {
    const auto m = EnergyModel::from_gain_db(20, g);
    double prev = llr_energy(0.5, m);
    for (double e = 1.0; e < 200.0; e += 0.5) {
      const double v = llr_energy(e, m);
      EXPECT_GT(v, prev) << "g=" << g << " e=" << e;
      prev = v;
    }
  }
}

TEST(LlrFusion, Examples) {
  const FusionChannel ch{3.1623, 5.0, 1.0};
  EXPECT_NEAR(ch.design_mean(), 15.8115, 1e-12);
  EXPECT_NEAR(llr_fusion(0.0, ch), -125.001766125, 1e-9);
  EXPECT_NEAR(llr_fusion(ch.design_mean() / 2, ch), 0.0, 1e-12);
  const FusionChannel wide{3.1623, 5.0, 2.0};
  EXPECT_NEAR(llr_fusion(4.0, wide), 0.5 * llr_fusion(4.0, ch), 1e-12);
}

TEST(LlrFusion, MatchesLogDensityDifference) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> b(0.1, 5.0), I(0.5, 6.0), var(0.1, 4.0), y(-20.0, 40.0);
  for (int i = 0; i < 10000; ++i) {
    const FusionChannel ch{b(rng), I(rng), var(rng)};
    const double v = y(rng);
    const double direct =
        stats::normal_logpdf(v, ch.design_mean(), ch.noise_variance) - stats::normal_logpdf(v, 0.0, ch.noise_variance);
    EXPECT_NEAR(llr_fusion(v, ch), direct, 1e-10 * std::max(1.0, std::abs(direct)));
  }
}

// Pre-change LLRs drift down, post-change LLRs drift up.
TEST(LlrDrift, SignsUnderBothHypotheses) {
  stats::RandomStream s(77, 0);
  constexpr int n = 200000;

  for (double mu : {0.3, 1.5}) {
    const GaussianShiftModel m{mu, 1.0};
    double pre = 0, post = 0;
    for (int i = 0; i < n; ++i) {
      pre += llr(m, stats::sample_normal(s, 0.0, 1.0));
      post += llr(m, stats::sample_normal(s, mu, 1.0));
    }
    EXPECT_NEAR(pre / n, -0.5 * mu * mu, 5.0 * mu / std::sqrt(double(n)));
    EXPECT_NEAR(post / n, 0.5 * mu * mu, 5.0 * mu / std::sqrt(double(n)));
  }

  const auto m = EnergyModel::from_gain_db(20, -3.7);
  const double h = std::sqrt(stats::db_to_linear(-3.7));
  double pre = 0, post = 0;
  for (int i = 0; i < 50000; ++i) {
    double e0 = 0, e1 = 0;
    for (int k = 0; k < 20; ++k) {
      const double a = s.standard_normal(), c = s.standard_normal() + h;
      e0 += a * a;
      e1 += c * c;
    }
    pre += llr(m, e0);
    post += llr(m, e1);
  }
  EXPECT_LT(pre / 50000, 0.0);
  EXPECT_GT(post / 50000, 0.0);
}
