#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "dualcusum/sim.hpp"

using namespace dualcusum;
using namespace dualcusum::sim;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Scenario gaussian6() {
  Scenario s;
  s.kind = ScenarioKind::GaussianShift;
  s.node_params = {0.5, 0.9, 1.1, 0.3, 1.5, 0.75};
  s.rho = 0.01;
  return s;
}

Scenario energy6() {
  Scenario s;
  s.kind = ScenarioKind::Energy;
  s.node_params = {-3.7, -5.2, -3.4, -5.4, -9.5, -3.8};
  s.samples_per_slot = 20;
  s.rho = 0.05;
  return s;
}

algos::DualCusumParams dual(double gamma, double beta) { return {3.1623, gamma, beta, 5.0}; }

double stopping_time(const TrialResult& r) { return r.alarm_time ? static_cast<double>(*r.alarm_time) : kInf; }

void expect_same(const TrialResult& a, const TrialResult& b) {
  EXPECT_EQ(a.change_time, b.change_time);
  EXPECT_EQ(a.alarm_time, b.alarm_time);
  EXPECT_EQ(a.delay, b.delay);
  EXPECT_EQ(a.false_alarm, b.false_alarm);
  EXPECT_EQ(a.transmissions, b.transmissions);
  EXPECT_EQ(a.censored, b.censored);
}

}  // namespace

TEST(Scenario, Validation) {
  auto s = gaussian6();
  EXPECT_NO_THROW(s.validate());
  s.rho = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = gaussian6();
  s.node_params.clear();
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = gaussian6();
  s.fusion_noise_variance = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(GenSlotStatistic, GaussianMoments) {
  const auto s = gaussian6();
  RandomStream st(1, 0);
  constexpr int n = 200000;
  double pre = 0, post = 0;
  for (int i = 0; i < n; ++i) {
    pre += gen_slot_statistic(st, s, 4, false);
    post += gen_slot_statistic(st, s, 4, true);
  }
  EXPECT_NEAR(pre / n, 0.0, 5.0 / std::sqrt(double(n)));
  EXPECT_NEAR(post / n, 1.5, 5.0 / std::sqrt(double(n)));
  EXPECT_THROW(gen_slot_statistic(st, s, 6, false), algos::contract_violation);
}

TEST(GenSlotStatistic, EnergyMomentsMatchChiSquare) {
  const auto s = energy6();
  const double lambda = 20 * stats::db_to_linear(-3.7);
  RandomStream st(2, 0);
  constexpr int n = 200000;
  double m0 = 0, q0 = 0, m1 = 0, q1 = 0;
  for (int i = 0; i < n; ++i) {
    const double e0 = gen_slot_statistic(st, s, 0, false), e1 = gen_slot_statistic(st, s, 0, true);
    m0 += e0, q0 += e0 * e0, m1 += e1, q1 += e1 * e1;
  }
  m0 /= n, m1 /= n;
  const double v0 = q0 / n - m0 * m0, v1 = q1 / n - m1 * m1;
  EXPECT_NEAR(m0, 20.0, 5.0 * std::sqrt(40.0 / n));
  EXPECT_NEAR(m1, 20.0 + lambda, 5.0 * std::sqrt((40.0 + 4 * lambda) / n));
  EXPECT_NEAR(v0 / 40.0, 1.0, 0.02);
  EXPECT_NEAR(v1 / (40.0 + 4 * lambda), 1.0, 0.02);
}

TEST(GenSlotStatistic, EnergyScalesWithNoiseVariance) {
  // normalized by sigma^2, so the pre-change law does not depend on it
  auto s = energy6();
  s.node_noise_variance = 4.0;
  RandomStream st(3, 0);
  double m = 0;
  for (int i = 0; i < 100000; ++i) m += gen_slot_statistic(st, s, 0, false);
  EXPECT_NEAR(m / 100000, 20.0, 5.0 * std::sqrt(40.0 / 100000));
}

TEST(SimulateTrial, InfiniteBetaIsCensored) {
  auto s = gaussian6();
  s.horizon_after_change = 50;
  RandomStream st(4, 0);
  const auto r = simulate_trial(st, s, algos::GlobalCusumParams{kInf});
  EXPECT_TRUE(r.censored);
  EXPECT_FALSE(r.alarm_time);
  for (auto t : r.transmissions) EXPECT_EQ(t, r.change_time - 1 + 50);
}

TEST(SimulateTrial, MinusInfinityEtaAlarmsInFirstSlot) {
  const auto s = gaussian6();
  const auto rule = algos::SlotFusionParams::make(algos::FusionRule::And, 6, -kInf);
  for (std::uint64_t i = 0; i < 200; ++i) {
    RandomStream st(5, i);
    const auto r = simulate_trial(st, s, rule);
    ASSERT_EQ(r.alarm_time, 1);
    EXPECT_EQ(r.false_alarm, r.change_time > 1);
    EXPECT_TRUE(r.memoryless);
  }
  RandomStream st(5, 0);
  const auto r = simulate_trial(st, s, rule, 1);
  EXPECT_FALSE(r.false_alarm);
  EXPECT_TRUE(r.alarm_at_change);
  EXPECT_EQ(r.delay, 0);
}

TEST(SimulateTrial, InfiniteGammaNeverTransmits) {
  auto s = gaussian6();
  s.horizon_after_change = 500;
  for (std::uint64_t i = 0; i < 20; ++i) {
    RandomStream st(6, i);
    const auto r = simulate_trial(st, s, dual(kInf, 1e6));
    for (auto t : r.transmissions) EXPECT_EQ(t, 0);
  }
}

TEST(SimulateTrial, ChangeTimeOverrideAndErrors) {
  const auto s = gaussian6();
  RandomStream st(7, 0);
  const auto r = simulate_trial(st, s, dual(2.0, 5.0), 37);
  EXPECT_EQ(r.change_time, 37);
  EXPECT_THROW(simulate_trial(st, s, dual(2.0, 5.0), 0), std::invalid_argument);
  EXPECT_THROW(simulate_trial(st, s, dual(-1.0, 5.0)), std::invalid_argument);
}

TEST(SimulateTrial, Deterministic) {
  const auto s = energy6();
  for (std::uint64_t i = 0; i < 50; ++i) {
    RandomStream a(8, i), b(8, i);
    expect_same(simulate_trial(a, s, dual(2.0, 4.0)), simulate_trial(b, s, dual(2.0, 4.0)));
  }
}

// On a fixed noise path the stopping time cannot decrease as the threshold grows.
TEST(SimulateTrial, StoppingTimeMonotoneInThreshold) {
  auto s = gaussian6();
  s.horizon_after_change = 2000;
  const std::vector<double> betas{0.0, 1.0, 3.0, 6.0, 10.0};
  const std::vector<double> etas{0.0, 1.5, 2.5, 3.5};
  for (std::uint64_t i = 0; i < 1000; ++i) {
    double prev_dual = 0, prev_global = 0, prev_or = 0;
    for (double beta : betas) {
      RandomStream a(9, i), b(9, i);
      const double td = stopping_time(simulate_trial(a, s, dual(2.0, beta)));
      const double tg = stopping_time(simulate_trial(b, s, algos::GlobalCusumParams{beta}));
      ASSERT_GE(td, prev_dual);
      ASSERT_GE(tg, prev_global);
      prev_dual = td, prev_global = tg;
    }
    for (double eta : etas) {
      RandomStream a(9, i);
      const double t = stopping_time(simulate_trial(a, s, algos::SlotFusionParams::make(algos::FusionRule::Or, 6, eta)));
      ASSERT_GE(t, prev_or);
      prev_or = t;
    }
  }
}

TEST(PreChangePeak, PredictsFalseAlarms) {
  const auto s = gaussian6();
  for (double theta : {2.0, 5.0, 9.0}) {
    for (std::uint64_t i = 0; i < 300; ++i) {
      RandomStream a(10, i), b(10, i);
      const double peak = pre_change_peak(a, s, dual(2.0, 0.0));
      const auto r = simulate_trial(b, s, dual(2.0, theta));
      ASSERT_EQ(r.false_alarm, peak > theta) << "i=" << i << " theta=" << theta;
    }
  }
}

TEST(ParallelTrials, WorkerCountDoesNotChangeResults) {
  const auto s = energy6();
  const RunPlan one{3, 1}, four{3, 4};
  const auto a = run_trials(s, dual(2.0, 4.0), 100, 500, one);
  const auto b = run_trials(s, dual(2.0, 4.0), 100, 500, four);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) expect_same(a[i], b[i]);
}

TEST(ParallelTrials, PropagatesExceptions) {
  EXPECT_THROW(parallel_trials(0, 1000, 4,
                               [](std::uint64_t i) {
                                 if (i == 517) throw std::runtime_error("boom");
                                 return i;
                               }),
               std::runtime_error);
}

TEST(EstimateMetrics, HandComputedFixture) {
  std::vector<TrialResult> rs(4);
  rs[0] = {5, 3, 0, true, {3, 3}, false, true, false};
  rs[1] = {10, 10, 0, false, {10, 10}, false, true, true};
  rs[2] = {2, 6, 4, false, {6, 6}, false, true, false};
  rs[3] = {1, std::nullopt, 0, false, {9, 9}, true, true, false};
  const auto m = estimate_metrics(rs);
  EXPECT_EQ(m.n_trials, 4u);
  EXPECT_DOUBLE_EQ(m.pfa_hat, 0.25);
  EXPECT_DOUBLE_EQ(m.pfa_ci, 1.959963984540054 * std::sqrt(0.25 * 0.75 / 4));
  EXPECT_DOUBLE_EQ(m.edd_unconditional, 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.edd_conditional, 2.0);
  EXPECT_DOUBLE_EQ(m.etr_hat, 19.0 / 3.0);
  ASSERT_TRUE(m.pd_hat);
  EXPECT_DOUBLE_EQ(*m.pd_hat, 0.5);
  EXPECT_EQ(m.detections, 2u);
  EXPECT_DOUBLE_EQ(m.censor_rate, 0.25);
}

TEST(EstimateMetrics, AllFalseAlarmsAndEmpty) {
  std::vector<TrialResult> rs(3, TrialResult{50, 4, 0, true, {4}, false, false, false});
  const auto m = estimate_metrics(rs);
  EXPECT_EQ(m.pfa_hat, 1.0);
  EXPECT_EQ(m.edd_unconditional, 0.0);
  EXPECT_FALSE(m.pd_hat);
  EXPECT_THROW(estimate_metrics(std::span<const TrialResult>()), algos::contract_violation);
}

TEST(Eq2, ConversionValues) {
  EXPECT_NEAR(eq2_run_to_slot(0.1, 0.01), 1.1223344556677890e-3, 1e-17);
  EXPECT_NEAR(eq2_run_to_slot(0.5, 0.5), 1.0, 1e-15);
  for (double rho : {0.01, 0.05, 0.3})
    for (double a : {0.01, 0.027, 0.1, 0.5}) EXPECT_NEAR(eq2_slot_to_run(eq2_run_to_slot(a, rho), rho), a, 1e-12);
  EXPECT_THROW(eq2_run_to_slot(1.0, 0.01), stats::domain_error);
  EXPECT_THROW(eq2_run_to_slot(0.1, 0.0), stats::domain_error);
}

// Without memory, P(false alarm) = P(Geom(p) < T) which is the slot->run map.
TEST(Eq2, MatchesMonteCarloForMemorylessRule) {
  const auto s = gaussian6();
  auto rule = algos::SlotFusionParams::make(algos::FusionRule::Or, 6);
  rule.eta = analytic_slot_threshold(s, rule, 0.1);
  const double p_fa = algos::rule_fused_pfa(stats::normal_tail(rule.eta), 6, rule);
  EXPECT_NEAR(eq2_slot_to_run(p_fa, s.rho), 0.1, 1e-9);

  const auto rs = run_trials(s, rule, 0, 20000, {21, 1});
  std::size_t fa = 0;
  double exposure = 0;
  for (const auto& r : rs) {
    fa += r.false_alarm ? 1 : 0;
    exposure += static_cast<double>(r.false_alarm ? *r.alarm_time : r.change_time - 1);
  }
  const double run_hat = fa / double(rs.size());
  EXPECT_NEAR(run_hat, 0.1, binomial_ci95(0.1, rs.size()) * 1.3);
  const double slot_hat = fa / exposure;
  EXPECT_NEAR(slot_hat / p_fa, 1.0, 3.0 / std::sqrt(double(fa)));
}

TEST(Metrics, GeometricDelayIdentityForSlotRules) {
  const auto s = gaussian6();
  const auto cal = calibrate_slot_fusion(s, algos::SlotFusionParams::make(algos::FusionRule::Majority, 6), 0.1, {5000, 0, {31, 1}});
  const auto m = measure(s, cal.detector, 20000, {31, 1});
  ASSERT_TRUE(m.pd_hat);
  const double p = *m.pd_hat, x = m.edd_conditional + 1.0, n = static_cast<double>(m.detections);
  const double sd = std::sqrt(p * p * (1 - p) / (p * p) / n + x * x * p * (1 - p) / n);
  EXPECT_NEAR(x * p, 1.0, 1.96 * sd);
}

TEST(Calibration, SlotFusionAnalyticThreshold) {
  const auto s = gaussian6();
  const auto rule = algos::SlotFusionParams::make(algos::FusionRule::Or, 6);
  EXPECT_NEAR(analytic_slot_threshold(s, rule, 0.1), 3.5575804041262016, 1e-8);
  const auto r = calibrate_slot_fusion(s, rule, 0.1, {20000, 0, {1, 1}});
  EXPECT_TRUE(r.within_ci());
  EXPECT_NEAR(alarm_threshold(r.detector), 3.5575804041262016, 1e-8);

  auto e = energy6();
  const auto and_rule = algos::SlotFusionParams::make(algos::FusionRule::And, 6);
  const double p_node = algos::rule_invert_pfa(eq2_run_to_slot(0.01, 0.05), 6, and_rule);
  EXPECT_NEAR(stats::reg_gamma_q(10.0, analytic_slot_threshold(e, and_rule, 0.01) / 2), p_node, 1e-9 * p_node);
}

TEST(Calibration, GlobalCusumDeterministicAndConservative) {
  const auto s = gaussian6();
  const CalibrationOptions opts{5000, 0, {4, 1}};
  const auto a = calibrate_global_cusum(s, 0.1, opts);
  const auto b = calibrate_global_cusum(s, 0.1, opts);
  EXPECT_EQ(alarm_threshold(a.detector), alarm_threshold(b.detector));
  EXPECT_TRUE(a.within_ci());
  EXPECT_LE(a.achieved_pfa, 0.1);
  const auto c = calibrate_global_cusum(s, 0.1, {5000, 0, {5, 1}});
  EXPECT_NE(alarm_threshold(a.detector), alarm_threshold(c.detector));
  EXPECT_THROW(calibrate_global_cusum(s, 1.0, opts), stats::domain_error);
}

TEST(Calibration, BisectRejectsIncreasingRate) {
  // a false-alarm rate that grows with the threshold cannot come from fixed peaks,
  // emulate it by handing in an inverted bracket
  const std::vector<double> peaks{1.0, 2.0, 3.0, 4.0};
  EXPECT_THROW(detail::bisect_threshold(peaks, 0.5, 5.0, 0.0), std::logic_error);
  EXPECT_DOUBLE_EQ(detail::empirical_pfa(peaks, 2.5), 0.5);
}

TEST(Calibration, DualCusumSmallGrid) {
  const auto s = gaussian6();
  const std::vector<double> grid{0.0, 4.0};
  const CalibrationOptions opts{2000, 1, {6, 1}};
  const auto a = calibrate_dual_cusum(s, 0.1, 3.1623, 5.0, grid, opts);
  const auto b = calibrate_dual_cusum(s, 0.1, 3.1623, 5.0, grid, opts);
  EXPECT_TRUE(a.within_ci());
  EXPECT_GE(a.candidates.size(), 3u);
  EXPECT_EQ(alarm_threshold(a.detector), alarm_threshold(b.detector));
  EXPECT_EQ(std::get<algos::DualCusumParams>(a.detector).gamma, std::get<algos::DualCusumParams>(b.detector).gamma);
  for (const auto& c : a.candidates) {
    if (c.attained) EXPECT_GE(c.edd, a.edd_estimate);
  }
  EXPECT_THROW(calibrate_dual_cusum(s, 0.1, 3.1623, 5.0, std::vector<double>{}, opts), std::invalid_argument);
}

TEST(Calibration, DualCusumUnreachableAlphaFails) {
  // with gamma this large no node ever transmits before the change
  const auto s = gaussian6();
  EXPECT_THROW(calibrate_dual_cusum(s, 0.1, 3.1623, 5.0, std::vector<double>{500.0}, {1000, 0, {7, 1}}),
               calibration_failure);
}
