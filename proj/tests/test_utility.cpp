#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "incentfl/checks.hpp"
#include "incentfl/utility.hpp"
#include "oracles.hpp"

using namespace incentfl;

namespace {

UtilityParams base(SizeDistribution dist = ParetoSizes{2, 10}, std::size_t n = 11, double cap = 200) {
  UtilityParams p;
  p.gamma_u = 1.0;
  p.alpha = 1.0;
  p.performance = PerformanceModel{1.0, -0.5, 1.0};
  p.cost = CostModel{1e-3, 1e-6};
  p.population = PopulationModel{n, std::move(dist)};
  p.cap = cap;
  return p;
}

}  // namespace

TEST(Perf, ClosedForms) {
  EXPECT_DOUBLE_EQ(perf(4, {1, -0.5, 1}), 0.5);
  EXPECT_EQ(perf(0, {1, -0.5, 1}), 0.0);
  EXPECT_DOUBLE_EQ(perf(10, {1, -1, 1}), 0.9);
  EXPECT_EQ(perf(0.25, {1, -0.5, 1}), 0.0);  // clamped
  EXPECT_DOUBLE_EQ(perf(4, {1, -0.5, 0.8}), 0.4);
}

TEST(Perf, MonotoneConcaveAndBounded) {
  const PerformanceModel m{1.3, -0.5, 1};
  double prev = 0;
  for (double D = 0.5; D < 5000; D *= 1.3) {
    EXPECT_GE(perf(D, m), prev);
    EXPECT_LT(perf(D, m), 1.0);
    EXPECT_LE(perf_second_deriv(D, m), 0.0);
    prev = perf(D, m);
  }
  EXPECT_EQ(perf_deriv(1.0, m), 0.0);  // clamp region
}

TEST(Cost, ClosedForms) {
  EXPECT_EQ(cost(0, {3, 4}), 0.0);
  EXPECT_EQ(cost(7, {1, 0}), 7.0);
  EXPECT_DOUBLE_EQ(cost(100, {0, 1e-4}), 1.0);
  EXPECT_DOUBLE_EQ(cost_deriv(10, {1, 0.5}), 11.0);
  EXPECT_DOUBLE_EQ(cost_second_deriv(3, {1, 0.5}), 1.0);
}

TEST(DOthers, UniformClosedForm) {
  const PopulationModel pop{11, UniformSizes{100}};
  EXPECT_DOUBLE_EQ(d_others(100, pop), 500.0);
  EXPECT_DOUBLE_EQ(d_others(250, pop), 500.0);
  EXPECT_EQ(d_others(0, pop), 0.0);
}

TEST(DOthers, ParetoMatchesQuadrature) {
  const PopulationModel pop{11, ParetoSizes{2, 10}};
  EXPECT_NEAR(d_others(50, pop), 160.0, 1e-12);
  EXPECT_NEAR(oracle::pareto_partial_mass(50, 2, 10, 11), 160.0, 1e-6);
  for (double d : {10.5, 13.0, 40.0, 200.0, 1000.0})
    EXPECT_NEAR(d_others(d, pop), oracle::pareto_partial_mass(d, 2, 10, 11), 1e-6) << d;
  EXPECT_EQ(d_others(5, pop), 0.0);
  EXPECT_EQ(d_others(0, pop), 0.0);
}

TEST(DOthers, ExponentialMatchesQuadrature) {
  const PopulationModel pop{6, ExponentialSizes{0.02}};
  for (double d : {1.0, 30.0, 100.0, 400.0})
    EXPECT_NEAR(d_others(d, pop), oracle::exponential_partial_mass(d, 0.02, 6), 1e-6) << d;
  EXPECT_NEAR(d_others(1e5, pop), 5 * 50.0, 1e-9);
}

TEST(DOthers, ExplicitStepSum) {
  const PopulationModel pop{4, ExplicitSizes{{30, 50, 70}}};
  EXPECT_EQ(d_others(29, pop), 0.0);
  EXPECT_EQ(d_others(50, pop), 80.0);
  EXPECT_EQ(d_others(60, pop), 80.0);
  EXPECT_EQ(d_others(1000, pop), 150.0);
  EXPECT_TRUE(d_others_deriv(50, pop).discontinuity);
  const auto far = d_others_deriv(60, pop);
  EXPECT_FALSE(far.discontinuity);
  EXPECT_EQ(far.first, 0.0);
}

TEST(DOthersDeriv, ParetoClosedFormAndFiniteDifference) {
  const PopulationModel pop{11, ParetoSizes{2, 10}};
  const auto d = d_others_deriv(20, pop);
  EXPECT_NEAR(d.first, 5.0, 1e-12);
  EXPECT_NEAR(d.second, -0.5, 1e-12);
  auto D = [&](double x) { return d_others(x, pop); };
  EXPECT_NEAR(oracle::diff1(D, 20, 1e-2), 5.0, 1e-7);
  EXPECT_NEAR(oracle::diff2(D, 20, 1e-1), -0.5, 1e-5);
}

TEST(DOthersDeriv, UniformIsConvex) {
  const PopulationModel pop{6, UniformSizes{200}};
  for (double d : {10.0, 50.0, 150.0}) {
    const auto r = d_others_deriv(d, pop);
    EXPECT_DOUBLE_EQ(r.first, 5 * d / 200);
    EXPECT_DOUBLE_EQ(r.second, 5.0 / 200);
    EXPECT_GT(r.second, 0.0);
  }
}

TEST(DOthersDeriv, NonNegativeEverywhere) {
  const std::vector<PopulationModel> pops{{5, UniformSizes{100}},
                                          {5, ParetoSizes{1.5, 20}},
                                          {5, ExponentialSizes{0.05}},
                                          {5, ExplicitSizes{{10, 20, 20, 70}}}};
  for (const auto& pop : pops)
    for (double d = 0.5; d < 400; d += 3.7) EXPECT_GE(d_others_deriv(d, pop).first, 0.0) << d;
}

TEST(Utility, ZeroCostWeightIsMonotone) {
  auto p = base();
  p.alpha = 0;
  double pv = -1, pi = -1;
  for (double d = 0; d <= p.cap; d += 1) {
    EXPECT_GE(utility_vanilla(d, p, 30), pv);
    EXPECT_GE(utility_incentive(d, p), pi);
    pv = utility_vanilla(d, p, 30);
    pi = utility_incentive(d, p);
  }
}

TEST(Utility, ZeroPerformanceWeightIsPureCost) {
  auto p = base();
  p.gamma_u = 0;
  for (double d : {0.0, 3.0, 150.0}) {
    EXPECT_DOUBLE_EQ(utility_vanilla(d, p, 40), -cost(d, p.cost));
    EXPECT_DOUBLE_EQ(utility_incentive(d, p), -cost(d, p.cost));
  }
  EXPECT_EQ(optimal_contribution(p, Aggregation::Incentive), 0.0);
  EXPECT_EQ(optimal_contribution(p, Aggregation::Vanilla, 40), 0.0);
}

TEST(Utility, IncentiveDominatesWhenAggregationIsLarger) {
  const auto p = base();
  for (double d0 : {0.0, 20.0, 60.0})
    for (double d = d0; d <= p.cap; d += 5) {
      const double fixed = d_others(d0, p.population);
      EXPECT_GE(utility_incentive(d, p) - utility_vanilla(d, p, fixed), -1e-15);
    }
  for (double d = 0; d <= p.cap; d += 1) EXPECT_GE(utility_incentive(d, p), utility_vanilla(d, p, d_others(0, p.population)));
}

TEST(Utility, RejectsOutOfRange) {
  const auto p = base();
  EXPECT_THROW(utility_incentive(-1, p), std::invalid_argument);
  EXPECT_THROW(utility_vanilla(p.cap + 1, p, 0), std::invalid_argument);
}

TEST(UtilityDeriv, MatchesFiniteDifferences) {
  for (auto dist : std::vector<SizeDistribution>{ParetoSizes{2.5, 30}, UniformSizes{300}, ExponentialSizes{0.01}}) {
    auto p = base(dist, 20, 250);
    auto u = [&](double d) { return utility_incentive(d, p); };
    for (double d = 7; d < 245; d += 11.3) {
      if (std::abs(d - 30) < 1) continue;
      const double fd1 = oracle::diff1(u, d, 1e-3 * d), fd2 = oracle::diff2(u, d, 1e-2 * d);
      const double a1 = utility_deriv(d, p, Aggregation::Incentive);
      const double a2 = utility_second_deriv(d, p, Aggregation::Incentive);
      EXPECT_NEAR(a1, fd1, 1e-5 * std::max(1e-3, std::abs(a1))) << d;
      EXPECT_NEAR(a2, fd2, 1e-3 * std::max(1e-6, std::abs(a2))) << d;
    }
  }
}

TEST(UtilityDeriv, VanillaPositiveWithoutCost) {
  auto p = base();
  p.alpha = 0;
  for (double d = 0.5; d < p.cap; d += 3) EXPECT_GT(utility_deriv(d, p, Aggregation::Vanilla, 10), 0.0);
}

TEST(UtilityDeriv, IncentiveExcessIsAggregationTerm) {
  const auto p = base();
  for (double d = 11; d < p.cap; d += 7) {
    const double D = d_others(d, p.population);
    const double diff = utility_deriv(d, p, Aggregation::Incentive) - utility_deriv(d, p, Aggregation::Vanilla, D);
    const double g = p.gamma_u * perf_deriv(d + D, p.performance) * d_others_deriv(d, p.population).first;
    EXPECT_NEAR(diff, g, 1e-15);
    EXPECT_GE(diff, 0.0);
  }
}

TEST(UtilitySecondDeriv, SignsUnderAssumedShapes) {
  const auto p = base(ParetoSizes{2, 10});
  for (double d = 0.5; d < p.cap; d += 0.9) {
    EXPECT_LE(utility_second_deriv(d, p, Aggregation::Vanilla, 50), 0.0);
    if (std::abs(d - 10) > 1e-9) {
      EXPECT_LE(utility_second_deriv(d, p, Aggregation::Incentive), 0.0) << d;
    }
  }
  EXPECT_TRUE(check_concavity(p, Aggregation::Incentive).concave);

  // convex D_others; the verdict is the max of u'' over cell midpoints
  const auto q = base(UniformSizes{400}, 11, 300);
  const auto c = check_concavity(q, Aggregation::Incentive, 0.0, 50);
  double mx = -INFINITY;
  for (int i = 0; i < 50; ++i) mx = std::max(mx, utility_second_deriv(300.0 * (i + 0.5) / 50, q, Aggregation::Incentive));
  EXPECT_EQ(c.max_second_deriv, mx);
  EXPECT_EQ(c.concave, mx <= 0.0);
}

TEST(EqLarge, NoCostAlwaysHolds) {
  auto p = base();
  p.alpha = 0;
  const auto r = check_eq_large(p);
  EXPECT_DOUBLE_EQ(r.rhs, -1.0);
  EXPECT_TRUE(r.holds);
  p.alpha = 1;
  p.cost = {0, 0};
  EXPECT_TRUE(check_eq_large(p).holds);
}

TEST(EqLarge, BalancedMarginsGiveZeroRhs) {
  auto p = base(ParetoSizes{2, 10}, 11, 200);
  const double T = p.cap + d_others(p.cap, p.population);
  p.cost = {perf_deriv(T, p.performance), 0};  // gamma_u p' = alpha c'
  const auto r = check_eq_large(p);
  EXPECT_NEAR(r.rhs, 0.0, 1e-12);
  EXPECT_EQ(r.holds, d_others_deriv(p.cap, p.population).first > 0);
  EXPECT_TRUE(r.holds);
}

TEST(EqLarge, ParetoCaseReachesCap) {
  auto p = base(ParetoSizes{2, 40}, 30, 60);
  p.cost = {1e-4, 1e-7};
  const auto r = check_eq_large(p);
  ASSERT_TRUE(r.holds);
  // brute-force grid oracle
  double best = -1e9, arg = 0;
  for (int i = 0; i <= 6000; ++i) {
    const double d = p.cap * i / 6000.0;
    const double D = d < 40 ? 0.0 : 29 * 2 * 40 * (1 - 40 / d);
    const double u = oracle::power_perf(d + D, 1, -0.5) - (1e-4 * d + 1e-7 * d * d);
    if (u > best) best = u, arg = d;
  }
  EXPECT_EQ(arg, p.cap);
  EXPECT_NEAR(optimal_contribution(p, Aggregation::Incentive), p.cap, optimizer_resolution(p));
}

TEST(EqLarge, DegenerateSaturationRejected) {
  auto p = base(ParetoSizes{2, 10}, 2, 0.5);
  p.performance.theta = 5;  // p = 0 across the feasible range
  EXPECT_THROW(check_eq_large(p), std::domain_error);
}

TEST(Optimizer, NoCostGoesToCap) {
  auto p = base();
  p.alpha = 0;
  EXPECT_EQ(optimal_contribution(p, Aggregation::Incentive), p.cap);
  EXPECT_EQ(optimal_contribution(p, Aggregation::Vanilla, 50), p.cap);
}

TEST(Optimizer, VanillaStationaryPoint) {
  UtilityParams p;
  p.gamma_u = 1;
  p.alpha = 1;
  p.performance = {1, -0.5, 1};
  p.cost = {1e-4, 0};
  p.population = {2, UniformSizes{1}};
  p.cap = 1e4;
  // bisection on 0.5 (d + 100)^-1.5 = 1e-4
  double lo = 0, hi = 1e4;
  for (int i = 0; i < 200; ++i) {
    const double mid = (lo + hi) / 2;
    (0.5 * std::pow(mid + 100, -1.5) > 1e-4 ? lo : hi) = mid;
  }
  EXPECT_NEAR(lo, 192.4, 0.05);
  EXPECT_NEAR(optimal_contribution(p, Aggregation::Vanilla, 100), lo, 0.5);
}

TEST(Optimizer, LeftmostOnTies) {
  auto p = base();
  p.gamma_u = 0;
  p.cost = {0, 0};  // flat utility
  EXPECT_EQ(optimal_contribution(p, Aggregation::Incentive), 0.0);
}

TEST(Optimizer, IncentiveAtLeastVanillaOnSweep) {
  for (const auto& p : parameter_sweep(7, 60)) {
    const auto v = vanilla_optimum(p);
    // consistent to the optimizer resolution
    const double step = optimizer_resolution(p);
    EXPECT_GE(v.d_fixed, d_others(std::max(0.0, v.d_opt - 2 * step), p.population));
    EXPECT_LE(v.d_fixed, d_others(std::min(p.cap, v.d_opt + 2 * step), p.population));
    EXPECT_GE(optimal_contribution(p, Aggregation::Incentive), v.d_opt - optimizer_resolution(p));
  }
}

TEST(Validation, RejectsBadParams) {
  auto p = base();
  p.performance.beta_g = 0.5;
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = base();
  p.cost.quadratic = -1;
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = base();
  p.population.n = 1;
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = base(ExplicitSizes{{1, 2}}, 5);
  EXPECT_THROW(validate(p), std::invalid_argument);
  p = base();
  p.cap = 0;
  EXPECT_THROW(validate(p), std::invalid_argument);
}

TEST(UtilityCurve, CsvShape) {
  std::ostringstream os;
  write_utility_curve(os, base(), 25, 10, format_double);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "d,u_vanilla,u_incentive,du_incentive,D_others");
  int rows = 0;
  std::string last;
  while (std::getline(is, line)) ++rows, last = line;
  EXPECT_EQ(rows, 11);
  EXPECT_EQ(last.substr(0, 4), "200,");
}
