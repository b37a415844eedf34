#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "incentfl/game.hpp"
#include "incentfl/presets.hpp"
#include "incentfl/stats.hpp"
#include "oracles.hpp"

using namespace incentfl;

namespace {

UtilityParams params(double a1 = 1e-4, double a2 = 0.0) {
  UtilityParams p;
  p.gamma_u = 1;
  p.alpha = 1;
  p.performance = {1, -0.5, 1};
  p.cost = {a1, a2};
  p.population = {5, ParetoSizes{2, 50}};
  p.cap = 100;
  return p;
}

GameConfig analytic(Aggregation m = Aggregation::Incentive) {
  GameConfig g;
  g.evaluation = EvaluationMode::Analytic;
  g.mechanism = m;
  return g;
}

double oracle_utility(const std::vector<std::size_t>& d, std::size_t i, const UtilityParams& p, bool incentive) {
  double D = 0;
  if (incentive) D = oracle::lower_mass(d, i);
  else
    for (std::size_t j = 0; j < d.size(); ++j) D += j == i ? 0.0 : static_cast<double>(d[j]);
  const double di = static_cast<double>(d[i]);
  return p.gamma_u * oracle::power_perf(di + D, p.performance.theta, p.performance.beta_g) -
         p.alpha * (p.cost.linear * di + p.cost.quadratic * di * di);
}

}  // namespace

TEST(ClientUtility, FinitePopulationSums) {
  const auto p = params(0);
  StrategyProfile prof{{60, 30, 50, 70}, {100, 100, 100, 100}};
  EXPECT_EQ(finite_d_others(0, prof.contributions), 80.0);
  EXPECT_DOUBLE_EQ(client_utility(0, prof, analytic(), p), perf(140, p.performance));
  prof.contributions[0] = 0;
  EXPECT_EQ(client_utility(0, prof, analytic(), p), 0.0);
  prof.contributions[0] = 90;
  EXPECT_EQ(finite_d_others(0, prof.contributions), 150.0);
  EXPECT_EQ(finite_d_others(0, {50, 50}), 0.0);  // ties: lower id sits below
  EXPECT_EQ(finite_d_others(1, {50, 50}), 50.0);
  EXPECT_DOUBLE_EQ(client_utility(0, prof, analytic(Aggregation::Vanilla), p), perf(240, p.performance));
}

TEST(ClientUtility, RejectsInvalidProfiles) {
  EXPECT_THROW(client_utility(0, StrategyProfile{{5}, {4}}, analytic(), params()), std::invalid_argument);
  EXPECT_THROW(client_utility(0, StrategyProfile{{1, 2}, {4}}, analytic(), params()), std::invalid_argument);
  EXPECT_THROW(client_utility(3, StrategyProfile{{1}, {4}}, analytic(), params()), std::invalid_argument);
  GameConfig g;
  g.evaluation = EvaluationMode::Empirical;
  EXPECT_THROW(validate(g), std::invalid_argument);
}

TEST(BestResponse, CornerCases) {
  const auto caps = std::vector<std::size_t>{40, 80, 120};
  auto p = params();
  p.alpha = 0;
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_EQ(best_response(i, StrategyProfile::all_zero(caps), analytic(), p).best, caps[i]);
  p = params();
  p.gamma_u = 0;
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(best_response(i, StrategyProfile::all_caps(caps), analytic(), p).best, 0u);
}

TEST(BestResponse, MatchesBruteForce) {
  const std::vector<std::size_t> caps{37, 64, 90};
  std::mt19937_64 eng(3);
  for (int trial = 0; trial < 30; ++trial) {
    auto p = params(std::uniform_real_distribution<double>(0, 3e-3)(eng), std::uniform_real_distribution<double>(0, 1e-5)(eng));
    p.performance.beta_g = trial % 2 ? -1.0 : -0.5;
    StrategyProfile prof = StrategyProfile::all_zero(caps);
    for (std::size_t i = 0; i < 3; ++i) prof.contributions[i] = std::uniform_int_distribution<std::size_t>(0, caps[i])(eng);
    for (bool inc : {true, false}) {
      auto g = analytic(inc ? Aggregation::Incentive : Aggregation::Vanilla);
      g.grid_step = 1 + trial % 4;
      for (std::size_t i = 0; i < 3; ++i) {
        const auto br = best_response(i, prof, g, p);
        auto d = prof.contributions;
        std::size_t arg = 0;
        double best = -1e300;
        std::vector<std::size_t> grid;
        for (std::size_t x = 0; x <= caps[i]; x += g.grid_step) grid.push_back(x);
        if (grid.back() != caps[i]) grid.push_back(caps[i]);
        for (std::size_t x : grid) {
          d[i] = x;
          const double u = oracle_utility(d, i, p, inc);
          if (u > best) best = u, arg = x;
        }
        EXPECT_EQ(br.best, arg);
        EXPECT_NEAR(br.utility_at_best, best, 1e-14);
        EXPECT_EQ(br.curve.size(), grid.size());
      }
    }
  }
}

TEST(Dynamics, StartAtEquilibriumStays) {
  const std::vector<std::size_t> caps(5, 100);
  const auto start = StrategyProfile::all_caps(caps);
  ASSERT_TRUE(verify_nash(start, analytic(), params()).is_nash);
  const auto dyn = best_response_dynamics(start, analytic(), params());
  EXPECT_TRUE(dyn.converged);
  ASSERT_EQ(dyn.trajectory.size(), 1u);
  EXPECT_EQ(dyn.changes[0], 0u);
  EXPECT_EQ(dyn.trajectory[0], start);
}

TEST(Dynamics, NoCostConvergesToCaps) {
  auto p = params();
  p.alpha = 0;
  const std::vector<std::size_t> caps{10, 50, 20, 70};
  const auto dyn = best_response_dynamics(StrategyProfile{{3, 0, 20, 1}, caps}, analytic(), p);
  EXPECT_TRUE(dyn.converged);
  EXPECT_EQ(dyn.trajectory.back().contributions, caps);
}

TEST(Dynamics, SlopeConditionRandomStartReachesCaps) {
  const auto p = params();
  ASSERT_TRUE(check_eq_large(p).holds);
  const std::vector<std::size_t> caps(5, 100);
  std::mt19937_64 eng(8);
  for (int trial = 0; trial < 10; ++trial) {
    StrategyProfile s = StrategyProfile::all_zero(caps);
    for (auto& c : s.contributions) c = std::uniform_int_distribution<std::size_t>(0, 100)(eng);
    const auto dyn = best_response_dynamics(s, analytic(), p);
    EXPECT_TRUE(dyn.converged);
    EXPECT_EQ(dyn.trajectory.back().contributions, caps);
    EXPECT_TRUE(verify_nash(dyn.trajectory.back(), analytic(), p).is_nash);
  }
}

TEST(Dynamics, IterationCapReportsNotConverged) {
  auto g = analytic();
  g.max_iterations = 1;
  const auto dyn = best_response_dynamics(StrategyProfile::all_zero(std::vector<std::size_t>(4, 100)), g, params());
  EXPECT_FALSE(dyn.converged);
  EXPECT_EQ(dyn.trajectory.size(), 1u);
}

TEST(Nash, CornerProfiles) {
  const std::vector<std::size_t> caps{30, 60, 90};
  auto p = params();
  p.alpha = 0;
  EXPECT_TRUE(verify_nash(StrategyProfile::all_caps(caps), analytic(), p).is_nash);
  p = params();
  p.gamma_u = 0;
  const auto v = verify_nash(StrategyProfile::all_zero(caps), analytic(), p);
  EXPECT_TRUE(v.is_nash);
  EXPECT_EQ(v.worst_gain, 0.0);
  EXPECT_FALSE(verify_nash(StrategyProfile::all_caps(caps), analytic(), p).is_nash);
}

TEST(Nash, FreeRidingOnlyUnderSharedModel) {
  // marginal performance at the pooled total is below the marginal cost,
  // so a shared global model invites shrinking; ranking removes the motive
  const auto p = params(1e-4);
  const auto prof = StrategyProfile::all_caps(std::vector<std::size_t>(5, 100));
  const auto inc = verify_nash(prof, analytic(Aggregation::Incentive), p);
  const auto van = verify_nash(prof, analytic(Aggregation::Vanilla), p);
  EXPECT_TRUE(inc.is_nash);
  EXPECT_LE(inc.worst_gain, 1e-9);
  EXPECT_FALSE(van.is_nash);
  EXPECT_LT(van.responses[van.worst_violator].best, 100u);
}

TEST(Nash, PopulationModeAllCaps) {
  auto p = params(1e-5);
  p.population = {5, ParetoSizes{2, 60}};
  p.cap = 100;
  ASSERT_TRUE(check_eq_large(p).holds);
  GameConfig g;
  g.evaluation = EvaluationMode::Population;
  EXPECT_TRUE(verify_nash(StrategyProfile::all_caps(std::vector<std::size_t>(5, 100)), g, p).is_nash);
}

TEST(CompareMechanisms, CornerCases) {
  const std::vector<std::size_t> caps{30, 60, 90};
  auto p = params();
  p.alpha = 0;
  for (const auto& m : compare_mechanisms(StrategyProfile::all_caps(caps), analytic(), p)) {
    EXPECT_EQ(m.d_opt_incentive, caps[m.client]);
    EXPECT_EQ(m.d_opt_vanilla, caps[m.client]);
  }
  p = params();
  p.gamma_u = 0;
  for (const auto& m : compare_mechanisms(StrategyProfile::all_caps(caps), analytic(), p)) {
    EXPECT_EQ(m.d_opt_incentive, 0u);
    EXPECT_EQ(m.d_opt_vanilla, 0u);
    EXPECT_TRUE(m.holds);
  }
}

TEST(CompareMechanisms, IncentiveNeverBelowVanillaOnRandomDraws) {
  std::mt19937_64 eng(17);
  auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(eng); };
  for (int trial = 0; trial < 200; ++trial) {
    UtilityParams p;
    p.performance = {U(0.5, 2), U(0, 1) < 0.5 ? -0.5 : -1.0, 1};
    p.cost = {U(0, 1e-2), U(0, 1e-5)};
    p.gamma_u = U(0.5, 2);
    p.alpha = U(0.5, 2);
    const std::size_t n = 4;
    std::vector<std::size_t> caps;
    for (std::size_t i = 0; i < n; ++i) caps.push_back(std::uniform_int_distribution<std::size_t>(10, 200)(eng));
    StrategyProfile prof = StrategyProfile::all_zero(caps);
    for (std::size_t i = 0; i < n; ++i) prof.contributions[i] = std::uniform_int_distribution<std::size_t>(0, caps[i])(eng);
    auto g = analytic();
    g.grid_step = 2;
    for (const auto& m : compare_mechanisms(prof, g, p)) EXPECT_TRUE(m.holds) << trial;
  }
}

TEST(Dynamics, ConvergedMeansNash) {
  std::mt19937_64 eng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = params(std::uniform_real_distribution<double>(0, 2e-3)(eng));
    const std::vector<std::size_t> caps{40, 70, 100, 130};
    auto g = analytic(trial % 2 ? Aggregation::Vanilla : Aggregation::Incentive);
    const auto dyn = best_response_dynamics(StrategyProfile::all_zero(caps), g, p);
    if (dyn.converged) {
      EXPECT_TRUE(verify_nash(dyn.trajectory.back(), g, p).is_nash);
    }
  }
}

TEST(BestResponse, PermutationSymmetry) {
  const auto p = params(5e-4);
  const std::vector<std::size_t> caps{40, 70, 100}, contrib{10, 60, 35};
  const std::vector<std::size_t> perm{2, 0, 1};  // new id k holds old client perm[k]
  StrategyProfile a{contrib, caps}, b{{}, {}};
  for (auto k : perm) {
    b.contributions.push_back(contrib[k]);
    b.caps.push_back(caps[k]);
  }
  for (std::size_t k = 0; k < 3; ++k) {
    const auto rb = best_response(k, b, analytic(), p), ra = best_response(perm[k], a, analytic(), p);
    ASSERT_EQ(rb.curve.size(), ra.curve.size());
    // away from ties with an opponent, relabelling changes nothing
    for (std::size_t j = 0; j < ra.curve.size(); ++j) {
      const auto d = ra.curve[j].first;
      if (std::find(contrib.begin(), contrib.end(), d) != contrib.end()) continue;
      EXPECT_EQ(rb.curve[j], ra.curve[j]);
    }
  }
}

TEST(Empirical, AnalyticAndEmpiricalUtilitiesAgree) {
  const std::uint64_t seed = 11;
  const auto spec = presets::standard_task(seed);
  const auto task = generate_task(spec);
  auto setup = std::make_shared<EmpiricalSetup>(task.clients, task.validation, presets::standard_mechanism(seed),
                                                init_model(spec.feature_dim, spec.num_classes, seed));
  EXPECT_EQ(setup->caps(), spec.samples_per_client);
  EXPECT_EQ(setup->rounds(), 5u);
  UtilityParams u;
  u.gamma_u = 1;
  u.alpha = 1;
  u.cost = {1e-5, 0};  // on the scale of accuracy differences between clients
  u.population = {10, UniformSizes{500}};
  u.cap = 500;
  const auto prof = StrategyProfile::all_caps(spec.samples_per_client);
  GameConfig ga = analytic(), ge;
  ge.evaluation = EvaluationMode::Empirical;
  ge.empirical = setup;
  std::vector<double> a, e;
  for (std::size_t i = 0; i < prof.size(); ++i) {
    a.push_back(client_utility(i, prof, ga, u));
    e.push_back(client_utility(i, prof, ge, u));
  }
  EXPECT_GE(oracle::spearman(a, e), 0.8);
  EXPECT_NEAR(spearman(a, e), oracle::spearman(a, e), 1e-12);
}

TEST(Empirical, BestResponseOverCoarseGrid) {
  const std::uint64_t seed = 4;
  const std::vector<std::size_t> sizes{40, 80, 120};
  const auto spec = presets::standard_task(seed, sizes);
  const auto task = generate_task(spec);
  auto mech = presets::standard_mechanism(seed);
  mech.train.local_epochs = 2;
  auto setup = std::make_shared<EmpiricalSetup>(task.clients, task.validation, mech,
                                                init_model(spec.feature_dim, spec.num_classes, seed), 2);
  GameConfig g;
  g.evaluation = EvaluationMode::Empirical;
  g.empirical = setup;
  g.grid_step = 40;
  auto p = params();
  p.alpha = 0;
  const auto br = best_response(2, StrategyProfile::all_caps(sizes), g, p);
  EXPECT_EQ(br.curve.size(), 4u);
  for (const auto& [d, u] : br.curve) {
    EXPECT_GE(u, 0.0);
    EXPECT_LE(u, 1.0);
  }
  // memoised: same profile, same answer
  EXPECT_EQ(setup->accuracies(sizes, Aggregation::Incentive), setup->accuracies(sizes, Aggregation::Incentive));
}
