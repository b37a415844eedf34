#pragma once

// Built-in property suite behind `incentfl verify`: randomized property
// sweeps, derivative and gradient checks against finite differences, and a
// nestedness audit of a full incentive-mode run.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "incentfl/game.hpp"
#include "incentfl/learner.hpp"
#include "incentfl/mechanism.hpp"
#include "incentfl/presets.hpp"
#include "incentfl/rng.hpp"
#include "incentfl/utility.hpp"

namespace incentfl {

// ---------------------------------------------------------------------------
// Randomized parameterizations

/// theta in [0.5, 2], beta_g in {-0.5, -1}, a1 in [0, 1e-2], a2 in [0, 1e-5],
/// gamma_u and alpha in [0.5, 2]. Even indices draw a Uniform population,
/// odd indices a Pareto one. Caps are whole numbers.
inline UtilityParams random_admissible_params(Engine& eng, std::size_t index) {
  auto U = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); };
  UtilityParams p;
  p.performance.theta = U(0.5, 2.0);
  p.performance.beta_g = U(0.0, 1.0) < 0.5 ? -0.5 : -1.0;
  p.performance.gamma_f = 1.0;
  p.cost.linear = U(0.0, 1e-2);
  p.cost.quadratic = U(0.0, 1e-5);
  p.gamma_u = U(0.5, 2.0);
  p.alpha = U(0.5, 2.0);
  p.population.n = std::uniform_int_distribution<std::size_t>(5, 50)(eng);
  if (index % 2 == 0) {
    const double d_max = std::round(U(100.0, 1000.0));
    p.population.dist = UniformSizes{d_max};
    p.cap = std::max(1.0, std::round(d_max * U(0.3, 1.0)));
  } else {
    const double x_m = std::round(U(10.0, 60.0));
    p.population.dist = ParetoSizes{U(1.5, 3.0), x_m};
    p.cap = std::round(x_m * U(2.0, 20.0));
  }
  return p;
}

inline std::vector<UtilityParams> parameter_sweep(std::uint64_t seed, std::size_t count) {
  Engine eng = make_engine(derive_seed(seed, 0x5eef));
  std::vector<UtilityParams> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_admissible_params(eng, i));
  return out;
}

/// Pareto populations with caps in [1.2, 3] x_m and cheap data
/// (a1 <= 1e-4, a2 <= 1e-7), where the slope condition at the cap often holds.
inline std::vector<UtilityParams> full_contribution_sweep(std::uint64_t seed, std::size_t count) {
  Engine eng = make_engine(derive_seed(seed, 0xf011));
  auto U = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(eng); };
  std::vector<UtilityParams> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto p = random_admissible_params(eng, 1);
    p.cost.linear = U(0.0, 1e-4);
    p.cost.quadratic = U(0.0, 1e-7);
    p.cap = std::round(std::get<ParetoSizes>(p.population.dist).scale * U(1.2, 3.0));
    out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mechanism property checks

struct MonotoneIncentiveCase {
  double d_opt_incentive = 0.0;
  double d_opt_vanilla = 0.0;
  double d_fixed = 0.0;
  double resolution = 0.0;
  bool holds = false;
};

/// Incentive optimum against the self-consistent vanilla optimum.
inline MonotoneIncentiveCase check_monotone_incentive(const UtilityParams& p) {
  MonotoneIncentiveCase c;
  c.resolution = optimizer_resolution(p);
  c.d_opt_incentive = optimal_contribution(p, Aggregation::Incentive);
  const auto v = vanilla_optimum(p);
  c.d_opt_vanilla = v.d_opt;
  c.d_fixed = v.d_fixed;
  c.holds = c.d_opt_incentive >= c.d_opt_vanilla - c.resolution;
  return c;
}

struct FullContributionCase {
  bool applicable = false;  // slope condition and grid concavity both hold
  bool slope_degenerate = false;
  LargeDerivativeCheck slope;
  ConcavityCheck concavity;
  double d_opt_incentive = 0.0;
  bool optimum_at_cap = false;
  NashVerdict nash;
  bool holds = true;  // vacuous unless applicable
};

/// When the slope condition and concavity hold, the incentive optimum must sit
/// at the cap and the all-caps profile of n identical clients facing the
/// population D_others(d) must be a Nash equilibrium.
inline FullContributionCase check_full_contribution(const UtilityParams& p, double nash_tolerance = 1e-9) {
  FullContributionCase c;
  try {
    c.slope = check_eq_large(p);
  } catch (const std::domain_error&) {
    c.slope_degenerate = true;
    return c;
  }
  c.concavity = check_concavity(p, Aggregation::Incentive);
  c.applicable = c.slope.holds && c.concavity.concave;
  if (!c.applicable) return c;

  c.d_opt_incentive = optimal_contribution(p, Aggregation::Incentive);
  c.optimum_at_cap = std::abs(c.d_opt_incentive - p.cap) <= optimizer_resolution(p);

  GameConfig g;
  g.evaluation = EvaluationMode::Population;
  g.mechanism = Aggregation::Incentive;
  g.grid_step = 1;
  g.tolerance = nash_tolerance;
  const auto cap = static_cast<std::size_t>(std::llround(p.cap));
  c.nash = verify_nash(StrategyProfile::all_caps(std::vector<std::size_t>(p.population.n, cap)), g, p);
  c.holds = c.optimum_at_cap && c.nash.is_nash;
  return c;
}

// ---------------------------------------------------------------------------
// Finite-difference oracles

using DerivativeFn = std::function<double(double, const UtilityParams&, Aggregation, double)>;

struct DerivativeOracleReport {
  std::size_t points = 0;
  double max_rel_first = 0.0;
  double max_rel_second = 0.0;
};

/// Compares analytic first/second derivatives of the incentive utility with
/// Richardson-extrapolated central differences at random interior points.
/// Stencils never straddle a kink of D_others or the clamp of p. Errors are relative to the magnitude of
/// the chain-rule terms, so a derivative that cancels to ~0 is still judged
/// on its components.
inline DerivativeOracleReport derivative_oracle(const UtilityParams& p, Engine& eng, std::size_t points,
                                                const DerivativeFn& first = utility_deriv,
                                                const DerivativeFn& second = utility_second_deriv) {
  DerivativeOracleReport r;
  std::uniform_real_distribution<double> pick(0.02 * p.cap, 0.98 * p.cap);
  auto u = [&](double d) { return utility_incentive(d, p); };
  std::size_t attempts = 0;
  while (r.points < points && attempts < points * 100) {
    ++attempts;
    const double d = pick(eng);
    const double h1 = 1e-4 * d, h2 = 1e-3 * d;
    const double lo = d - 2.0 * h2, hi = d + 2.0 * h2;
    if (const auto* pa = std::get_if<ParetoSizes>(&p.population.dist); pa && lo <= pa->scale && pa->scale <= hi) continue;
    if (const auto* un = std::get_if<UniformSizes>(&p.population.dist); un && lo <= un->d_max && un->d_max <= hi) continue;
    if (perf(lo + d_others(lo, p.population), p.performance) <= 0.0) continue;

    const double D = d_others(d, p.population);
    const auto dD = d_others_deriv(d, p.population);
    const double pp = perf_deriv(d + D, p.performance), ppp = perf_second_deriv(d + D, p.performance);

    auto c1 = [&](double h) { return (u(d + h) - u(d - h)) / (2.0 * h); };
    auto c2 = [&](double h) { return (u(d + h) - 2.0 * u(d) + u(d - h)) / (h * h); };
    const double fd1 = (4.0 * c1(h1 / 2.0) - c1(h1)) / 3.0;
    const double scale1 = std::abs(p.gamma_u * pp * (1.0 + dD.first)) + std::abs(p.alpha * cost_deriv(d, p.cost));
    r.max_rel_first = std::max(r.max_rel_first, std::abs(first(d, p, Aggregation::Incentive, 0.0) - fd1) / scale1);

    const double fd2 = (4.0 * c2(h2 / 2.0) - c2(h2)) / 3.0;
    const double scale2 = std::abs(p.gamma_u * ppp * (1.0 + dD.first) * (1.0 + dD.first)) +
                          std::abs(p.gamma_u * pp * dD.second) + std::abs(p.alpha * cost_second_deriv(d, p.cost));
    r.max_rel_second =
        std::max(r.max_rel_second, std::abs(second(d, p, Aggregation::Incentive, 0.0) - fd2) / scale2);
    ++r.points;
  }
  return r;
}

/// Max absolute gap between the analytic cross-entropy gradient and central
/// differences (h = 1e-5) over `pairs` random model/batch pairs.
inline double gradient_oracle(std::uint64_t seed, std::size_t pairs) {
  Engine eng = make_engine(derive_seed(seed, 0x9ad));
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  std::normal_distribution<double> x(0.0, 1.0);
  double worst = 0.0;
  for (std::size_t k = 0; k < pairs; ++k) {
    const std::size_t F = std::uniform_int_distribution<std::size_t>(1, 6)(eng);
    const std::size_t C = std::uniform_int_distribution<std::size_t>(2, 4)(eng);
    const std::size_t B = std::uniform_int_distribution<std::size_t>(1, 20)(eng);
    ModelParams m(F, C);
    for (double& v : m.values) v = w(eng);
    Dataset batch{{}, C, F};
    for (std::size_t b = 0; b < B; ++b) {
      DataPoint p;
      p.label = std::uniform_int_distribution<std::size_t>(0, C - 1)(eng);
      for (std::size_t f = 0; f < F; ++f) p.features.push_back(x(eng));
      batch.points.push_back(std::move(p));
    }
    const auto analytic = loss_and_gradient(m, batch).gradient;
    const double h = 1e-5;
    for (std::size_t j = 0; j < m.size(); ++j) {
      ModelParams up = m, dn = m;
      up.values[j] += h;
      dn.values[j] -= h;
      const double fd = (loss_and_gradient(up, batch).loss - loss_and_gradient(dn, batch).loss) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - analytic[j]));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Suite

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 20240601;
  std::size_t sweep_size = 200;
  std::size_t derivative_points = 100;
  std::size_t gradient_pairs = 50;
  std::size_t threads = 1;
  DerivativeFn first = utility_deriv;
  DerivativeFn second = utility_second_deriv;
};

inline std::vector<CheckResult> run_verify_suite(const VerifyOptions& opt) {
  std::vector<CheckResult> out;

  {
    auto spec = presets::standard_task(opt.seed);
    const auto task = generate_task(spec);
    const auto clients = make_clients(task.clients, spec.samples_per_client);
    auto cfg = presets::standard_mechanism(opt.seed);
    cfg.threads = opt.threads;
    const auto res = run_training(clients, task.validation, init_model(spec.feature_dim, spec.num_classes, opt.seed),
                                  presets::kRounds, cfg);
    const auto audit = audit_nestedness(res.rounds);
    out.push_back({"nested_aggregation", audit.ok(),
                   std::to_string(audit.rounds_checked) + " rounds, " +
                       std::to_string(audit.inclusion_violations + audit.monotonicity_violations) + " violations"});
  }

  const auto sweep = parameter_sweep(opt.seed, opt.sweep_size);
  {
    std::size_t ok = 0;
    for (const auto& p : sweep) ok += check_monotone_incentive(p).holds ? 1 : 0;
    out.push_back({"incentive_vs_vanilla", ok == sweep.size(),
                   std::to_string(ok) + "/" + std::to_string(sweep.size()) + " cases d_opt >= d_opt* - step"});
  }
  {
    std::size_t applicable = 0, ok = 0;
    double worst_gain = 0.0;
    auto cases = sweep;
    for (auto& p : full_contribution_sweep(opt.seed, opt.sweep_size)) cases.push_back(std::move(p));
    for (const auto& p : cases) {
      const auto c = check_full_contribution(p);
      if (!c.applicable) continue;
      ++applicable;
      ok += c.holds ? 1 : 0;
      worst_gain = std::max(worst_gain, c.nash.worst_gain);
    }
    out.push_back({"full_contribution_nash", ok == applicable,
                   std::to_string(ok) + "/" + std::to_string(applicable) +
                       " applicable cases at cap and Nash, max deviation gain " + format_double(worst_gain)});
  }
  {
    Engine eng = make_engine(derive_seed(opt.seed, 0xde51));
    double worst1 = 0.0, worst2 = 0.0;
    std::size_t points = 0;
    for (const auto& p : sweep) {
      const auto r = derivative_oracle(p, eng, opt.derivative_points, opt.first, opt.second);
      worst1 = std::max(worst1, r.max_rel_first);
      worst2 = std::max(worst2, r.max_rel_second);
      points += r.points;
    }
    out.push_back({"utility_derivatives", worst1 < 1e-5 && worst2 < 1e-3,
                   std::to_string(points) + " points, max rel err first " + format_double(worst1) + ", second " +
                       format_double(worst2)});
  }
  {
    const double worst = gradient_oracle(opt.seed, opt.gradient_pairs);
    out.push_back({"learner_gradient", worst < 1e-4,
                   std::to_string(opt.gradient_pairs) + " pairs, max abs err " + format_double(worst)});
  }
  return out;
}

inline bool print_checks(std::ostream& os, const std::vector<CheckResult>& results) {
  bool all = true;
  for (const auto& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    all = all && r.passed;
  }
  return all;
}

}  // namespace incentfl
