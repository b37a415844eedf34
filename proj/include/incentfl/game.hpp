#pragma once

// Strategic layer: each client picks how much data to contribute. Best
// responses are exhaustive over a contribution grid; dynamics iterate them
// round-robin to a fixed point.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "incentfl/learner.hpp"
#include "incentfl/mechanism.hpp"
#include "incentfl/types.hpp"
#include "incentfl/utility.hpp"

namespace incentfl {

/// Contributions and caps indexed by client id (0..n-1).
struct StrategyProfile {
  std::vector<std::size_t> contributions;
  std::vector<std::size_t> caps;

  std::size_t size() const noexcept { return caps.size(); }

  static StrategyProfile all_caps(std::vector<std::size_t> caps) {
    StrategyProfile p{caps, std::move(caps)};
    return p;
  }
  static StrategyProfile all_zero(std::vector<std::size_t> caps) {
    StrategyProfile p{std::vector<std::size_t>(caps.size(), 0), std::move(caps)};
    return p;
  }

  bool operator==(const StrategyProfile&) const = default;
};

inline void validate(const StrategyProfile& p) {
  if (p.contributions.size() != p.caps.size()) throw std::invalid_argument("profile: contributions/caps length mismatch");
  if (p.caps.empty()) throw std::invalid_argument("profile: no clients");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.contributions[i] > p.caps[i])
      throw std::invalid_argument("profile: client " + std::to_string(i) + " contributes above its cap");
}

/// Simulation backing for the empirical evaluation mode. Each client's pool
/// holds cap-many points; a contribution d uses the first d of them.
class EmpiricalSetup {
 public:
  EmpiricalSetup(std::vector<Dataset> pools, Dataset validation, MechanismConfig mechanism, ModelParams initial,
                 std::size_t rounds = 5)
      : pools_(std::move(pools)),
        validation_(std::move(validation)),
        mechanism_(std::move(mechanism)),
        initial_(std::move(initial)),
        rounds_(rounds) {}

  /// Final distributed-model validation accuracy of every client. Memoised by profile.
  std::vector<double> accuracies(const std::vector<std::size_t>& contributions, Aggregation mode) const {
    const auto key = std::make_pair(contributions, mode);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    MechanismConfig cfg = mechanism_;
    cfg.mode.kind = mode;
    const auto clients = make_clients(pools_, contributions);
    const auto result = run_training(clients, validation_, initial_, rounds_, cfg);
    std::vector<double> acc;
    for (const auto& e : result.rounds.back().entries) acc.push_back(e.acc_distributed);
    std::lock_guard lock(mutex_);
    cache_.emplace(key, acc);
    return acc;
  }

  std::vector<std::size_t> caps() const {
    std::vector<std::size_t> c;
    for (const auto& p : pools_) c.push_back(p.size());
    return c;
  }

  std::size_t rounds() const noexcept { return rounds_; }

 private:
  std::vector<Dataset> pools_;
  Dataset validation_;
  MechanismConfig mechanism_;
  ModelParams initial_;
  std::size_t rounds_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::vector<std::size_t>, Aggregation>, std::vector<double>> cache_;
};

enum class EvaluationMode {
  Analytic,    // power-law utility with the finite-population step D_others
  Population,  // power-law utility with the continuous population D_others(d)
  Empirical,   // short mechanism simulation; p_i = distributed-model accuracy
};

struct GameConfig {
  EvaluationMode evaluation = EvaluationMode::Analytic;
  Aggregation mechanism = Aggregation::Incentive;
  std::size_t grid_step = 1;
  std::size_t max_iterations = 100;
  double tolerance = 1e-9;
  std::uint64_t seed = 0;
  std::shared_ptr<const EmpiricalSetup> empirical;
};

inline void validate(const GameConfig& cfg) {
  if (cfg.grid_step < 1) throw std::invalid_argument("game: grid_step must be >= 1");
  if (cfg.max_iterations < 1) throw std::invalid_argument("game: max_iterations must be >= 1");
  if (cfg.evaluation == EvaluationMode::Empirical && !cfg.empirical)
    throw std::invalid_argument("game: empirical evaluation needs a simulation setup");
}

/// Data behind lower-ranked opponents when ranking follows (size, id) order.
inline double finite_d_others(std::size_t i, const std::vector<std::size_t>& contributions) {
  double total = 0.0;
  const auto key = std::make_pair(contributions[i], i);
  for (std::size_t j = 0; j < contributions.size(); ++j)
    if (j != i && std::make_pair(contributions[j], j) < key) total += static_cast<double>(contributions[j]);
  return total;
}

inline double opponents_total(std::size_t i, const std::vector<std::size_t>& contributions) {
  double total = 0.0;
  for (std::size_t j = 0; j < contributions.size(); ++j)
    if (j != i) total += static_cast<double>(contributions[j]);
  return total;
}

/// u_i under the profile. `params.cap` is ignored; caps come from the profile.
inline double client_utility(std::size_t i, const StrategyProfile& profile, const GameConfig& cfg,
                             const UtilityParams& params) {
  validate(profile);
  if (i >= profile.size()) throw std::invalid_argument("client_utility: no client " + std::to_string(i));
  const double d = static_cast<double>(profile.contributions[i]);
  const double c = params.alpha * cost(d, params.cost);
  switch (cfg.evaluation) {
    case EvaluationMode::Analytic: {
      const double D = cfg.mechanism == Aggregation::Incentive ? finite_d_others(i, profile.contributions)
                                                               : opponents_total(i, profile.contributions);
      return params.gamma_u * perf(d + D, params.performance) - c;
    }
    case EvaluationMode::Population: {
      const double D = cfg.mechanism == Aggregation::Incentive ? d_others(d, params.population)
                                                               : opponents_total(i, profile.contributions);
      return params.gamma_u * perf(d + D, params.performance) - c;
    }
    case EvaluationMode::Empirical: {
      if (!cfg.empirical) throw std::invalid_argument("client_utility: empirical mode without setup");
      const auto acc = cfg.empirical->accuracies(profile.contributions, cfg.mechanism);
      return params.gamma_u * acc[i] - c;
    }
  }
  return 0.0;
}

struct BestResponseResult {
  std::size_t responder = 0;
  std::size_t best = 0;
  double utility_at_best = 0.0;
  double gain = 0.0;  // over the current contribution
  std::vector<std::pair<std::size_t, double>> curve;
};

/// Candidate contributions {0, step, 2 step, ...} plus the cap itself.
inline std::vector<std::size_t> response_grid(std::size_t cap, std::size_t step) {
  std::vector<std::size_t> g;
  for (std::size_t d = 0; d <= cap; d += step) g.push_back(d);
  if (g.back() != cap) g.push_back(cap);
  return g;
}

inline BestResponseResult best_response(std::size_t i, const StrategyProfile& profile, const GameConfig& cfg,
                                        const UtilityParams& params) {
  validate(profile);
  validate(cfg);
  BestResponseResult r;
  r.responder = i;
  StrategyProfile trial = profile;
  bool first = true;
  for (std::size_t d : response_grid(profile.caps.at(i), cfg.grid_step)) {
    trial.contributions[i] = d;
    const double u = client_utility(i, trial, cfg, params);
    r.curve.emplace_back(d, u);
    if (first || u > r.utility_at_best) {
      r.best = d;
      r.utility_at_best = u;
      first = false;
    }
  }
  r.gain = r.utility_at_best - client_utility(i, profile, cfg, params);
  return r;
}

struct DynamicsResult {
  StrategyProfile initial;
  std::vector<StrategyProfile> trajectory;  // profile after each pass
  std::vector<std::size_t> changes;         // contributions changed in each pass
  bool converged = false;
};

/// Round-robin best responses in ascending id. A client moves only when the
/// move gains more than the tolerance; stops after a pass with no moves.
inline DynamicsResult best_response_dynamics(const StrategyProfile& initial, const GameConfig& cfg,
                                             const UtilityParams& params) {
  validate(initial);
  validate(cfg);
  DynamicsResult out;
  out.initial = initial;
  StrategyProfile cur = initial;
  for (std::size_t pass = 0; pass < cfg.max_iterations; ++pass) {
    std::size_t changed = 0;
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const auto br = best_response(i, cur, cfg, params);
      if (br.gain > cfg.tolerance && br.best != cur.contributions[i]) {
        cur.contributions[i] = br.best;
        ++changed;
      }
    }
    out.trajectory.push_back(cur);
    out.changes.push_back(changed);
    if (changed == 0) {
      out.converged = true;
      break;
    }
  }
  return out;
}

struct NashVerdict {
  bool is_nash = true;
  std::size_t worst_violator = 0;
  double worst_gain = 0.0;
  std::vector<BestResponseResult> responses;
};

inline NashVerdict verify_nash(const StrategyProfile& profile, const GameConfig& cfg, const UtilityParams& params) {
  NashVerdict v;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    auto br = best_response(i, profile, cfg, params);
    if (i == 0 || br.gain > v.worst_gain) {
      v.worst_gain = br.gain;
      v.worst_violator = i;
    }
    v.responses.push_back(std::move(br));
  }
  v.is_nash = v.worst_gain <= cfg.tolerance;
  return v;
}

struct MechanismComparison {
  std::size_t client = 0;
  std::size_t d_opt_incentive = 0;
  std::size_t d_opt_vanilla = 0;
  bool holds = true;  // d_opt_incentive >= d_opt_vanilla - grid_step
};

/// Best responses under both mechanisms against the same opponent profile.
inline std::vector<MechanismComparison> compare_mechanisms(const StrategyProfile& profile, const GameConfig& cfg,
                                                           const UtilityParams& params) {
  GameConfig inc = cfg, van = cfg;
  inc.mechanism = Aggregation::Incentive;
  van.mechanism = Aggregation::Vanilla;
  std::vector<MechanismComparison> out;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    MechanismComparison m;
    m.client = i;
    m.d_opt_incentive = best_response(i, profile, inc, params).best;
    m.d_opt_vanilla = best_response(i, profile, van, params).best;
    m.holds = m.d_opt_incentive + cfg.grid_step >= m.d_opt_vanilla;
    out.push_back(m);
  }
  return out;
}

}  // namespace incentfl
