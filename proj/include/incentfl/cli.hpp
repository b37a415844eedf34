#pragma once

// Batch drivers behind the `incentfl` executable. Each command reads an
// ExperimentConfig and writes its outputs into one directory.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "incentfl/checks.hpp"
#include "incentfl/config.hpp"
#include "incentfl/game.hpp"
#include "incentfl/learner.hpp"
#include "incentfl/mechanism.hpp"
#include "incentfl/stats.hpp"
#include "incentfl/synthdata.hpp"
#include "incentfl/utility.hpp"

namespace incentfl {

using Json = nlohmann::ordered_json;

struct RunOptions {
  std::optional<std::string> out_dir;  // overrides output.dir
  std::optional<std::uint64_t> seed;   // overrides seed
  std::size_t threads = 1;
};

struct RunReport {
  std::filesystem::path out_dir;
  std::vector<std::filesystem::path> files;
};

struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline ExperimentConfig apply_overrides(ExperimentConfig c, const RunOptions& opt) {
  if (opt.seed) {
    c.seed = *opt.seed;
    c.train.seed = *opt.seed;
  }
  if (opt.out_dir) c.output_dir = *opt.out_dir;
  return c;
}

namespace detail {

inline Json config_json(const ExperimentConfig& c) {
  Json j = Json::object();
  for (const auto& [k, v] : echo_config(c)) j[k] = v;
  return j;
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) throw RunError("cannot create output directory '" + dir + "'");
  return p;
}

inline void write_file(RunReport& report, const std::string& name, const std::string& content) {
  const auto path = report.out_dir / name;
  std::ofstream out(path, std::ios::binary);
  out << content;
  out.close();
  if (!out) throw RunError("cannot write '" + path.string() + "'");
  report.files.push_back(path);
}

inline void write_timings(RunReport& report, std::chrono::steady_clock::time_point start) {
  const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
  Json j;
  j["elapsed_seconds"] = dt.count();
  write_file(report, "timings.json", j.dump(2) + "\n");
}

template <class T>
Json to_json_list(const std::vector<T>& v) {
  Json j = Json::array();
  for (const auto& x : v) j.push_back(x);
  return j;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// simulate

inline RunReport run_simulate(const ExperimentConfig& cfg, std::size_t threads) {
  const auto start = std::chrono::steady_clock::now();
  RunReport report{detail::prepare_dir(cfg.output_dir), {}};

  const auto sizes = client_sizes(cfg);
  const auto spec = task_spec(cfg, sizes);
  const auto task = generate_task(spec);
  const auto clients = make_clients(task.clients, sizes);
  const auto mech = mechanism_config(cfg, threads);
  const auto result =
      run_training(clients, task.validation, init_model(spec.feature_dim, spec.num_classes, cfg.seed),
                   cfg.mechanism.rounds, mech);

  std::ostringstream csv;
  write_rounds_csv(csv, result.rounds);
  detail::write_file(report, "rounds.csv", csv.str());

  Json summary;
  summary["command"] = "simulate";
  summary["config"] = detail::config_json(cfg);
  summary["rounds_csv"] = "rounds.csv";
  Json finals = Json::array();
  std::vector<double> d, acc;
  for (const auto& e : result.rounds.back().entries) {
    Json c;
    c["client_id"] = e.client_id;
    c["d_i"] = e.d_i;
    c["acc_uploaded"] = e.acc_uploaded;
    c["position"] = e.position;
    c["acc_distributed"] = e.acc_distributed;
    finals.push_back(c);
    d.push_back(static_cast<double>(e.d_i));
    acc.push_back(e.acc_distributed);
  }
  summary["final"] = finals;
  summary["spearman_d_vs_accuracy"] = spearman(d, acc);

  if (cfg.mechanism.mode == Aggregation::Incentive) {
    const auto audit = audit_nestedness(result.rounds);
    summary["nestedness"] = {{"rounds_checked", audit.rounds_checked},
                             {"inclusion_violations", audit.inclusion_violations},
                             {"monotonicity_violations", audit.monotonicity_violations},
                             {"ok", audit.ok()}};
  } else {
    bool shared = true;
    for (const auto& r : result.rounds)
      for (const auto& e : r.entries) shared = shared && e.acc_distributed == r.entries.front().acc_distributed;
    summary["shared_model_every_round"] = shared;
  }
  detail::write_file(report, "summary.json", summary.dump(2) + "\n");
  detail::write_timings(report, start);
  return report;
}

// ---------------------------------------------------------------------------
// analyze

inline RunReport run_analyze(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  RunReport report{detail::prepare_dir(cfg.output_dir), {}};
  const UtilityParams& p = cfg.utility;

  Json a;
  a["command"] = "analyze";
  a["config"] = detail::config_json(cfg);

  Json eq;
  try {
    const auto s = check_eq_large(p);
    eq = {{"degenerate", false}, {"holds", s.holds}, {"lhs", s.lhs}, {"rhs", s.rhs}};
  } catch (const std::domain_error& e) {
    eq = {{"degenerate", true}, {"holds", false}, {"reason", e.what()}};
  }
  a["eq_large"] = eq;

  const auto conc = check_concavity(p, Aggregation::Incentive);
  a["concavity"] = {{"verdict", conc.concave ? "concave" : "not concave"},
                    {"concave", conc.concave},
                    {"max_second_deriv", conc.max_second_deriv}};

  const double d_opt = optimal_contribution(p, Aggregation::Incentive);
  double d_opt_vanilla = 0.0, d_fixed = 0.0;
  if (cfg.d_fixed) {
    d_fixed = *cfg.d_fixed;
    d_opt_vanilla = optimal_contribution(p, Aggregation::Vanilla, d_fixed);
  } else {
    const auto v = vanilla_optimum(p);
    d_opt_vanilla = v.d_opt;
    d_fixed = v.d_fixed;
  }
  const double res = optimizer_resolution(p);
  a["cap"] = p.cap;
  a["resolution"] = res;
  a["d_opt_incentive"] = d_opt;
  a["d_opt_vanilla"] = d_opt_vanilla;
  a["d_fixed"] = d_fixed;
  a["d_fixed_source"] = cfg.d_fixed ? "config" : "self_consistent";
  a["incentive_ge_vanilla"] = d_opt >= d_opt_vanilla - res;
  a["d_opt_incentive_at_cap"] = std::abs(d_opt - p.cap) <= res;
  a["utility_curve_csv"] = "utility_curve.csv";

  std::ostringstream csv;
  write_utility_curve(csv, p, d_fixed, cfg.curve_points, format_double);
  detail::write_file(report, "utility_curve.csv", csv.str());
  detail::write_file(report, "analysis.json", a.dump(2) + "\n");
  detail::write_timings(report, start);
  return report;
}

// ---------------------------------------------------------------------------
// game

inline std::vector<std::size_t> game_caps(const ExperimentConfig& cfg) {
  return cfg.game.caps.empty() ? client_sizes(cfg) : cfg.game.caps;
}

inline StrategyProfile game_start(const ExperimentConfig& cfg, const std::vector<std::size_t>& caps) {
  switch (cfg.game.start) {
    case StartKind::Caps: return StrategyProfile::all_caps(caps);
    case StartKind::Zero: return StrategyProfile::all_zero(caps);
    case StartKind::Random: {
      Engine eng = make_engine(derive_seed(cfg.seed, 0x57a7));
      StrategyProfile p = StrategyProfile::all_zero(caps);
      for (std::size_t i = 0; i < caps.size(); ++i)
        p.contributions[i] = std::uniform_int_distribution<std::size_t>(0, caps[i])(eng);
      return p;
    }
    case StartKind::Explicit: {
      if (cfg.game.start_profile.size() != caps.size())
        throw ConfigError("config key 'game.start': profile has " + std::to_string(cfg.game.start_profile.size()) +
                          " entries for " + std::to_string(caps.size()) + " clients");
      StrategyProfile p{cfg.game.start_profile, caps};
      try {
        validate(p);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'game.start': ") + e.what());
      }
      return p;
    }
  }
  return StrategyProfile::all_caps(caps);
}

inline Json profile_json(const StrategyProfile& p) { return detail::to_json_list(p.contributions); }

inline RunReport run_game(const ExperimentConfig& cfg, std::size_t threads) {
  const auto start = std::chrono::steady_clock::now();
  RunReport report{detail::prepare_dir(cfg.output_dir), {}};

  const auto caps = game_caps(cfg);
  GameConfig g;
  g.evaluation = cfg.game.evaluation;
  g.mechanism = cfg.mechanism.mode;
  g.grid_step = cfg.game.grid_step;
  g.max_iterations = cfg.game.max_iterations;
  g.tolerance = cfg.game.tolerance;
  g.seed = cfg.seed;
  if (g.evaluation == EvaluationMode::Empirical) {
    const auto spec = task_spec(cfg, caps);
    auto task = generate_task(spec);
    g.empirical = std::make_shared<EmpiricalSetup>(std::move(task.clients), std::move(task.validation),
                                                   mechanism_config(cfg, threads),
                                                   init_model(spec.feature_dim, spec.num_classes, cfg.seed),
                                                   cfg.game.rounds);
  }

  const auto initial = game_start(cfg, caps);
  const auto dyn = best_response_dynamics(initial, g, cfg.utility);
  const StrategyProfile& final_profile = dyn.trajectory.empty() ? initial : dyn.trajectory.back();
  const auto nash = verify_nash(final_profile, g, cfg.utility);
  const auto table = compare_mechanisms(final_profile, g, cfg.utility);

  Json j;
  j["command"] = "game";
  j["config"] = detail::config_json(cfg);
  j["evaluation"] = to_string(g.evaluation);
  j["mechanism"] = to_string(g.mechanism);
  j["caps"] = detail::to_json_list(caps);
  j["initial"] = profile_json(initial);
  Json traj = Json::array();
  for (std::size_t k = 0; k < dyn.trajectory.size(); ++k)
    traj.push_back({{"pass", k + 1}, {"changes", dyn.changes[k]}, {"contributions", profile_json(dyn.trajectory[k])}});
  j["trajectory"] = traj;
  j["converged"] = dyn.converged;
  j["passes"] = dyn.trajectory.size();
  j["final"] = profile_json(final_profile);
  j["nash"] = {{"is_nash", nash.is_nash},
               {"worst_violator", nash.worst_violator},
               {"worst_gain", nash.worst_gain},
               {"tolerance", g.tolerance}};
  Json curves = Json::array();
  for (const auto& r : nash.responses) {
    Json pts = Json::array();
    for (const auto& [d, u] : r.curve) pts.push_back(Json::array({d, u}));
    curves.push_back({{"client", r.responder},
                      {"best", r.best},
                      {"utility_at_best", r.utility_at_best},
                      {"gain", r.gain},
                      {"curve", pts}});
  }
  j["response_curves"] = curves;
  Json t1 = Json::array();
  bool all = true;
  for (const auto& m : table) {
    t1.push_back({{"client", m.client},
                  {"d_opt_incentive", m.d_opt_incentive},
                  {"d_opt_vanilla", m.d_opt_vanilla},
                  {"holds", m.holds}});
    all = all && m.holds;
  }
  j["comparison"] = {{"all_hold", all}, {"clients", t1}};

  detail::write_file(report, "game.json", j.dump(2) + "\n");
  detail::write_timings(report, start);
  return report;
}

// ---------------------------------------------------------------------------
// verify

/// Runs the built-in property suite; true when every check passed.
inline bool run_verify(std::ostream& os, const VerifyOptions& opt) {
  return print_checks(os, run_verify_suite(opt));
}

}  // namespace incentfl
