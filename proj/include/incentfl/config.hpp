#pragma once

// Experiment configuration: flat `key=value` text with dotted section
// prefixes, '#' comments. Only `seed` is required.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "incentfl/game.hpp"
#include "incentfl/mechanism.hpp"
#include "incentfl/presets.hpp"
#include "incentfl/synthdata.hpp"
#include "incentfl/utility.hpp"

namespace incentfl {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class StartKind { Caps, Zero, Random, Explicit };

struct TaskConfig {
  std::size_t num_classes = presets::kNumClasses;
  std::size_t feature_dim = presets::kFeatureDim;
  double class_separation = presets::kSeparation;
  std::size_t validation_size = presets::kValidationSize;
  std::vector<std::size_t> sizes = presets::standard_sizes();
  std::optional<SizeDistribution> size_dist;  // when set, sizes are drawn
  std::size_t num_clients = 10;

  bool operator==(const TaskConfig&) const = default;
};

struct MechanismSection {
  Aggregation mode = Aggregation::Incentive;
  double participation = 1.0;
  std::size_t rounds = presets::kRounds;
  RankMetric rank_metric = RankMetric::Accuracy;
  bool vanilla_weighted = false;

  bool operator==(const MechanismSection&) const = default;
};

struct GameSection {
  EvaluationMode evaluation = EvaluationMode::Analytic;
  std::size_t grid_step = 1;
  std::size_t max_iterations = 100;
  double tolerance = 1e-9;
  StartKind start = StartKind::Caps;
  std::vector<std::size_t> start_profile;
  std::vector<std::size_t> caps;  // empty: task sizes
  std::size_t rounds = 5;         // empirical evaluation

  bool operator==(const GameSection&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  TaskConfig task;
  MechanismSection mechanism;
  TrainConfig train = presets::standard_train(0);
  UtilityParams utility;
  std::optional<double> d_fixed;
  std::size_t curve_points = 200;
  GameSection game;
  std::string output_dir = "out";

  /// Everything except where results are written.
  bool same_experiment(const ExperimentConfig& o) const {
    ExperimentConfig a = *this;
    a.output_dir = o.output_dir;
    return a == o;
  }
  bool operator==(const ExperimentConfig&) const = default;
};

inline ExperimentConfig default_config() {
  ExperimentConfig c;
  c.utility.gamma_u = 1.0;
  c.utility.alpha = 1.0;
  c.utility.cost = CostModel{1e-4, 0.0};
  c.utility.population = PopulationModel{10, ParetoSizes{2.0, 50.0}};
  c.utility.cap = 500.0;
  return c;
}

// ---------------------------------------------------------------------------
// Value codecs

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] inline void bad(const std::string& key, const std::string& what) {
  throw ConfigError("config key '" + key + "': " + what);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) bad(key, "expected a number, got '" + v + "'");
  return out;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) bad(key, "expected a non-negative integer, got '" + v + "'");
  return out;
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, "expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  if (!v.empty() && v.back() == sep) out.emplace_back();
  return out;
}

inline std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  for (const auto& s : split(v, ',')) out.push_back(to_size(key, s));
  return out;
}

inline std::vector<double> to_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (trim(v).empty()) return out;
  for (const auto& s : split(v, ',')) out.push_back(to_double(key, s));
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& xs, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += f(xs[i]);
  }
  return out;
}

inline std::string fmt_size(std::size_t v) { return std::to_string(v); }

}  // namespace detail

/// `uniform:<d_max>`, `pareto:<a>,<x_m>`, `exponential:<rate>`, `explicit:<s1>,<s2>,...`
inline SizeDistribution parse_size_distribution(const std::string& key, const std::string& v) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) detail::bad(key, "expected kind:params, got '" + v + "'");
  const std::string kind = detail::trim(v.substr(0, colon));
  const auto args = detail::to_double_list(key, v.substr(colon + 1));
  SizeDistribution d;
  if (kind == "uniform" && args.size() == 1) {
    d = UniformSizes{args[0]};
  } else if (kind == "pareto" && args.size() == 2) {
    d = ParetoSizes{args[0], args[1]};
  } else if (kind == "exponential" && args.size() == 1) {
    d = ExponentialSizes{args[0]};
  } else if (kind == "explicit") {
    d = ExplicitSizes{args};
  } else {
    detail::bad(key, "unknown distribution '" + v + "'");
  }
  try {
    validate(d);
  } catch (const std::invalid_argument& e) {
    detail::bad(key, e.what());
  }
  return d;
}

inline std::string format_size_distribution(const SizeDistribution& d) {
  struct F {
    std::string operator()(const UniformSizes& u) const { return "uniform:" + format_double(u.d_max); }
    std::string operator()(const ParetoSizes& p) const {
      return "pareto:" + format_double(p.shape) + "," + format_double(p.scale);
    }
    std::string operator()(const ExponentialSizes& e) const { return "exponential:" + format_double(e.rate); }
    std::string operator()(const ExplicitSizes& e) const {
      return "explicit:" + detail::join(e.sizes, [](double x) { return format_double(x); });
    }
  };
  return std::visit(F{}, d);
}

inline const char* to_string(Aggregation a) { return a == Aggregation::Incentive ? "incentive" : "vanilla"; }
inline const char* to_string(RankMetric m) { return m == RankMetric::Accuracy ? "accuracy" : "loss"; }
inline const char* to_string(EvaluationMode m) {
  switch (m) {
    case EvaluationMode::Analytic: return "analytic";
    case EvaluationMode::Population: return "population";
    case EvaluationMode::Empirical: return "empirical";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parsing

using ConfigMap = std::map<std::string, std::string>;

/// Reads `key=value` lines. Blank lines and '#' comments are skipped;
/// duplicate keys are an error.
inline ConfigMap read_config_map(std::istream& is) {
  ConfigMap m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    const std::string key = detail::trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (!m.emplace(key, detail::trim(t.substr(eq + 1))).second) detail::bad(key, "given more than once");
  }
  return m;
}

inline ExperimentConfig parse_config(const ConfigMap& m) {
  using namespace detail;
  ExperimentConfig c = default_config();
  if (!m.count("seed")) throw ConfigError("config: missing required key 'seed'");

  for (const auto& [k, v] : m) {
    if (k == "seed") c.seed = to_u64(k, v);
    else if (k == "task.num_classes") c.task.num_classes = to_size(k, v);
    else if (k == "task.feature_dim") c.task.feature_dim = to_size(k, v);
    else if (k == "task.class_separation") c.task.class_separation = to_double(k, v);
    else if (k == "task.validation_size") c.task.validation_size = to_size(k, v);
    else if (k == "task.sizes") c.task.sizes = to_size_list(k, v);
    else if (k == "task.size_dist") c.task.size_dist = parse_size_distribution(k, v);
    else if (k == "task.num_clients") c.task.num_clients = to_size(k, v);
    else if (k == "mechanism.mode") {
      if (v == "incentive") c.mechanism.mode = Aggregation::Incentive;
      else if (v == "vanilla") c.mechanism.mode = Aggregation::Vanilla;
      else bad(k, "expected incentive or vanilla, got '" + v + "'");
    } else if (k == "mechanism.participation") c.mechanism.participation = to_double(k, v);
    else if (k == "mechanism.rounds") c.mechanism.rounds = to_size(k, v);
    else if (k == "mechanism.rank_metric") {
      if (v == "accuracy") c.mechanism.rank_metric = RankMetric::Accuracy;
      else if (v == "loss") c.mechanism.rank_metric = RankMetric::Loss;
      else bad(k, "expected accuracy or loss, got '" + v + "'");
    } else if (k == "mechanism.vanilla_weighted") c.mechanism.vanilla_weighted = to_bool(k, v);
    else if (k == "train.learning_rate") c.train.learning_rate = to_double(k, v);
    else if (k == "train.local_epochs") c.train.local_epochs = to_size(k, v);
    else if (k == "train.batch_size") c.train.batch_size = to_size(k, v);
    else if (k == "utility.gamma_u") c.utility.gamma_u = to_double(k, v);
    else if (k == "utility.alpha") c.utility.alpha = to_double(k, v);
    else if (k == "utility.theta") c.utility.performance.theta = to_double(k, v);
    else if (k == "utility.beta_g") c.utility.performance.beta_g = to_double(k, v);
    else if (k == "utility.gamma_f") c.utility.performance.gamma_f = to_double(k, v);
    else if (k == "utility.cost_linear") c.utility.cost.linear = to_double(k, v);
    else if (k == "utility.cost_quadratic") c.utility.cost.quadratic = to_double(k, v);
    else if (k == "utility.cap") c.utility.cap = to_double(k, v);
    else if (k == "utility.population.n") c.utility.population.n = to_size(k, v);
    else if (k == "utility.population.dist") c.utility.population.dist = parse_size_distribution(k, v);
    else if (k == "utility.d_fixed") c.d_fixed = to_double(k, v);
    else if (k == "utility.curve_points") c.curve_points = to_size(k, v);
    else if (k == "game.evaluation") {
      if (v == "analytic") c.game.evaluation = EvaluationMode::Analytic;
      else if (v == "population") c.game.evaluation = EvaluationMode::Population;
      else if (v == "empirical") c.game.evaluation = EvaluationMode::Empirical;
      else bad(k, "expected analytic, population or empirical, got '" + v + "'");
    } else if (k == "game.grid_step") c.game.grid_step = to_size(k, v);
    else if (k == "game.max_iterations") c.game.max_iterations = to_size(k, v);
    else if (k == "game.tolerance") c.game.tolerance = to_double(k, v);
    else if (k == "game.start") {
      if (v == "caps") c.game.start = StartKind::Caps;
      else if (v == "zero") c.game.start = StartKind::Zero;
      else if (v == "random") c.game.start = StartKind::Random;
      else {
        c.game.start = StartKind::Explicit;
        c.game.start_profile = to_size_list(k, v);
      }
    } else if (k == "game.caps") c.game.caps = to_size_list(k, v);
    else if (k == "game.rounds") c.game.rounds = to_size(k, v);
    else if (k == "output.dir") c.output_dir = v;
    else bad(k, "unknown key");
  }
  c.train.seed = c.seed;

  auto check = [](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const std::invalid_argument& e) {
      bad(key, e.what());
    }
  };
  if (c.task.num_classes < 2) bad("task.num_classes", "must be >= 2");
  if (c.task.feature_dim < 1) bad("task.feature_dim", "must be >= 1");
  if (c.task.validation_size < 1) bad("task.validation_size", "must be >= 1");
  if (!(c.task.class_separation >= 0.0)) bad("task.class_separation", "must be >= 0");
  if (c.task.size_dist && c.task.num_clients < 1) bad("task.num_clients", "must be >= 1");
  if (!c.task.size_dist && c.task.sizes.empty()) bad("task.sizes", "needs at least one client");
  if (!(c.mechanism.participation > 0.0 && c.mechanism.participation <= 1.0))
    bad("mechanism.participation", "must lie in (0, 1]");
  if (c.mechanism.rounds < 1) bad("mechanism.rounds", "must be >= 1");
  if (!(c.train.learning_rate > 0.0)) bad("train.learning_rate", "must be > 0");
  if (c.train.batch_size < 1) bad("train.batch_size", "must be >= 1");
  check("utility", [&] { validate(c.utility); });
  if (c.curve_points < 1) bad("utility.curve_points", "must be >= 1");
  if (c.game.grid_step < 1) bad("game.grid_step", "must be >= 1");
  if (c.game.max_iterations < 1) bad("game.max_iterations", "must be >= 1");
  if (c.game.rounds < 1) bad("game.rounds", "must be >= 1");
  return c;
}

inline ExperimentConfig parse_config(std::istream& is) { return parse_config(read_config_map(is)); }

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  return parse_config(in);
}

/// Canonical key/value form of every experiment setting. Parsing it back
/// yields the same experiment; `output.dir` is left out.
inline ConfigMap echo_config(const ExperimentConfig& c) {
  using detail::fmt_size;
  auto sizes = [](const std::vector<std::size_t>& v) { return detail::join(v, detail::fmt_size); };
  ConfigMap m;
  m["seed"] = std::to_string(c.seed);
  m["task.num_classes"] = fmt_size(c.task.num_classes);
  m["task.feature_dim"] = fmt_size(c.task.feature_dim);
  m["task.class_separation"] = format_double(c.task.class_separation);
  m["task.validation_size"] = fmt_size(c.task.validation_size);
  m["task.sizes"] = sizes(c.task.sizes);
  if (c.task.size_dist) m["task.size_dist"] = format_size_distribution(*c.task.size_dist);
  m["task.num_clients"] = fmt_size(c.task.num_clients);
  m["mechanism.mode"] = to_string(c.mechanism.mode);
  m["mechanism.participation"] = format_double(c.mechanism.participation);
  m["mechanism.rounds"] = fmt_size(c.mechanism.rounds);
  m["mechanism.rank_metric"] = to_string(c.mechanism.rank_metric);
  m["mechanism.vanilla_weighted"] = c.mechanism.vanilla_weighted ? "true" : "false";
  m["train.learning_rate"] = format_double(c.train.learning_rate);
  m["train.local_epochs"] = fmt_size(c.train.local_epochs);
  m["train.batch_size"] = fmt_size(c.train.batch_size);
  m["utility.gamma_u"] = format_double(c.utility.gamma_u);
  m["utility.alpha"] = format_double(c.utility.alpha);
  m["utility.theta"] = format_double(c.utility.performance.theta);
  m["utility.beta_g"] = format_double(c.utility.performance.beta_g);
  m["utility.gamma_f"] = format_double(c.utility.performance.gamma_f);
  m["utility.cost_linear"] = format_double(c.utility.cost.linear);
  m["utility.cost_quadratic"] = format_double(c.utility.cost.quadratic);
  m["utility.cap"] = format_double(c.utility.cap);
  m["utility.population.n"] = fmt_size(c.utility.population.n);
  m["utility.population.dist"] = format_size_distribution(c.utility.population.dist);
  if (c.d_fixed) m["utility.d_fixed"] = format_double(*c.d_fixed);
  m["utility.curve_points"] = fmt_size(c.curve_points);
  m["game.evaluation"] = to_string(c.game.evaluation);
  m["game.grid_step"] = fmt_size(c.game.grid_step);
  m["game.max_iterations"] = fmt_size(c.game.max_iterations);
  m["game.tolerance"] = format_double(c.game.tolerance);
  switch (c.game.start) {
    case StartKind::Caps: m["game.start"] = "caps"; break;
    case StartKind::Zero: m["game.start"] = "zero"; break;
    case StartKind::Random: m["game.start"] = "random"; break;
    case StartKind::Explicit: m["game.start"] = sizes(c.game.start_profile); break;
  }
  m["game.caps"] = sizes(c.game.caps);
  m["game.rounds"] = fmt_size(c.game.rounds);
  return m;
}

inline std::string config_text(const ConfigMap& m) {
  std::string out;
  for (const auto& [k, v] : m) out += k + "=" + v + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Derived settings

/// Client data sizes: the explicit list, or draws from `task.size_dist`.
inline std::vector<std::size_t> client_sizes(const ExperimentConfig& c) {
  if (c.task.size_dist) return sample_sizes(*c.task.size_dist, c.task.num_clients, derive_seed(c.seed, 0x512e));
  return c.task.sizes;
}

inline TaskSpec task_spec(const ExperimentConfig& c, std::vector<std::size_t> sizes) {
  return TaskSpec{c.task.num_classes, c.task.feature_dim, c.task.class_separation, std::move(sizes),
                  c.task.validation_size, c.seed};
}

inline MechanismConfig mechanism_config(const ExperimentConfig& c, std::size_t threads) {
  MechanismConfig m;
  m.mode = MechanismMode{c.mechanism.mode, c.mechanism.participation};
  m.train = c.train;
  m.train.seed = c.seed;
  m.rank_metric = c.mechanism.rank_metric;
  m.vanilla_weighted = c.mechanism.vanilla_weighted;
  m.threads = threads;
  m.seed = c.seed;
  return m;
}

}  // namespace incentfl
