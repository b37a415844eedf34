#pragma once

// Server side of the federation: scoring uploads on the validation holdout,
// ranking, FedAvg aggregation, and the rank-nested incentive aggregation in
// which client k receives the mean of every upload ranked at or below it.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "incentfl/learner.hpp"
#include "incentfl/rng.hpp"
#include "incentfl/synthdata.hpp"
#include "incentfl/types.hpp"

namespace incentfl {

struct ClientRecord {
  int id = 0;
  Dataset dataset;
  std::size_t contributed = 0;  // d_i
  std::size_t cap = 1;          // d^t_i
};

inline void validate(const ClientRecord& c) {
  if (c.cap < 1) throw std::invalid_argument("client " + std::to_string(c.id) + ": cap must be positive");
  if (c.contributed > c.cap) throw std::invalid_argument("client " + std::to_string(c.id) + ": d_i exceeds cap");
  if (c.dataset.size() != c.contributed)
    throw std::invalid_argument("client " + std::to_string(c.id) + ": dataset size differs from d_i");
}

enum class RankMetric { Accuracy, Loss };

struct MechanismMode {
  Aggregation kind = Aggregation::Incentive;
  double participation = 1.0;  // q in (0, 1]

  bool operator==(const MechanismMode&) const = default;
};

struct MechanismConfig {
  MechanismMode mode;
  TrainConfig train;
  RankMetric rank_metric = RankMetric::Accuracy;
  bool vanilla_weighted = false;  // weight the global model by reported d_i
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

/// Ascending-score ranking: position 1 is the worst upload.
struct RankAssignment {
  std::map<int, int> position;
  std::map<int, double> scores;  // validation accuracy unless ranking by loss

  /// Client ids ordered by position (index 0 holds position 1).
  std::vector<int> by_position() const {
    std::vector<int> ids(position.size());
    for (auto [id, pos] : position) ids[static_cast<std::size_t>(pos - 1)] = id;
    return ids;
  }
};

namespace detail {

inline RankAssignment rank_ascending(const std::map<int, double>& scores) {
  if (scores.empty()) throw std::invalid_argument("rank: no clients to rank");
  std::vector<std::pair<double, int>> order;
  order.reserve(scores.size());
  for (auto [id, s] : scores) {
    if (std::isnan(s)) throw std::invalid_argument("rank: NaN score for client " + std::to_string(id));
    order.emplace_back(s, id);
  }
  // pair ordering breaks equal scores by ascending id
  std::sort(order.begin(), order.end());
  RankAssignment r;
  r.scores = scores;
  for (std::size_t p = 0; p < order.size(); ++p) r.position[order[p].second] = static_cast<int>(p + 1);
  return r;
}

/// Order-independent sum: the same multiset of values always yields the same
/// bits, which keeps every aggregation route bit-comparable.
inline double canonical_sum(std::vector<double>& buf) {
  std::sort(buf.begin(), buf.end());
  double s = 0.0;
  for (double v : buf) s += v;
  return s;
}

/// Mean via canonical_sum; a buffer of identical values returns that value
/// exactly, so averaging copies of a model is the identity.
inline double canonical_mean(std::vector<double>& buf) {
  std::sort(buf.begin(), buf.end());
  if (buf.front() == buf.back()) return buf.front();
  double s = 0.0;
  for (double v : buf) s += v;
  return s / static_cast<double>(buf.size());
}

inline void require_same_shape(std::span<const ModelParams> models) {
  for (const auto& m : models)
    if (!m.same_shape(models.front())) throw std::invalid_argument("aggregate: model shapes differ");
}

}  // namespace detail

inline RankAssignment rank_by_accuracy(const std::map<int, double>& accuracies) {
  return detail::rank_ascending(accuracies);
}

/// Lower validation loss ranks higher.
inline RankAssignment rank_by_loss(const std::map<int, double>& losses) {
  std::map<int, double> neg;
  for (auto [id, l] : losses) neg[id] = -l;
  auto r = detail::rank_ascending(neg);
  r.scores = losses;
  return r;
}

/// Component-wise sum_k (n_k / N) w^k.
inline ModelParams aggregate_weighted(std::span<const ModelParams> models, std::span<const double> sizes) {
  if (models.empty()) throw std::invalid_argument("aggregate_weighted: no models");
  if (models.size() != sizes.size()) throw std::invalid_argument("aggregate_weighted: models/sizes length mismatch");
  detail::require_same_shape(models);
  std::vector<double> sz(sizes.begin(), sizes.end());
  for (double s : sz)
    if (!(s >= 0.0)) throw std::invalid_argument("aggregate_weighted: sizes must be non-negative");
  const double total = detail::canonical_sum(sz);
  if (!(total > 0.0)) throw std::invalid_argument("aggregate_weighted: all sizes are zero");

  ModelParams out = models.front();
  std::vector<double> buf(models.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t k = 0; k < models.size(); ++k) buf[k] = (sizes[k] / total) * models[k].values[j];
    out.values[j] = detail::canonical_sum(buf);
  }
  return out;
}

/// Component-wise arithmetic mean.
inline ModelParams aggregate_unweighted(std::span<const ModelParams> models) {
  if (models.empty()) throw std::invalid_argument("aggregate_unweighted: no models");
  detail::require_same_shape(models);
  ModelParams out = models.front();
  std::vector<double> buf(models.size());
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t k = 0; k < models.size(); ++k) buf[k] = models[k].values[j];
    out.values[j] = detail::canonical_mean(buf);
  }
  return out;
}

/// Client k receives the mean of the uploads at positions 1..r(k).
inline std::map<int, ModelParams> incentive_aggregate(const std::map<int, ModelParams>& models,
                                                      const RankAssignment& rank) {
  if (models.size() != rank.position.size()) throw std::invalid_argument("incentive_aggregate: id sets differ");
  for (const auto& [id, m] : models)
    if (!rank.position.contains(id))
      throw std::invalid_argument("incentive_aggregate: client " + std::to_string(id) + " has no rank");

  const auto order = rank.by_position();
  std::vector<ModelParams> ranked;
  ranked.reserve(order.size());
  for (int id : order) ranked.push_back(models.at(id));

  std::map<int, ModelParams> out;
  for (std::size_t p = 0; p < ranked.size(); ++p)
    out[order[p]] = aggregate_unweighted(std::span<const ModelParams>(ranked).first(p + 1));
  return out;
}

// ---------------------------------------------------------------------------
// Rounds

struct ClientRoundEntry {
  int client_id = 0;
  std::size_t d_i = 0;
  bool participated = true;
  double acc_uploaded = 0.0;
  double loss_uploaded = 0.0;
  int position = 0;  // 0 when the client sat the round out
  std::size_t d_others = 0;
  double acc_distributed = 0.0;
  std::vector<int> aggregation_set;  // ids whose uploads were averaged into this client's model

  bool operator==(const ClientRoundEntry&) const = default;
};

struct RoundLog {
  std::size_t round = 0;
  std::vector<ClientRoundEntry> entries;  // ascending client id

  bool operator==(const RoundLog&) const = default;
};

struct RoundResult {
  std::vector<ModelParams> models;   // distributed models, aligned with the client list
  std::vector<ModelParams> uploads;  // post-training uploads (held model for non-participants)
  RoundLog log;
};

namespace detail {

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers. Each index writes
/// only its own slot, so results do not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next.store(n);
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<std::size_t> participants(std::size_t n, const MechanismConfig& cfg, std::size_t round) {
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double q = cfg.mode.participation;
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("mechanism: participation must lie in (0, 1]");
  auto m = static_cast<std::size_t>(std::llround(q * static_cast<double>(n)));
  m = std::clamp<std::size_t>(m, 1, n);
  if (m == n) return all;
  Engine eng = make_engine(derive_seed(cfg.seed, 0xC7, round));
  std::shuffle(all.begin(), all.end(), eng);
  all.resize(m);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace detail

/// One round: local training, validation scoring, server aggregation.
/// `models` holds each client's currently distributed model.
inline RoundResult run_round(const std::vector<ModelParams>& models, const std::vector<ClientRecord>& clients,
                             const Dataset& validation, const MechanismConfig& cfg, std::size_t round) {
  if (validation.empty()) throw std::invalid_argument("run_round: empty validation set");
  if (models.size() != clients.size()) throw std::invalid_argument("run_round: one model per client required");
  if (clients.empty()) throw std::invalid_argument("run_round: no clients");
  for (const auto& c : clients) validate(c);
  for (std::size_t k = 1; k < clients.size(); ++k)
    if (clients[k].id <= clients[k - 1].id)
      throw std::invalid_argument("run_round: clients must be sorted by strictly ascending id");

  const std::size_t n = clients.size();
  const auto active = detail::participants(n, cfg, round);
  std::vector<bool> is_active(n, false);
  for (std::size_t k : active) is_active[k] = true;

  RoundResult res;
  res.uploads = models;
  std::vector<Evaluation> upload_eval(n);

  // ClientUpdate, then scoring on D_v
  detail::parallel_for(n, cfg.threads, [&](std::size_t k) {
    if (is_active[k] && !clients[k].dataset.empty()) {
      TrainConfig tc = cfg.train;
      tc.seed = derive_seed(cfg.train.seed, round);  // same stream for same data
      res.uploads[k] = local_train(models[k], clients[k].dataset, tc);
    }
    upload_eval[k] = evaluate(res.uploads[k], validation);
  });

  res.log.round = round;
  res.log.entries.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto& e = res.log.entries[k];
    e.client_id = clients[k].id;
    e.d_i = clients[k].contributed;
    e.participated = is_active[k];
    e.acc_uploaded = upload_eval[k].accuracy;
    e.loss_uploaded = upload_eval[k].loss;
  }

  res.models = models;
  if (cfg.mode.kind == Aggregation::Incentive) {
    std::map<int, double> scores;
    std::map<int, ModelParams> uploads;
    for (std::size_t k : active) {
      scores[clients[k].id] =
          cfg.rank_metric == RankMetric::Accuracy ? upload_eval[k].accuracy : upload_eval[k].loss;
      uploads[clients[k].id] = res.uploads[k];
    }
    const RankAssignment rank =
        cfg.rank_metric == RankMetric::Accuracy ? rank_by_accuracy(scores) : rank_by_loss(scores);
    auto distributed = incentive_aggregate(uploads, rank);
    const auto order = rank.by_position();

    std::map<int, std::size_t> index_of;
    for (std::size_t k = 0; k < n; ++k) index_of[clients[k].id] = k;
    std::size_t below = 0;
    std::vector<int> set;
    for (int id : order) {
      const std::size_t k = index_of.at(id);
      set.push_back(id);
      auto& e = res.log.entries[k];
      e.position = rank.position.at(id);
      e.d_others = below;
      e.aggregation_set = set;
      std::sort(e.aggregation_set.begin(), e.aggregation_set.end());
      below += clients[k].contributed;
      res.models[k] = std::move(distributed.at(id));
    }
  } else {
    std::vector<ModelParams> ups;
    std::vector<double> sizes;
    std::vector<int> set;
    std::size_t total = 0;
    for (std::size_t k : active) {
      ups.push_back(res.uploads[k]);
      sizes.push_back(static_cast<double>(clients[k].contributed));
      set.push_back(clients[k].id);
      total += clients[k].contributed;
    }
    const ModelParams global = cfg.vanilla_weighted ? aggregate_weighted(ups, sizes) : aggregate_unweighted(ups);
    for (std::size_t k = 0; k < n; ++k) {
      res.models[k] = global;
      auto& e = res.log.entries[k];
      e.aggregation_set = set;
      e.d_others = total - (is_active[k] ? clients[k].contributed : 0);
    }
    // a shared model has no ranking: every participant sits at the top
    for (std::size_t k : active) res.log.entries[k].position = static_cast<int>(active.size());
  }

  std::vector<double> acc_distributed(n);
  detail::parallel_for(n, cfg.threads,
                       [&](std::size_t k) { acc_distributed[k] = evaluate(res.models[k], validation).accuracy; });
  for (std::size_t k = 0; k < n; ++k) res.log.entries[k].acc_distributed = acc_distributed[k];
  return res;
}

struct TrainingResult {
  std::vector<RoundLog> rounds;
  std::vector<ModelParams> final_models;
};

/// Repeats run_round for rounds 1..T starting every client from `initial`.
inline TrainingResult run_training(const std::vector<ClientRecord>& clients, const Dataset& validation,
                                   const ModelParams& initial, std::size_t rounds, const MechanismConfig& cfg) {
  if (rounds < 1) throw std::invalid_argument("run_training: T must be >= 1");
  TrainingResult out;
  std::vector<ModelParams> models(clients.size(), initial);
  out.rounds.reserve(rounds);
  for (std::size_t t = 1; t <= rounds; ++t) {
    auto r = run_round(models, clients, validation, cfg, t);
    models = std::move(r.models);
    out.rounds.push_back(std::move(r.log));
  }
  out.final_models = std::move(models);
  return out;
}

/// Clients whose datasets are the first d_i points of each pool.
inline std::vector<ClientRecord> make_clients(const std::vector<Dataset>& pools,
                                              const std::vector<std::size_t>& contributions) {
  if (pools.size() != contributions.size()) throw std::invalid_argument("make_clients: length mismatch");
  std::vector<ClientRecord> out;
  out.reserve(pools.size());
  for (std::size_t k = 0; k < pools.size(); ++k) {
    ClientRecord c;
    c.id = static_cast<int>(k);
    c.cap = std::max<std::size_t>(pools[k].size(), 1);
    c.contributed = contributions[k];
    c.dataset = pools[k].prefix(contributions[k]);
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nestedness audit

struct NestednessReport {
  std::size_t rounds_checked = 0;
  std::size_t inclusion_violations = 0;  // strict accuracy order without set inclusion
  std::size_t monotonicity_violations = 0;  // D_others decreasing along positions

  bool ok() const noexcept { return inclusion_violations == 0 && monotonicity_violations == 0; }
};

/// Audits one round: strictly higher validation accuracy must come with a
/// superset aggregation set, and D_others must not decrease with position.
inline void audit_nestedness(const RoundLog& log, NestednessReport& report) {
  ++report.rounds_checked;
  std::vector<const ClientRoundEntry*> active;
  for (const auto& e : log.entries)
    if (e.participated) active.push_back(&e);
  for (const auto* a : active)
    for (const auto* b : active) {
      if (!(a->acc_uploaded > b->acc_uploaded)) continue;
      if (!std::includes(a->aggregation_set.begin(), a->aggregation_set.end(), b->aggregation_set.begin(),
                         b->aggregation_set.end()))
        ++report.inclusion_violations;
    }
  std::sort(active.begin(), active.end(), [](auto* x, auto* y) { return x->position < y->position; });
  for (std::size_t p = 1; p < active.size(); ++p)
    if (active[p]->d_others < active[p - 1]->d_others) ++report.monotonicity_violations;
}

inline NestednessReport audit_nestedness(const std::vector<RoundLog>& logs) {
  NestednessReport r;
  for (const auto& l : logs) audit_nestedness(l, r);
  return r;
}

// ---------------------------------------------------------------------------
// CSV

/// Shortest round-trip decimal; independent of the C locale.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc{} ? std::string(buf, ptr) : std::string("nan");
}

inline constexpr const char* kRoundsCsvHeader = "t,client_id,d_i,acc_uploaded,position,D_others,acc_distributed";

inline void write_rounds_csv(std::ostream& os, const std::vector<RoundLog>& logs) {
  os << kRoundsCsvHeader << '\n';
  for (const auto& l : logs)
    for (const auto& e : l.entries)
      os << l.round << ',' << e.client_id << ',' << e.d_i << ',' << format_double(e.acc_uploaded) << ','
         << e.position << ',' << e.d_others << ',' << format_double(e.acc_distributed) << '\n';
}

}  // namespace incentfl
