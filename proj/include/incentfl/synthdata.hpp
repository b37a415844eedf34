#pragma once

// Synthetic classification tasks: class-conditional Gaussian blobs, IID
// partitions across clients, and a server-side validation holdout.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "incentfl/rng.hpp"

namespace incentfl {

struct DataPoint {
  std::vector<double> features;
  std::size_t label = 0;

  bool operator==(const DataPoint&) const = default;
};

struct Dataset {
  std::vector<DataPoint> points;
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  /// First `n` points, keeping dims. Used to realize a contribution d_i < |D_i|.
  Dataset prefix(std::size_t n) const {
    if (n > points.size()) throw std::invalid_argument("Dataset::prefix: n exceeds dataset size");
    Dataset out{{}, num_classes, feature_dim};
    out.points.assign(points.begin(), points.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }

  bool operator==(const Dataset&) const = default;
};

// ---------------------------------------------------------------------------
// Size distributions

struct UniformSizes {
  double d_max = 1.0;
  bool operator==(const UniformSizes&) const = default;
};
struct ParetoSizes {
  double shape = 2.0;  // a
  double scale = 1.0;  // x_m
  bool operator==(const ParetoSizes&) const = default;
};
struct ExponentialSizes {
  double rate = 1.0;
  bool operator==(const ExponentialSizes&) const = default;
};
struct ExplicitSizes {
  std::vector<double> sizes;
  bool operator==(const ExplicitSizes&) const = default;
};

using SizeDistribution = std::variant<UniformSizes, ParetoSizes, ExponentialSizes, ExplicitSizes>;

inline void validate(const SizeDistribution& dist) {
  struct V {
    void operator()(const UniformSizes& u) const {
      if (!(u.d_max > 0.0)) throw std::invalid_argument("Uniform size distribution requires d_max > 0");
    }
    void operator()(const ParetoSizes& p) const {
      if (!(p.shape > 1.0)) throw std::invalid_argument("Pareto size distribution requires shape > 1");
      if (!(p.scale > 0.0)) throw std::invalid_argument("Pareto size distribution requires scale > 0");
    }
    void operator()(const ExponentialSizes& e) const {
      if (!(e.rate > 0.0)) throw std::invalid_argument("Exponential size distribution requires rate > 0");
    }
    void operator()(const ExplicitSizes& e) const {
      for (double s : e.sizes)
        if (!(s >= 0.0)) throw std::invalid_argument("Explicit sizes must be non-negative");
    }
  };
  std::visit(V{}, dist);
}

/// Mean of the distribution; Explicit uses the arithmetic mean of its list.
inline double distribution_mean(const SizeDistribution& dist) {
  struct M {
    double operator()(const UniformSizes& u) const { return u.d_max / 2.0; }
    double operator()(const ParetoSizes& p) const { return p.shape * p.scale / (p.shape - 1.0); }
    double operator()(const ExponentialSizes& e) const { return 1.0 / e.rate; }
    double operator()(const ExplicitSizes& e) const {
      if (e.sizes.empty()) return 0.0;
      double s = 0.0;
      for (double v : e.sizes) s += v;
      return s / static_cast<double>(e.sizes.size());
    }
  };
  return std::visit(M{}, dist);
}

/// Draws `n` client sizes. Continuous draws are rounded to the nearest integer
/// and floored at 1; Explicit lists are returned verbatim.
inline std::vector<std::size_t> sample_sizes(const SizeDistribution& dist, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_sizes: n must be >= 1");
  validate(dist);
  if (const auto* ex = std::get_if<ExplicitSizes>(&dist)) {
    if (ex->sizes.size() != n)
      throw std::invalid_argument("sample_sizes: explicit list has " + std::to_string(ex->sizes.size()) +
                                  " entries, expected " + std::to_string(n));
    std::vector<std::size_t> out;
    out.reserve(n);
    for (double s : ex->sizes) out.push_back(static_cast<std::size_t>(std::llround(s)));
    return out;
  }

  Engine eng = make_engine(derive_seed(seed, 0x51e5));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    double x = 0.0;
    if (const auto* u = std::get_if<UniformSizes>(&dist)) {
      x = u->d_max * unit(eng);
    } else if (const auto* p = std::get_if<ParetoSizes>(&dist)) {
      // inverse CDF; 1 - U lies in (0, 1]
      x = p->scale / std::pow(1.0 - unit(eng), 1.0 / p->shape);
    } else if (const auto* e = std::get_if<ExponentialSizes>(&dist)) {
      x = -std::log(1.0 - unit(eng)) / e->rate;
    }
    auto r = std::llround(x);
    out.push_back(static_cast<std::size_t>(r < 1 ? 1 : r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task generation

struct TaskSpec {
  std::size_t num_classes = 2;
  std::size_t feature_dim = 2;
  double class_separation = 1.0;
  std::vector<std::size_t> samples_per_client;
  std::size_t validation_size = 1000;
  std::uint64_t seed = 0;

  bool operator==(const TaskSpec&) const = default;
};

struct Task {
  std::vector<Dataset> clients;
  Dataset validation;
};

/// Unit direction along which class means are spaced: (1, ..., 1) / sqrt(F).
inline std::vector<double> class_direction(std::size_t feature_dim) {
  return std::vector<double>(feature_dim, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
}

namespace detail {

inline Dataset draw_blobs(const TaskSpec& spec, std::size_t count, std::uint64_t stream_seed) {
  Engine eng = make_engine(stream_seed);
  std::uniform_int_distribution<std::size_t> label_dist(0, spec.num_classes - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto dir = class_direction(spec.feature_dim);

  Dataset ds{{}, spec.num_classes, spec.feature_dim};
  ds.points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    DataPoint p;
    p.label = label_dist(eng);
    const double offset = static_cast<double>(p.label) * spec.class_separation;
    p.features.resize(spec.feature_dim);
    for (std::size_t f = 0; f < spec.feature_dim; ++f) p.features[f] = offset * dir[f] + noise(eng);
    ds.points.push_back(std::move(p));
  }
  return ds;
}

}  // namespace detail

inline void validate(const TaskSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("task: num_classes must be >= 2");
  if (spec.feature_dim < 1) throw std::invalid_argument("task: feature_dim must be >= 1");
  if (spec.validation_size < 1) throw std::invalid_argument("task: validation_size must be >= 1");
  if (!(spec.class_separation >= 0.0) || !std::isfinite(spec.class_separation))
    throw std::invalid_argument("task: class_separation must be a finite value >= 0");
}

/// Every client and the validation set draw from the same distribution, each
/// from its own stream derived from `spec.seed`.
inline Task generate_task(const TaskSpec& spec) {
  validate(spec);
  Task task;
  task.clients.reserve(spec.samples_per_client.size());
  for (std::size_t k = 0; k < spec.samples_per_client.size(); ++k)
    task.clients.push_back(detail::draw_blobs(spec, spec.samples_per_client[k], derive_seed(spec.seed, k + 1)));
  task.validation = detail::draw_blobs(spec, spec.validation_size, derive_seed(spec.seed, 0));
  return task;
}

}  // namespace incentfl
