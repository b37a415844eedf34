#pragma once

// Multinomial logistic regression trained by minibatch gradient descent.
// This is the client-side update and the server-side scorer.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "incentfl/rng.hpp"
#include "incentfl/synthdata.hpp"

namespace incentfl {

/// Per class: `feature_dim` weights followed by one bias, classes contiguous.
struct ModelParams {
  std::vector<double> values;
  std::size_t feature_dim = 0;
  std::size_t num_classes = 0;

  ModelParams() = default;
  ModelParams(std::size_t features, std::size_t classes)
      : values((features + 1) * classes, 0.0), feature_dim(features), num_classes(classes) {}

  std::size_t size() const noexcept { return values.size(); }
  std::size_t stride() const noexcept { return feature_dim + 1; }

  double& weight(std::size_t c, std::size_t f) { return values[c * stride() + f]; }
  double weight(std::size_t c, std::size_t f) const { return values[c * stride() + f]; }
  double& bias(std::size_t c) { return values[c * stride() + feature_dim]; }
  double bias(std::size_t c) const { return values[c * stride() + feature_dim]; }

  bool same_shape(const ModelParams& o) const noexcept {
    return feature_dim == o.feature_dim && num_classes == o.num_classes && values.size() == o.values.size();
  }

  bool operator==(const ModelParams&) const = default;
};

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
}

inline ModelParams init_model(std::size_t feature_dim, std::size_t num_classes, std::uint64_t seed) {
  if (feature_dim < 1 || num_classes < 1) throw std::invalid_argument("init_model: dims must be positive");
  ModelParams m(feature_dim, num_classes);
  Engine eng = make_engine(derive_seed(seed, 0x1417));
  std::uniform_real_distribution<double> u(-0.01, 0.01);
  for (double& v : m.values) v = u(eng);
  return m;
}

namespace detail {

inline void check_dims(const ModelParams& model, const Dataset& ds) {
  if (model.feature_dim != ds.feature_dim || model.num_classes != ds.num_classes)
    throw std::invalid_argument("model and dataset dimensions disagree");
}

/// Writes softmax(W x + b) into `probs` and returns the log-sum-exp of the logits.
inline double softmax(const ModelParams& m, std::span<const double> x, std::span<double> probs) {
  double max_logit = -INFINITY;
  for (std::size_t c = 0; c < m.num_classes; ++c) {
    double z = m.bias(c);
    for (std::size_t f = 0; f < m.feature_dim; ++f) z += m.weight(c, f) * x[f];
    probs[c] = z;
    max_logit = std::max(max_logit, z);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < m.num_classes; ++c) {
    probs[c] = std::exp(probs[c] - max_logit);
    total += probs[c];
  }
  for (std::size_t c = 0; c < m.num_classes; ++c) probs[c] /= total;
  return max_logit + std::log(total);
}

// Accumulates the mean cross-entropy and its gradient over `idx` into `grad`.
inline double loss_and_gradient_into(const ModelParams& model, const Dataset& ds, std::span<const std::size_t> idx,
                                     std::vector<double>& grad) {
  grad.assign(model.size(), 0.0);
  std::vector<double> probs(model.num_classes);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(idx.size());
  const std::size_t stride = model.stride();
  for (std::size_t i : idx) {
    const DataPoint& p = ds.points[i];
    const double lse = softmax(model, p.features, probs);
    double z_y = model.bias(p.label);
    for (std::size_t f = 0; f < model.feature_dim; ++f) z_y += model.weight(p.label, f) * p.features[f];
    loss += lse - z_y;
    for (std::size_t c = 0; c < model.num_classes; ++c) {
      const double delta = (probs[c] - (c == p.label ? 1.0 : 0.0)) * inv;
      double* g = grad.data() + c * stride;
      for (std::size_t f = 0; f < model.feature_dim; ++f) g[f] += delta * p.features[f];
      g[model.feature_dim] += delta;
    }
  }
  return loss * inv;
}

}  // namespace detail

struct LossGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Mean cross-entropy over `batch` and its exact gradient.
inline LossGradient loss_and_gradient(const ModelParams& model, const Dataset& batch) {
  if (batch.empty()) throw std::invalid_argument("loss_and_gradient: empty batch");
  detail::check_dims(model, batch);
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  LossGradient out;
  out.loss = detail::loss_and_gradient_into(model, batch, idx, out.gradient);
  return out;
}

/// E epochs of minibatch descent over a seeded per-epoch shuffle. Returns the
/// last iterate.
inline ModelParams local_train(const ModelParams& model, const Dataset& dataset, const TrainConfig& cfg) {
  validate(cfg);
  if (cfg.local_epochs == 0) return model;
  if (dataset.empty()) throw std::invalid_argument("local_train: empty dataset with local_epochs > 0");
  detail::check_dims(model, dataset);

  ModelParams w = model;
  Engine eng = make_engine(derive_seed(cfg.seed, 0x7a1));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> grad;
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), eng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      detail::loss_and_gradient_into(w, dataset, std::span<const std::size_t>(order).subspan(start, len), grad);
      for (std::size_t j = 0; j < w.size(); ++j) w.values[j] -= cfg.learning_rate * grad[j];
    }
  }
  return w;
}

/// Argmax class; ties go to the lowest class index.
inline std::size_t predict(const ModelParams& model, std::span<const double> x) {
  std::size_t best = 0;
  double best_logit = -INFINITY;
  for (std::size_t c = 0; c < model.num_classes; ++c) {
    double z = model.bias(c);
    for (std::size_t f = 0; f < model.feature_dim; ++f) z += model.weight(c, f) * x[f];
    if (z > best_logit) {
      best_logit = z;
      best = c;
    }
  }
  return best;
}

struct Evaluation {
  double accuracy = 0.0;
  double loss = 0.0;
};

inline Evaluation evaluate(const ModelParams& model, const Dataset& dataset) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  detail::check_dims(model, dataset);
  std::vector<double> probs(model.num_classes);
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& p : dataset.points) {
    if (predict(model, p.features) == p.label) ++correct;
    const double lse = detail::softmax(model, p.features, probs);
    double z_y = model.bias(p.label);
    for (std::size_t f = 0; f < model.feature_dim; ++f) z_y += model.weight(p.label, f) * p.features[f];
    loss += lse - z_y;
  }
  const double n = static_cast<double>(dataset.size());
  return {static_cast<double>(correct) / n, loss / n};
}

}  // namespace incentfl
