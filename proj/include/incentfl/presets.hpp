#pragma once

// Reference experiment: 10 clients holding 50, 100, ..., 500 points of a
// 3-class, 40-dimensional Gaussian task.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "incentfl/learner.hpp"
#include "incentfl/mechanism.hpp"
#include "incentfl/synthdata.hpp"

namespace incentfl::presets {

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::size_t kFeatureDim = 40;
inline constexpr double kSeparation = 2.0;
inline constexpr std::size_t kValidationSize = 4000;
inline constexpr std::size_t kRounds = 20;

inline std::vector<std::size_t> standard_sizes() {
  std::vector<std::size_t> s;
  for (std::size_t d = 50; d <= 500; d += 50) s.push_back(d);
  return s;
}

inline TaskSpec standard_task(std::uint64_t seed, std::vector<std::size_t> sizes = standard_sizes()) {
  return TaskSpec{kNumClasses, kFeatureDim, kSeparation, std::move(sizes), kValidationSize, seed};
}

inline TrainConfig standard_train(std::uint64_t seed) { return TrainConfig{0.05, 20, 25, seed}; }

inline MechanismConfig standard_mechanism(std::uint64_t seed, Aggregation kind = Aggregation::Incentive) {
  MechanismConfig cfg;
  cfg.mode.kind = kind;
  cfg.train = standard_train(seed);
  cfg.seed = seed;
  return cfg;
}

}  // namespace incentfl::presets
