#pragma once

// Analytic model of a client's incentive: u = gamma_u * p(d + D_others) - alpha * c(d).
//
// p is a clamped power law, c is linear-plus-quadratic, and D_others(d) is the
// expected data held by clients ranked below a client contributing d. Under the
// incentive rule D_others grows with d; under vanilla FedAvg it is a constant.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "incentfl/synthdata.hpp"
#include "incentfl/types.hpp"

namespace incentfl {

struct PerformanceModel {
  double theta = 1.0;
  double beta_g = -0.5;
  double gamma_f = 1.0;  // degeneration factor of federated aggregation

  bool operator==(const PerformanceModel&) const = default;
};

struct CostModel {
  double linear = 0.0;     // a1
  double quadratic = 0.0;  // a2

  bool operator==(const CostModel&) const = default;
};

/// `n` clients whose sizes follow `dist`. For ExplicitSizes the list holds the
/// n - 1 opponents' sizes.
struct PopulationModel {
  std::size_t n = 2;
  SizeDistribution dist = UniformSizes{1.0};

  bool operator==(const PopulationModel&) const = default;
};

struct UtilityParams {
  double gamma_u = 1.0;
  double alpha = 1.0;
  PerformanceModel performance;
  CostModel cost;
  PopulationModel population;
  double cap = 1.0;  // d^t

  bool operator==(const UtilityParams&) const = default;
};

inline void validate(const PerformanceModel& m) {
  if (!(m.theta > 0.0)) throw std::invalid_argument("utility: theta must be > 0");
  if (!(m.beta_g < 0.0)) throw std::invalid_argument("utility: beta_g must be < 0");
  if (!(m.gamma_f > 0.0 && m.gamma_f <= 1.0)) throw std::invalid_argument("utility: gamma_f must lie in (0, 1]");
}

inline void validate(const CostModel& m) {
  if (!(m.linear >= 0.0)) throw std::invalid_argument("utility: cost_linear must be >= 0");
  if (!(m.quadratic >= 0.0)) throw std::invalid_argument("utility: cost_quadratic must be >= 0");
}

inline void validate(const PopulationModel& pop) {
  if (pop.n < 2) throw std::invalid_argument("utility: population needs at least 2 clients");
  validate(pop.dist);
  if (const auto* ex = std::get_if<ExplicitSizes>(&pop.dist); ex && ex->sizes.size() != pop.n - 1)
    throw std::invalid_argument("utility: explicit population must list n - 1 opponent sizes");
}

inline void validate(const UtilityParams& p) {
  if (!(p.gamma_u >= 0.0) || !std::isfinite(p.gamma_u)) throw std::invalid_argument("utility: gamma_u must be finite and >= 0");
  if (!(p.alpha >= 0.0) || !std::isfinite(p.alpha)) throw std::invalid_argument("utility: alpha must be finite and >= 0");
  if (!(p.cap > 0.0) || !std::isfinite(p.cap)) throw std::invalid_argument("utility: cap must be finite and > 0");
  validate(p.performance);
  validate(p.cost);
  validate(p.population);
}

// ---------------------------------------------------------------------------
// p(D) and c(d)

/// gamma_f * max(0, 1 - theta * D^beta_g), with p(0) = 0.
inline double perf(double total, const PerformanceModel& m) {
  if (!(total > 0.0)) return 0.0;
  const double v = 1.0 - m.theta * std::pow(total, m.beta_g);
  return v > 0.0 ? m.gamma_f * v : 0.0;
}

/// p'(D); zero inside the clamped region.
inline double perf_deriv(double total, const PerformanceModel& m) {
  if (perf(total, m) <= 0.0) return 0.0;
  return -m.gamma_f * m.theta * m.beta_g * std::pow(total, m.beta_g - 1.0);
}

inline double perf_second_deriv(double total, const PerformanceModel& m) {
  if (perf(total, m) <= 0.0) return 0.0;
  return -m.gamma_f * m.theta * m.beta_g * (m.beta_g - 1.0) * std::pow(total, m.beta_g - 2.0);
}

inline double cost(double d, const CostModel& m) { return m.linear * d + m.quadratic * d * d; }
inline double cost_deriv(double d, const CostModel& m) { return m.linear + 2.0 * m.quadratic * d; }
inline double cost_second_deriv(double, const CostModel& m) { return 2.0 * m.quadratic; }

// ---------------------------------------------------------------------------
// D_others(d)

/// Expected data total of strictly lower-ranked clients for a client holding d:
/// (n - 1) * integral_0^d x f(x) dx, or the opponents' step sum for Explicit.
inline double d_others(double d, const PopulationModel& pop) {
  if (!(d > 0.0)) return 0.0;
  const double others = static_cast<double>(pop.n - 1);
  struct V {
    double d, others;
    double operator()(const UniformSizes& u) const {
      const double x = std::min(d, u.d_max);
      return others * x * x / (2.0 * u.d_max);
    }
    double operator()(const ParetoSizes& p) const {
      if (d < p.scale) return 0.0;
      return others * (p.shape * p.scale / (p.shape - 1.0)) * (1.0 - std::pow(p.scale / d, p.shape - 1.0));
    }
    double operator()(const ExponentialSizes& e) const {
      const double ld = e.rate * d;
      // 1 - e^{-x}(1 + x), evaluated without cancellation for small x
      return others * (-std::expm1(-ld) - ld * std::exp(-ld)) / e.rate;
    }
    double operator()(const ExplicitSizes& e) const {
      double s = 0.0;
      for (double v : e.sizes)
        if (v <= d) s += v;
      return s;
    }
  };
  return std::visit(V{d, others}, pop.dist);
}

struct DOthersDeriv {
  double first = 0.0;
  double second = 0.0;
  bool discontinuity = false;  // evaluated at a density jump; one-sided values returned
};

/// First = (n - 1) d f(d); second = (n - 1)(f(d) + d f'(d)). At the edge of
/// a bounded support the limit from inside the support is returned.
inline DOthersDeriv d_others_deriv(double d, const PopulationModel& pop) {
  const double others = static_cast<double>(pop.n - 1);
  DOthersDeriv r;
  if (const auto* u = std::get_if<UniformSizes>(&pop.dist)) {
    if (d <= u->d_max) {
      r.first = others * d / u->d_max;
      r.second = others / u->d_max;
    }
    r.discontinuity = (d == u->d_max);
  } else if (const auto* p = std::get_if<ParetoSizes>(&pop.dist)) {
    if (d >= p->scale) {
      const double a = p->shape;
      r.first = others * a * std::pow(p->scale / d, a);
      r.second = -others * a * a * std::pow(p->scale / d, a) / d;
    }
    r.discontinuity = (d == p->scale);
  } else if (const auto* e = std::get_if<ExponentialSizes>(&pop.dist)) {
    const double l = e->rate;
    const double dens = l * std::exp(-l * d);
    r.first = others * d * dens;
    r.second = others * dens * (1.0 - l * d);
  } else {
    const auto& sizes = std::get<ExplicitSizes>(pop.dist).sizes;
    const double support = sizes.empty() ? 1.0 : std::max(1.0, *std::max_element(sizes.begin(), sizes.end()));
    const double h = support / 1e4;
    auto jump_in = [&](double lo, double hi) {
      return std::any_of(sizes.begin(), sizes.end(), [&](double s) { return s > 0.0 && s > lo && s <= hi; });
    };
    auto D = [&](double x) { return d_others(x, pop); };
    if (!jump_in(d - h, d + h)) {
      r.first = (D(d + h) - D(d - h)) / (2.0 * h);
      r.second = (D(d + h) - 2.0 * D(d) + D(d - h)) / (h * h);
    } else {
      r.discontinuity = true;
      if (!jump_in(d, d + 2.0 * h)) {
        r.first = (D(d + h) - D(d)) / h;
        r.second = (D(d + 2.0 * h) - 2.0 * D(d + h) + D(d)) / (h * h);
      } else if (!jump_in(d - 2.0 * h, d)) {
        r.first = (D(d) - D(d - h)) / h;
        r.second = (D(d) - 2.0 * D(d - h) + D(d - 2.0 * h)) / (h * h);
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Utilities and derivatives

namespace detail {

inline void require_feasible(double d, const UtilityParams& p) {
  if (!(d >= 0.0 && d <= p.cap))
    throw std::invalid_argument("utility: contribution " + std::to_string(d) + " outside [0, cap]");
}

}  // namespace detail

inline double utility_vanilla(double d, const UtilityParams& p, double d_fixed) {
  detail::require_feasible(d, p);
  return p.gamma_u * perf(d + d_fixed, p.performance) - p.alpha * cost(d, p.cost);
}

inline double utility_incentive(double d, const UtilityParams& p) {
  detail::require_feasible(d, p);
  return p.gamma_u * perf(d + d_others(d, p.population), p.performance) - p.alpha * cost(d, p.cost);
}

/// Vanilla holds D_others at `d_fixed`; incentive uses D_others(d).
inline double utility(double d, const UtilityParams& p, Aggregation mode, double d_fixed = 0.0) {
  return mode == Aggregation::Incentive ? utility_incentive(d, p) : utility_vanilla(d, p, d_fixed);
}

/// gamma_u p'(d + D)(1 + D') - alpha c'(d); the D' term is absent under vanilla.
inline double utility_deriv(double d, const UtilityParams& p, Aggregation mode, double d_fixed = 0.0) {
  if (mode == Aggregation::Vanilla)
    return p.gamma_u * perf_deriv(d + d_fixed, p.performance) - p.alpha * cost_deriv(d, p.cost);
  const double D = d_others(d, p.population);
  const auto dD = d_others_deriv(d, p.population);
  return p.gamma_u * perf_deriv(d + D, p.performance) * (1.0 + dD.first) - p.alpha * cost_deriv(d, p.cost);
}

inline double utility_second_deriv(double d, const UtilityParams& p, Aggregation mode, double d_fixed = 0.0) {
  if (mode == Aggregation::Vanilla)
    return p.gamma_u * perf_second_deriv(d + d_fixed, p.performance) - p.alpha * cost_second_deriv(d, p.cost);
  const double D = d_others(d, p.population);
  const auto dD = d_others_deriv(d, p.population);
  const double slope = 1.0 + dD.first;
  return p.gamma_u * perf_second_deriv(d + D, p.performance) * slope * slope +
         p.gamma_u * perf_deriv(d + D, p.performance) * dD.second - p.alpha * cost_second_deriv(d, p.cost);
}

// ---------------------------------------------------------------------------
// Condition checks

struct LargeDerivativeCheck {
  bool holds = false;
  double lhs = 0.0;  // D_others'(d^t)
  double rhs = 0.0;
};

/// Sufficient-slope condition at d = d^t:
///   D'(d^t) > ((alpha / gamma_u) c'(d^t) - p'(T)) / p'(T),  T = d^t + D(d^t).
/// Throws when p'(T) = 0 (saturated or clamped performance).
inline LargeDerivativeCheck check_eq_large(const UtilityParams& p) {
  if (!(p.cap > 0.0)) throw std::invalid_argument("check_eq_large: cap must be > 0");
  const double d = p.cap;
  const double pp = perf_deriv(d + d_others(d, p.population), p.performance);
  if (!(pp > 0.0)) throw std::domain_error("check_eq_large: p' vanishes at d^t (degenerate saturation)");
  LargeDerivativeCheck r;
  r.lhs = d_others_deriv(d, p.population).first;
  const double ratio = p.gamma_u > 0.0 ? p.alpha / p.gamma_u : std::numeric_limits<double>::infinity();
  const double marginal_cost = cost_deriv(d, p.cost);
  r.rhs = ((marginal_cost == 0.0 ? 0.0 : ratio * marginal_cost) - pp) / pp;
  r.holds = r.lhs > r.rhs;
  return r;
}

struct ConcavityCheck {
  bool concave = true;
  double max_second_deriv = -std::numeric_limits<double>::infinity();
};

/// Samples u'' at `points` cell midpoints of [0, d^t].
inline ConcavityCheck check_concavity(const UtilityParams& p, Aggregation mode, double d_fixed = 0.0,
                                      std::size_t points = 1000) {
  ConcavityCheck r;
  for (std::size_t i = 0; i < points; ++i) {
    const double d = p.cap * (static_cast<double>(i) + 0.5) / static_cast<double>(points);
    const double s = utility_second_deriv(d, p, mode, d_fixed);
    r.max_second_deriv = std::max(r.max_second_deriv, s);
  }
  r.concave = r.max_second_deriv <= 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Optimisation

inline constexpr std::size_t kOptimizerGridIntervals = 10000;

inline double optimizer_resolution(const UtilityParams& p) {
  return p.cap / static_cast<double>(kOptimizerGridIntervals);
}

/// Maximiser of the mode's utility over [0, d^t]: 10^4-interval grid, then
/// golden-section refinement inside the best grid cell pair. Leftmost on ties.
inline double optimal_contribution(const UtilityParams& p, Aggregation mode, double d_fixed = 0.0) {
  if (!(p.cap > 0.0)) throw std::invalid_argument("optimal_contribution: cap must be > 0");
  const std::size_t n = kOptimizerGridIntervals;
  auto at = [&](std::size_t i) { return i == n ? p.cap : p.cap * static_cast<double>(i) / static_cast<double>(n); };
  auto u = [&](double d) { return utility(d, p, mode, d_fixed); };

  std::size_t best_i = 0;
  double best_u = u(0.0);
  for (std::size_t i = 1; i <= n; ++i) {
    const double v = u(at(i));
    if (v > best_u) {
      best_u = v;
      best_i = i;
    }
  }

  double lo = at(best_i == 0 ? 0 : best_i - 1);
  double hi = at(std::min(best_i + 1, n));
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = u(x1), f2 = u(x2);
  for (int it = 0; it < 100 && hi - lo > 1e-12 * std::max(1.0, p.cap); ++it) {
    if (f1 >= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = u(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = u(x2);
    }
  }
  const double refined = f1 >= f2 ? x1 : x2;
  const double refined_u = std::max(f1, f2);
  if (refined_u > best_u) {
    // a refined point left of the grid winner only counts if it is strictly better
    return refined;
  }
  return at(best_i);
}

struct VanillaEquilibrium {
  double d_opt = 0.0;    // d^opt*
  double d_fixed = 0.0;  // D_others(d^opt*)
};

/// Vanilla optimum that is consistent with its own D_others: solves
/// d = optimal_contribution(vanilla, D_others(d)) by bisection. The map is
/// non-increasing in d, so the crossing is unique.
inline VanillaEquilibrium vanilla_optimum(const UtilityParams& p, int iterations = 40) {
  auto response = [&](double d) { return optimal_contribution(p, Aggregation::Vanilla, d_others(d, p.population)); };
  double lo = 0.0, hi = p.cap;
  if (response(hi) >= hi) return {response(hi), d_others(hi, p.population)};
  if (response(lo) <= lo) return {lo, 0.0};
  for (int i = 0; i < iterations; ++i) {
    const double mid = 0.5 * (lo + hi);
    (response(mid) > mid ? lo : hi) = mid;
  }
  const double fixed = d_others(0.5 * (lo + hi), p.population);
  return {optimal_contribution(p, Aggregation::Vanilla, fixed), fixed};
}

// ---------------------------------------------------------------------------
// Export

inline constexpr const char* kUtilityCurveHeader = "d,u_vanilla,u_incentive,du_incentive,D_others";

/// `points + 1` evenly spaced rows over [0, d^t]. The derivative column is
/// the one-sided limit at the endpoints.
template <class Format>
void write_utility_curve(std::ostream& os, const UtilityParams& p, double d_fixed, std::size_t points, Format&& fmt) {
  os << kUtilityCurveHeader << '\n';
  for (std::size_t i = 0; i <= points; ++i) {
    const double d = i == points ? p.cap : p.cap * static_cast<double>(i) / static_cast<double>(points);
    os << fmt(d) << ',' << fmt(utility_vanilla(d, p, d_fixed)) << ',' << fmt(utility_incentive(d, p)) << ','
       << fmt(utility_deriv(d, p, Aggregation::Incentive)) << ',' << fmt(d_others(d, p.population)) << '\n';
  }
}

}  // namespace incentfl
