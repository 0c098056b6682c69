#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "d2c/error.hpp"
#include "d2c/params.hpp"

namespace d2c {

/// Settings of the uncertainty-aware weighting. Entropies are in nats, so the maximum
/// entropy of a K-class prediction is ln K.
struct WeightingConfig {
  double lambda = 0.7;   ///< weight of validation accuracy against confidence
  double c_max = 10.0;   ///< cap on the inverse entropy
  double delta_e = 1e-8;
  double eps_s = 1e-8;
  std::size_t num_classes = 2;

  /// Inverse entropy of a maximally uncertain model.
  double inv_entropy_min() const noexcept { return 1.0 / (std::log(static_cast<double>(num_classes)) + delta_e); }

  void validate() const {
    detail::require(lambda >= 0.0 && lambda <= 1.0, "weighting: lambda must lie in [0,1]");
    detail::require(delta_e > 0.0, "weighting: delta_e must be > 0");
    detail::require(eps_s > 0.0, "weighting: eps_s must be > 0");
    detail::require(num_classes >= 2, "weighting: need K >= 2");
    detail::require(c_max > inv_entropy_min(), "weighting: c_max must exceed 1/(ln K + delta_e) = " +
                                                   std::to_string(inv_entropy_min()));
  }
};

/// One edge model after local training, scored on the shared validation set.
struct EdgeReport {
  std::size_t edge_id = 0;
  ParamVector params;
  double val_accuracy = 0.0;
  double mean_entropy = 0.0;
};

struct AggregationWeights {
  std::vector<double> u;      ///< confidence scores
  std::vector<double> s_raw;  ///< composite scores
  std::vector<double> alpha;  ///< normalized aggregation weights
  bool fallback = false;      ///< every score was zero; alpha fell back to uniform
};

/// Capped inverse entropy, min-max scaled against the maximum-entropy model, clamped to [0,1].
inline double confidence_score(double mean_entropy, const WeightingConfig& cfg) {
  detail::require(mean_entropy >= 0.0, "confidence_score: entropy must be >= 0");
  const double inv = 1.0 / (mean_entropy + cfg.delta_e);
  const double capped = std::min(inv, cfg.c_max);
  const double lo = cfg.inv_entropy_min();
  const double u = (capped - lo) / (cfg.c_max - lo + cfg.eps_s);
  return std::clamp(u, 0.0, 1.0);
}

inline double composite_score(double accuracy, double confidence, double lambda) {
  return lambda * accuracy + (1.0 - lambda) * confidence;
}

inline std::vector<double> uniform_weights(std::size_t n) {
  detail::require(n >= 1, "uniform_weights: need N >= 1");
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

struct NormalizedScores {
  std::vector<double> alpha;
  bool fallback = false;
};

/// alpha_i = s_i / (sum s + eps_s), then renormalized so that the weights, summed in index
/// order, give exactly 1. All-zero scores fall back to uniform weights with `fallback` set;
/// all-equal scores give exactly uniform weights.
inline NormalizedScores normalize_scores(std::span<const double> s, double eps_s) {
  detail::require(!s.empty(), "normalize_scores: no scores");
  for (double v : s) detail::require(v >= 0.0 && std::isfinite(v), "normalize_scores: scores must be finite and >= 0");

  const double total = std::accumulate(s.begin(), s.end(), 0.0);
  if (total == 0.0) return {uniform_weights(s.size()), true};
  if (std::all_of(s.begin(), s.end(), [&](double v) { return v == s[0]; })) return {uniform_weights(s.size()), false};

  std::vector<double> alpha(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) alpha[i] = s[i] / (total + eps_s);
  const double mass = std::accumulate(alpha.begin(), alpha.end(), 0.0);
  for (double& a : alpha) a /= mass;

  // Fold the rounding residue into the last entry. For head sum S <= 1, fl(S + (1 - S)) == 1.
  const std::size_t last = alpha.size() - 1;
  for (int pass = 0; pass < 4 && last > 0; ++pass) {
    const double head = std::accumulate(alpha.begin(), alpha.begin() + static_cast<std::ptrdiff_t>(last), 0.0);
    if (head <= 1.0) {
      alpha[last] = 1.0 - head;
      break;
    }
    for (std::size_t i = 0; i < last; ++i) alpha[i] /= head;
    alpha[last] = 0.0;
  }
  if (last == 0) alpha[0] = 1.0;
  return {std::move(alpha), false};
}

/// Confidence, composite score and normalized weight for every edge.
inline AggregationWeights uncertainty_weights(std::span<const double> accuracies, std::span<const double> entropies,
                                              const WeightingConfig& cfg) {
  detail::require(accuracies.size() == entropies.size(), "uncertainty_weights: length mismatch");
  AggregationWeights w;
  for (std::size_t i = 0; i < accuracies.size(); ++i) {
    detail::require(accuracies[i] >= 0.0 && accuracies[i] <= 1.0, "uncertainty_weights: accuracy outside [0,1]");
    w.u.push_back(confidence_score(entropies[i], cfg));
    w.s_raw.push_back(composite_score(accuracies[i], w.u.back(), cfg.lambda));
  }
  auto norm = normalize_scores(w.s_raw, cfg.eps_s);
  w.alpha = std::move(norm.alpha);
  w.fallback = norm.fallback;
  return w;
}

/// theta_c = sum_i alpha_i theta_i, accumulated in ascending index order.
inline ParamVector aggregate_params(std::span<const ParamVector> params, std::span<const double> alpha) {
  detail::require(!params.empty(), "aggregate_params: no parameter vectors");
  detail::require(params.size() == alpha.size(), "aggregate_params: " + std::to_string(alpha.size()) +
                                                     " weights for " + std::to_string(params.size()) + " vectors");
  for (const auto& p : params)
    detail::require(p.compatible_with(params[0]), "aggregate_params: parameter descriptors differ");
  double sum = 0.0;
  for (double a : alpha) {
    detail::require(a >= 0.0, "aggregate_params: negative weight");
    sum += a;
  }
  detail::require(std::abs(sum - 1.0) <= 1e-9, "aggregate_params: weights sum to " + std::to_string(sum));

  const std::size_t n = params[0].size();
  std::vector<double> out(n);
  const auto& first = params[0].values();
  for (std::size_t j = 0; j < n; ++j) out[j] = alpha[0] * first[j];
  for (std::size_t i = 1; i < params.size(); ++i) {
    const auto& v = params[i].values();
    const double a = alpha[i];
    if (a == 0.0) continue;  // keeps alpha = e_k an exact selection, signed zeros included
    for (std::size_t j = 0; j < n; ++j) out[j] += a * v[j];
  }
  return ParamVector(params[0].shape(), std::move(out));
}

inline double sum_of_squares(std::span<const double> alpha) noexcept {
  double s = 0.0;
  for (double a : alpha) s += a * a;
  return s;
}

}  // namespace d2c
