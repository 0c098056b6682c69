#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include <json.hpp>

#include "d2c/data.hpp"
#include "d2c/error.hpp"
#include "d2c/matrix.hpp"

namespace d2c {

struct Evaluation {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double log_loss = 0.0;
  double mcc = 0.0;
  double cohen_kappa = 0.0;
  double roc_auc_ovr = 0.0;
  double mean_entropy = 0.0;

  friend bool operator==(const Evaluation&, const Evaluation&) = default;
};

inline void to_json(nlohmann::json& j, const Evaluation& e) {
  j = nlohmann::json{{"accuracy", e.accuracy},         {"macro_f1", e.macro_f1}, {"log_loss", e.log_loss},
                     {"mcc", e.mcc},                   {"cohen_kappa", e.cohen_kappa},
                     {"roc_auc_ovr", e.roc_auc_ovr},   {"mean_entropy", e.mean_entropy}};
}

inline void from_json(const nlohmann::json& j, Evaluation& e) {
  j.at("accuracy").get_to(e.accuracy);
  j.at("macro_f1").get_to(e.macro_f1);
  j.at("log_loss").get_to(e.log_loss);
  j.at("mcc").get_to(e.mcc);
  j.at("cohen_kappa").get_to(e.cohen_kappa);
  j.at("roc_auc_ovr").get_to(e.roc_auc_ovr);
  j.at("mean_entropy").get_to(e.mean_entropy);
}

/// Argmax per row, ties to the lowest class index.
inline std::vector<Label> argmax_rows(const Matrix& probs) {
  std::vector<Label> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    out[r] = static_cast<Label>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// K x K counts; entry (i, j) = true class i predicted as j.
using ConfusionMatrix = std::vector<std::vector<std::size_t>>;

inline ConfusionMatrix confusion_matrix(std::span<const Label> pred, std::span<const Label> labels, std::size_t k) {
  detail::require(pred.size() == labels.size(), "confusion_matrix: length mismatch");
  ConfusionMatrix cm(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) {
    detail::require(pred[i] < k && labels[i] < k, "confusion_matrix: class index out of range");
    ++cm[labels[i]][pred[i]];
  }
  return cm;
}

/// Shannon entropy (natural log) of one probability row; 0 ln 0 = 0.
inline double entropy(std::span<const double> p) noexcept {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double mean_entropy(const Matrix& probs) {
  double total = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) total += entropy(probs.row(r));
  return total / static_cast<double>(probs.rows());
}

/// Mann-Whitney AUC of `scores` for the positive set; tied scores count one half.
/// Undefined (returns NaN) unless both sets are nonempty.
inline double binary_auc(std::span<const double> scores, std::span<const unsigned char> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (positive[order[t]]) {
        rank_sum += mid_rank;
        ++n_pos;
      }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nan("");
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

/// The classification battery plus mean prediction entropy.
///
/// Argmax ties go to the lowest class. F1 of a class with no support and no predictions is 0.
/// Cohen's kappa is 0 when chance agreement is 1 (a single class in play). The AUC is the
/// macro mean of one-vs-rest AUCs over classes that have both positives and negatives
/// (0.5 if there are none).
inline Evaluation evaluate(const Matrix& probs, std::span<const Label> labels, std::size_t k) {
  detail::require(probs.rows() == labels.size(), "evaluate: probability rows do not match label count");
  detail::require(probs.cols() == k, "evaluate: probability columns do not match K");
  detail::require(!labels.empty(), "evaluate: no rows");
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (double v : probs.row(r)) {
      detail::require(v >= 0.0 && std::isfinite(v), "evaluate: invalid probability entry");
      sum += v;
    }
    detail::require(std::abs(sum - 1.0) <= 1e-9, "evaluate: probability row " + std::to_string(r) + " sums to " +
                                                      std::to_string(sum));
    detail::require(labels[r] < k, "evaluate: label out of range");
  }

  const std::size_t n = labels.size();
  const double nd = static_cast<double>(n);
  const auto pred = argmax_rows(probs);
  const auto cm = confusion_matrix(pred, labels, k);

  std::vector<double> truth(k, 0.0), predicted(k, 0.0);
  double correct = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    correct += static_cast<double>(cm[i][i]);
    for (std::size_t j = 0; j < k; ++j) {
      truth[i] += static_cast<double>(cm[i][j]);
      predicted[j] += static_cast<double>(cm[i][j]);
    }
  }

  Evaluation ev;
  ev.accuracy = correct / nd;

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double tp = static_cast<double>(cm[c][c]);
    const double denom = truth[c] + predicted[c];  // 2tp + fp + fn
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  ev.macro_f1 = f1_sum / static_cast<double>(k);

  double ll = 0.0;
  for (std::size_t r = 0; r < n; ++r) ll -= std::log(std::max(probs(r, labels[r]), 1e-12));
  ev.log_loss = ll / nd;

  double pt = 0.0, pp = 0.0, tt = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    pt += predicted[c] * truth[c];
    pp += predicted[c] * predicted[c];
    tt += truth[c] * truth[c];
  }
  const double mcc_den = std::sqrt(nd * nd - pp) * std::sqrt(nd * nd - tt);
  ev.mcc = mcc_den > 0.0 ? (correct * nd - pt) / mcc_den : 0.0;

  const double p_o = correct / nd;
  const double p_e = pt / (nd * nd);
  ev.cohen_kappa = p_e < 1.0 ? (p_o - p_e) / (1.0 - p_e) : 0.0;

  double auc_sum = 0.0;
  std::size_t auc_classes = 0;
  std::vector<double> scores(n);
  std::vector<unsigned char> positive(n);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      scores[r] = probs(r, c);
      positive[r] = labels[r] == c;
    }
    const double auc = binary_auc(scores, positive);
    if (!std::isnan(auc)) {
      auc_sum += auc;
      ++auc_classes;
    }
  }
  ev.roc_auc_ovr = auc_classes > 0 ? auc_sum / static_cast<double>(auc_classes) : 0.5;

  ev.mean_entropy = mean_entropy(probs);
  return ev;
}

}  // namespace d2c
