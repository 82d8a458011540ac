#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fatl/errors.hpp"
#include "fatl/model.hpp"
#include "fatl/trainer.hpp"

// Discrimination and calibration metrics plus the cross-condition comparison
// table. AUROC is the Mann-Whitney statistic with half credit for ties,
// computed on integer counts with a single final division.

namespace fatl {

namespace detail {

inline void require_both_classes(std::span<const int> labels) {
  bool pos = false, neg = false;
  for (int y : labels) (y == 1 ? pos : neg) = true;
  if (!pos || !neg) throw MetricError("metric requires both classes present");
}

}  // namespace detail

// Midrank formulation: with doubled ranks every quantity stays integral,
//   2U = sum of doubled midranks over positives - n_pos * (n_pos + 1)
//   auroc = 2U / (2 * n_pos * n_neg)
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores/labels length mismatch");
  if (scores.empty()) throw MetricError("auroc of empty input");
  detail::require_both_classes(labels);

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::int64_t n_pos = 0;
  for (int y : labels) n_pos += y;
  const std::int64_t n_neg = static_cast<std::int64_t>(labels.size()) - n_pos;

  std::int64_t doubled_rank_sum = 0;  // doubled midranks of positives
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1..j share doubled midrank (i+1 + j)
    const std::int64_t doubled_midrank = static_cast<std::int64_t>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) doubled_rank_sum += doubled_midrank;
    i = j;
  }
  const std::int64_t numerator = doubled_rank_sum - n_pos * (n_pos + 1);
  const std::int64_t denominator = 2 * n_pos * n_neg;
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

struct Confusion {
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// Predict positive iff score >= threshold.
inline Confusion confusion_at(std::span<const double> scores, std::span<const int> labels,
                              double threshold) {
  if (scores.size() != labels.size()) throw MetricError("scores/labels length mismatch");
  detail::require_both_classes(labels);
  std::int64_t tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) (predicted ? tp : fn) += 1;
    else (predicted ? fp : tn) += 1;
  }
  return {static_cast<double>(tp) / static_cast<double>(tp + fn),
          static_cast<double>(tn) / static_cast<double>(tn + fp)};
}

inline double brier(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw MetricError("scores/labels length mismatch");
  if (scores.empty()) throw MetricError("brier of empty input");
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0)) throw MetricError("brier scores must lie in [0, 1]");
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double d = scores[i] - static_cast<double>(labels[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(scores.size());
}

struct YoudenPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

// Threshold maximizing J = sensitivity + specificity - 1 over the observed
// score values; ties break toward the smallest threshold.
inline YoudenPoint youden_threshold(std::span<const double> scores,
                                    std::span<const int> labels) {
  detail::require_both_classes(labels);
  std::vector<double> candidates(scores.begin(), scores.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  YoudenPoint best;
  double best_j = -2.0;
  for (double t : candidates) {
    const Confusion c = confusion_at(scores, labels, t);
    const double j = c.sensitivity + c.specificity - 1.0;
    if (j > best_j) {
      best_j = j;
      best = {t, c.sensitivity, c.specificity};
    }
  }
  return best;
}

struct EvalReport {
  std::string condition_tag;
  double auroc = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double threshold = 0.5;
  double brier = 0.0;
  YoudenPoint youden;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::string detail;  // e.g. which source model a selection condition chose
};

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                                  double threshold, const std::string& tag) {
  EvalReport report;
  report.condition_tag = tag;
  report.threshold = threshold;
  report.auroc = auroc(scores, labels);
  const Confusion c = confusion_at(scores, labels, threshold);
  report.sensitivity = c.sensitivity;
  report.specificity = c.specificity;
  report.brier = brier(scores, labels);
  report.youden = youden_threshold(scores, labels);
  for (int y : labels) (y == 1 ? report.n_pos : report.n_neg) += 1;
  return report;
}

struct Condition {
  std::string tag;
  LogisticModel model;
};

inline std::vector<double> score_records(const LogisticModel& model,
                                         std::span<const CanonicalRecord> records,
                                         const FeatureRegistry& registry,
                                         ImputePolicy policy) {
  std::vector<double> scores;
  scores.reserve(records.size());
  for (const auto& rec : records) {
    const std::vector<double> x = standardize_for_model(model, rec, registry, policy);
    scores.push_back(predict_proba(model.weights, model.bias, x));
  }
  return scores;
}

// One report per condition, all on the identical record set.
inline std::vector<EvalReport> compare_conditions(std::span<const CanonicalRecord> records,
                                                  std::span<const int> labels,
                                                  std::span<const Condition> conditions,
                                                  const FeatureRegistry& registry,
                                                  ImputePolicy policy, double threshold) {
  if (conditions.size() < 2)
    throw MetricError("compare_conditions requires at least two conditions");
  if (records.size() != labels.size()) throw MetricError("records/labels length mismatch");
  std::vector<EvalReport> reports;
  reports.reserve(conditions.size());
  for (const auto& condition : conditions) {
    const std::vector<double> scores = score_records(condition.model, records, registry, policy);
    reports.push_back(evaluate_scores(scores, labels, threshold, condition.tag));
  }
  return reports;
}

}  // namespace fatl
