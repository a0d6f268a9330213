// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dcsst {

/// counts(t, p): samples of true class t predicted as p.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);
  static ConfusionMatrix from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                          std::size_t num_classes);

  void add(int truth, int predicted, std::uint64_t count = 1);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t num_classes() const { return n_; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;
  std::uint64_t trace() const;

  /// Header row of predicted-class names, then one row per true class.
  std::string to_csv(const std::vector<std::string>& class_names) const;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

/// Non-fatal notes (skipped classes, degenerate F1 terms) are appended here
/// when a sink is given.
using Warnings = std::vector<std::string>;

/// Mann-Whitney statistic with average ranks for ties: the fraction of
/// (positive, negative) pairs ordered correctly, ties counting one half.
/// Throws UndefinedMetricError without both positives and negatives.
double auc_binary(std::span<const double> scores, std::span<const int> is_positive);

/// probs is row-major [N, C]. Two classes: binary AUC of class 1's score.
/// More classes: unweighted mean of one-vs-rest AUCs; classes absent from
/// `truth` are skipped with a warning. Fewer than two classes present is an
/// UndefinedMetricError.
double auc_roc(std::span<const double> probs, std::span<const int> truth, std::size_t num_classes,
               Warnings* warnings = nullptr);

/// Mean per-class recall. Throws UndefinedMetricError if a true class is empty.
double balanced_accuracy(const ConfusionMatrix& cm);

/// F1 of one class; 0 (with a warning) when precision + recall is zero.
double f1_class(const ConfusionMatrix& cm, std::size_t cls, Warnings* warnings = nullptr);
double f1_macro(const ConfusionMatrix& cm, Warnings* warnings = nullptr);
/// Binary matrices use class 1 as the positive class; larger ones use macro F1.
double f1_score(const ConfusionMatrix& cm, Warnings* warnings = nullptr);

/// (p_o - p_e) / (1 - p_e), evaluated from exact integer counts. Throws
/// UndefinedMetricError when p_e = 1 or the matrix is empty.
double cohens_kappa(const ConfusionMatrix& cm);

struct RunMetrics {
  std::uint64_t seed = 0;
  double auc_roc = 0.0;
  double balanced_accuracy = 0.0;
  double f1 = 0.0;
  double cohens_kappa = 0.0;
};

/// Metrics of one run from predicted probabilities [N, C] (argmax predictions).
RunMetrics evaluate_predictions(std::span<const double> probs, std::span<const int> truth,
                                std::size_t num_classes, Warnings* warnings = nullptr);

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> stddev;  // sample std, present for two or more runs

  /// "m ± s" with 4 decimals, or just "m" for a single run.
  std::string format() const;
};

MetricSummary summarize(std::span<const double> values);

struct MetricsReport {
  std::vector<RunMetrics> runs;
  MetricSummary auc_roc, balanced_accuracy, f1, cohens_kappa;
};

MetricsReport aggregate_runs(std::vector<RunMetrics> runs);

/// JSON with "runs" and "aggregate" blocks.
std::string report_json(const MetricsReport& report);
/// Plain-text table with one "m ± s" column per metric.
std::string report_table(const MetricsReport& report);

}  // namespace dcsst
