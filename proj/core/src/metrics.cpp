// SPDX-License-Identifier: Apache-2.0
#include "dcsst/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dcsst/error.hpp"

namespace dcsst {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : n_(num_classes), counts_(num_classes * num_classes, 0) {
  if (num_classes < 2) throw ConfigError("a confusion matrix needs at least two classes");
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::span<const int> truth,
                                                  std::span<const int> predicted,
                                                  std::size_t num_classes) {
  if (truth.size() != predicted.size()) {
    throw DimensionError("truth and predictions differ in length");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  const auto n = static_cast<int>(n_);
  if (truth < 0 || truth >= n || predicted < 0 || predicted >= n) {
    throw IndexError("class pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                     ") outside a " + std::to_string(n_) + "-class matrix");
  }
  counts_[static_cast<std::size_t>(truth) * n_ + static_cast<std::size_t>(predicted)] += count;
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  if (truth >= n_ || predicted >= n_) {
    throw IndexError("class pair (" + std::to_string(truth) + ", " + std::to_string(predicted) +
                     ") outside a " + std::to_string(n_) + "-class matrix");
  }
  return counts_[truth * n_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t t = 0; t < n_; ++t) s += at(t, predicted);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (std::size_t k = 0; k < n_; ++k) s += at(k, k);
  return s;
}

std::string ConfusionMatrix::to_csv(const std::vector<std::string>& class_names) const {
  auto name = [&](std::size_t k) {
    return k < class_names.size() ? class_names[k] : std::to_string(k);
  };
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t p = 0; p < n_; ++p) os << ',' << name(p);
  os << '\n';
  for (std::size_t t = 0; t < n_; ++t) {
    os << name(t);
    for (std::size_t p = 0; p < n_; ++p) os << ',' << at(t, p);
    os << '\n';
  }
  return os.str();
}

double auc_binary(std::span<const double> scores, std::span<const int> is_positive) {
  if (scores.size() != is_positive.size()) throw DimensionError("scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Rank sums are kept doubled so tied groups stay integral.
  std::uint64_t pos_rank2 = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t avg2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (is_positive[order[k]]) {
        pos_rank2 += avg2;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::uint64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("AUC needs at least one positive and one negative sample");
  }
  const std::uint64_t u2 = pos_rank2 - n_pos * (n_pos + 1);
  return static_cast<double>(u2) / 2.0 / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auc_roc(std::span<const double> probs, std::span<const int> truth, std::size_t num_classes,
               Warnings* warnings) {
  const std::size_t N = truth.size();
  if (probs.size() != N * num_classes) {
    throw DimensionError("probabilities must be [N, C] = [" + std::to_string(N) + ", " +
                         std::to_string(num_classes) + "]");
  }
  std::vector<std::size_t> count(num_classes, 0);
  for (int t : truth) {
    if (t < 0 || static_cast<std::size_t>(t) >= num_classes) throw IndexError("truth label out of range");
    ++count[static_cast<std::size_t>(t)];
  }
  const auto present = std::count_if(count.begin(), count.end(), [](std::size_t c) { return c > 0; });
  if (present < 2) throw UndefinedMetricError("AUC is undefined when only one class is present");
  std::vector<double> scores(N);
  std::vector<int> pos(N);
  auto one_vs_rest = [&](std::size_t k) {
    for (std::size_t i = 0; i < N; ++i) {
      scores[i] = probs[i * num_classes + k];
      pos[i] = truth[i] == static_cast<int>(k);
    }
    return auc_binary(scores, pos);
  };
  if (num_classes == 2) return one_vs_rest(1);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (count[k] == 0) {
      if (warnings) warnings->push_back("AUC: class " + std::to_string(k) + " absent from truth; skipped");
      continue;
    }
    sum += one_vs_rest(k);
    ++used;
  }
  return sum / static_cast<double>(used);
}

double balanced_accuracy(const ConfusionMatrix& cm) {
  double sum = 0.0;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    const std::uint64_t row = cm.row_sum(k);
    if (row == 0) {
      throw UndefinedMetricError("balanced accuracy: class " + std::to_string(k) + " has no samples");
    }
    sum += static_cast<double>(cm.at(k, k)) / static_cast<double>(row);
  }
  return sum / static_cast<double>(cm.num_classes());
}

double f1_class(const ConfusionMatrix& cm, std::size_t cls, Warnings* warnings) {
  const std::uint64_t tp = cm.at(cls, cls);
  const std::uint64_t fn = cm.row_sum(cls) - tp;
  const std::uint64_t fp = cm.col_sum(cls) - tp;
  const std::uint64_t denom = 2 * tp + fp + fn;
  if (tp == 0) {
    if (warnings) {
      warnings->push_back("F1: class " + std::to_string(cls) +
                          " has zero precision and recall; defined as 0");
    }
    return 0.0;
  }
  return static_cast<double>(2 * tp) / static_cast<double>(denom);
}

double f1_macro(const ConfusionMatrix& cm, Warnings* warnings) {
  double sum = 0.0;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) sum += f1_class(cm, k, warnings);
  return sum / static_cast<double>(cm.num_classes());
}

double f1_score(const ConfusionMatrix& cm, Warnings* warnings) {
  return cm.num_classes() == 2 ? f1_class(cm, 1, warnings) : f1_macro(cm, warnings);
}

double cohens_kappa(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw UndefinedMetricError("Cohen's kappa of an empty matrix");
  // kappa = (n * trace - sum r_k c_k) / (n^2 - sum r_k c_k)
  long double chance = 0;
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    chance += static_cast<long double>(cm.row_sum(k)) * static_cast<long double>(cm.col_sum(k));
  }
  const long double n = static_cast<long double>(total);
  const long double denom = n * n - chance;
  if (denom == 0) throw UndefinedMetricError("Cohen's kappa is undefined when chance agreement is 1");
  return static_cast<double>((n * static_cast<long double>(cm.trace()) - chance) / denom);
}

RunMetrics evaluate_predictions(std::span<const double> probs, std::span<const int> truth,
                                std::size_t num_classes, Warnings* warnings) {
  std::vector<int> pred(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double* row = probs.data() + i * num_classes;
    pred[i] = static_cast<int>(std::max_element(row, row + num_classes) - row);
  }
  const ConfusionMatrix cm = ConfusionMatrix::from_predictions(truth, pred, num_classes);
  RunMetrics m;
  m.auc_roc = auc_roc(probs, truth, num_classes, warnings);
  m.balanced_accuracy = balanced_accuracy(cm);
  m.f1 = f1_score(cm, warnings);
  m.cohens_kappa = cohens_kappa(cm);
  return m;
}

std::string MetricSummary::format() const {
  char buf[64];
  if (stddev) {
    std::snprintf(buf, sizeof(buf), "%.4f ± %.4f", mean, *stddev);
  } else {
    std::snprintf(buf, sizeof(buf), "%.4f", mean);
  }
  return buf;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() >= 2) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

MetricsReport aggregate_runs(std::vector<RunMetrics> runs) {
  MetricsReport r;
  r.runs = std::move(runs);
  auto column = [&](double RunMetrics::*field) {
    std::vector<double> v;
    for (const auto& run : r.runs) v.push_back(run.*field);
    return summarize(v);
  };
  r.auc_roc = column(&RunMetrics::auc_roc);
  r.balanced_accuracy = column(&RunMetrics::balanced_accuracy);
  r.f1 = column(&RunMetrics::f1);
  r.cohens_kappa = column(&RunMetrics::cohens_kappa);
  return r;
}

std::string report_json(const MetricsReport& report) {
  using json = nlohmann::json;
  json runs = json::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"seed", r.seed},
                    {"auc_roc", r.auc_roc},
                    {"balanced_accuracy", r.balanced_accuracy},
                    {"f1", r.f1},
                    {"cohens_kappa", r.cohens_kappa}});
  }
  auto summary = [](const MetricSummary& s) {
    json o = {{"mean", s.mean}};
    if (s.stddev) o["std"] = *s.stddev;
    o["text"] = s.format();
    return o;
  };
  const json j = {{"runs", std::move(runs)},
                  {"aggregate",
                   {{"auc_roc", summary(report.auc_roc)},
                    {"balanced_accuracy", summary(report.balanced_accuracy)},
                    {"f1", summary(report.f1)},
                    {"cohens_kappa", summary(report.cohens_kappa)},
                    {"num_runs", report.runs.size()}}}};
  return j.dump(2) + "\n";
}

std::string report_table(const MetricsReport& report) {
  std::ostringstream os;
  os << "AUC-ROC            Balanced Acc       F1                 Cohen's Kappa\n";
  auto cell = [](const MetricSummary& s) {
    std::string t = s.format();
    // The ± sign is two bytes but one column wide.
    const std::size_t visible = t.size() - (s.stddev ? 1 : 0);
    if (visible < 19) t += std::string(19 - visible, ' ');
    return t;
  };
  os << cell(report.auc_roc) << cell(report.balanced_accuracy) << cell(report.f1)
     << report.cohens_kappa.format() << "\n";
  return os.str();
}

}  // namespace dcsst
