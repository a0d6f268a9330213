// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcsst/data.hpp"
#include "dcsst/metrics.hpp"
#include "dcsst/model.hpp"
#include "dcsst/trainer.hpp"

namespace dcsst {

/// Which mechanisms a training arm keeps.
enum class Ablation { Full, NoDynamicWindow, NoCrossScale, Baseline };

Ablation parse_ablation(const std::string& name);  // full | no-dw | no-cs | baseline
std::string ablation_name(Ablation a);
void apply_ablation(ModelConfig& cfg, Ablation a);

/// Everything needed to replay a training run. The text form is one flat
/// key = value file holding model keys, train keys and the run keys
/// `ablation`, `supervised_only`, `manifest` and `split`.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  Ablation ablation = Ablation::Full;
  bool supervised_only = false;  // forces tau = 1
  std::string manifest;
  std::string split;

  /// Model and train configs with the ablation and supervised switch applied.
  ModelConfig effective_model() const;
  TrainConfig effective_train() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string run_config_text(const RunConfig& cfg);

/// Labeled, unlabeled and test pools normalized with statistics of the
/// labeled pool.
struct ExperimentData {
  DatasetManifest manifest;
  DatasetSplit split;
  ChannelStats stats;
  TensorDataset labeled, unlabeled, test;
};

ExperimentData load_experiment_data(const DatasetManifest& manifest, const DatasetSplit& split,
                                    std::size_t image_size);

struct RunResult {
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::vector<EpochRecord> history;
  Tensor test_probs;  // [N_test, C]
};

struct ExperimentOptions {
  std::string out_dir;  // empty: nothing is written
  bool resume = false;
  /// Stops after this many epochs have run in this call (simulated interruption).
  std::optional<std::size_t> stop_after;
  std::function<void(const std::string&)> log;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  MetricsReport report;
  bool complete = true;
};

/// Trains one model per seed and evaluates it on the test pool. With an
/// output directory the layout is:
///   run_config.txt, report.json, report.txt,
///   seed_<s>/{epochs.jsonl, state.bin, checkpoint.dcsm, predictions.jsonl,
///             confusion.csv, metrics.json}
ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentData& data,
                                const ExperimentOptions& options);

/// Checkpoint metadata and extra tensors for a trained model.
KeyValues checkpoint_metadata(const std::vector<std::string>& classes, std::uint64_t seed,
                              const RunConfig& cfg);
NamedTensors stats_tensors(const ChannelStats& stats);
ChannelStats stats_from_tensors(const NamedTensors& extra);

struct EvalResult {
  RunMetrics metrics;
  ConfusionMatrix confusion{2};
  Tensor probs;
  std::vector<std::string> ids;
  std::vector<int> truth;
  Warnings warnings;
};

/// Loads images for `ids`, normalizes them with the checkpoint's stored
/// statistics and evaluates. Throws VersionError when the checkpoint's class
/// table does not match the manifest's.
EvalResult evaluate_checkpoint(const Checkpoint& ckpt, const DatasetManifest& manifest,
                               const std::vector<std::string>& ids);

/// JSON-lines {id, truth, probs}.
std::string predictions_jsonl(const std::vector<std::string>& ids, const std::vector<int>& truth,
                              const Tensor& probs);
/// JSON report for one evaluation: metrics, confusion matrix, class names.
std::string eval_report_json(const EvalResult& result, const std::vector<std::string>& classes);

}  // namespace dcsst
