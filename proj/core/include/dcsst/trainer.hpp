// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcsst/config_text.hpp"
#include "dcsst/data.hpp"
#include "dcsst/diffusion.hpp"
#include "dcsst/model.hpp"
#include "dcsst/optim.hpp"
#include "dcsst/rng.hpp"

namespace dcsst {

/// Config keys: epochs, initial_lr, batch_size, eval_batch_size, tau,
/// pseudo_weight, warmup_epochs, optimizer, scheduler, min_lr_ratio,
/// step_size, gamma, consistency, consistency_weight, diffusion_steps,
/// beta_start, beta_end, t_max, seeds, checkpoint_every, log_wall_time.
struct TrainConfig {
  std::size_t epochs = 50;
  double initial_lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t eval_batch_size = 64;
  /// Confidence threshold; a pseudo-label needs max probability > tau.
  /// 1.0 disables pseudo-labelling.
  double tau = 0.9;
  double pseudo_weight = 0.8;
  std::size_t warmup_epochs = 2;
  OptimizerConfig optimizer;
  SchedulerConfig scheduler;
  bool consistency = false;
  double consistency_weight = 0.1;
  std::size_t diffusion_steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t t_max = 10;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3};
  std::size_t checkpoint_every = 1;
  /// When false, wall_ms is logged as 0 so logs are byte-reproducible.
  bool log_wall_time = true;

  void validate() const;
};

bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value);
KeyValues train_config_entries(const TrainConfig& cfg);

struct PseudoLabel {
  std::size_t index = 0;  // row in the unlabeled dataset
  int label = 0;
  double confidence = 0.0;
};

/// Rows whose max probability is strictly above tau, in row order. probs is [N, C].
std::vector<PseudoLabel> pseudo_labels_from_probs(const Tensor& probs, double tau);

/// Softmax of the model over `data` in row order, without recording. [N, C].
Tensor predict_probs(const DcsStModel& model, const TensorDataset& data, std::size_t batch_size);

/// Inference pass over the unlabeled pool in row order.
std::vector<PseudoLabel> generate_pseudo_labels(const DcsStModel& model, const TensorDataset& unlabeled,
                                                double tau, std::size_t batch_size);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double labeled_loss = 0.0;
  double pseudo_loss = 0.0;
  std::size_t pseudo_count = 0;
  std::optional<double> pseudo_precision;
  double consistency_loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
  /// Gradient provenance: samples of each pool that entered a backward pass.
  std::size_t labeled_samples_used = 0;
  std::size_t unlabeled_samples_used = 0;

  /// One JSON object on a single line.
  std::string to_json() const;
};

/// Fisher-Yates permutation of 0..n-1 driven by rng().
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

/// Runs the semi-supervised schedule on a model one epoch at a time:
///   e < warmup: labeled pass only;
///   otherwise: regenerate pseudo-labels from the current model, labeled
///   pass, weighted pass over the pseudo-labeled rows if any, optional
///   consistency pass over the unlabeled pool;
///   then the scheduler advances.
/// The unlabeled dataset's labels are used only to report pseudo precision.
class Trainer {
 public:
  Trainer(DcsStModel& model, TrainConfig cfg, const TensorDataset& labeled,
          const TensorDataset& unlabeled, std::uint64_t seed);

  EpochRecord run_epoch();
  bool done() const { return epoch_ >= cfg_.epochs; }
  std::size_t epoch() const { return epoch_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  const TrainConfig& config() const { return cfg_; }

  /// Weights, optimizer moments, RNG streams and history, for exact resumption.
  void save_state(const std::string& path) const;
  void load_state(const std::string& path);

 private:
  double train_step(const Tensor& images, const std::vector<int>& targets, double weight, double lr);

  DcsStModel& model_;
  TrainConfig cfg_;
  const TensorDataset& labeled_;
  const TensorDataset& unlabeled_;
  std::uint64_t seed_;
  std::vector<Tensor> params_;
  Optimizer optimizer_;
  NoiseSchedule schedule_;
  Rng shuffle_rng_;
  Rng noise_rng_;
  std::size_t epoch_ = 0;
  std::vector<EpochRecord> history_;
};

/// Runs all epochs; `on_epoch` sees each record as it completes.
std::vector<EpochRecord> train(DcsStModel& model, const TrainConfig& cfg, const TensorDataset& labeled,
                               const TensorDataset& unlabeled, std::uint64_t seed,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace dcsst
