// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcsst/tensor.hpp"

namespace dcsst {

enum class OptimizerKind { Adam, SgdMomentum };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.9;  // SGD only
};

/// First-order optimizer over a fixed list of parameter tensors. step()
/// reads each parameter's accumulated gradient; a parameter without a
/// gradient is treated as having a zero gradient.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerConfig cfg);

  void step(double lr);
  void zero_grad();
  std::size_t steps() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

  /// Moment buffers and step count, for exact resumption.
  void save_state(std::ostream& out) const;
  void load_state(std::istream& in);

 private:
  std::vector<Tensor> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

enum class SchedulerKind { Cosine, Step, Constant };

struct SchedulerConfig {
  SchedulerKind kind = SchedulerKind::Cosine;
  double min_lr_ratio = 0.01;  // cosine floor, as a fraction of the initial lr
  std::size_t step_size = 10;  // step decay period in epochs
  double gamma = 0.5;          // step decay factor
};

/// Learning rate for (0-based) `epoch` of `total_epochs`. Cosine decays from
/// lr0 at epoch 0 to min_lr_ratio * lr0 at epoch total_epochs.
double scheduled_lr(const SchedulerConfig& cfg, double lr0, std::size_t epoch,
                    std::size_t total_epochs);

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string optimizer_kind_name(OptimizerKind kind);
SchedulerKind parse_scheduler_kind(const std::string& name);
std::string scheduler_kind_name(SchedulerKind kind);

}  // namespace dcsst
