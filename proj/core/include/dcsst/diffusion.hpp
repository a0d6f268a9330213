// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dcsst/rng.hpp"
#include "dcsst/tensor.hpp"

namespace dcsst {

/// Forward noising schedule. Index t runs 1..T; alpha_bar(0) is 1.
class NoiseSchedule {
 public:
  /// Throws ConfigError unless every beta is in [0, 1). alpha_bar is then
  /// non-increasing, and strictly decreasing wherever beta > 0.
  explicit NoiseSchedule(std::vector<double> betas);

  /// betas evenly spaced from beta_start to beta_end (inclusive).
  static NoiseSchedule linear(std::size_t steps, double beta_start = 1e-4, double beta_end = 0.02);
  /// All betas zero: every step is the identity.
  static NoiseSchedule noiseless(std::size_t steps);

  std::size_t steps() const { return betas_.size(); }
  double beta(std::size_t t) const;
  double alpha(std::size_t t) const;
  double alpha_bar(std::size_t t) const;

 private:
  void check_step(std::size_t t) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // alpha_bars_[t], t = 0..T
};

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps in one shot.
/// Throws ConfigError unless 1 <= t <= T. The result is a constant tensor.
Tensor forward_diffuse(const Tensor& x0, std::size_t t, const NoiseSchedule& schedule, Rng& rng);

/// Per-sample steps: row b of x0[B, ...] is noised to step ts[b].
Tensor forward_diffuse(const Tensor& x0, std::span<const std::size_t> ts,
                       const NoiseSchedule& schedule, Rng& rng);

/// Runs the Markov chain x_s = sqrt(alpha_s) x_{s-1} + sqrt(beta_s) eps for s = 1..t.
Tensor sample_chain(const Tensor& x0, std::size_t t, const NoiseSchedule& schedule, Rng& rng);

using Classifier = std::function<Tensor(const Tensor&)>;

/// Mean KL(softmax(f(x)) || softmax(f(x_t))) with t ~ U{1..t_max} drawn per
/// sample. The clean branch is evaluated without recording and acts as a
/// fixed target; gradients flow through the noisy branch only.
Tensor consistency_loss(const Classifier& classify, const Tensor& x, const NoiseSchedule& schedule,
                        std::size_t t_max, Rng& rng);

}  // namespace dcsst
