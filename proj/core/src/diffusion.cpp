// SPDX-License-Identifier: Apache-2.0
#include "dcsst/diffusion.hpp"

#include <cmath>

#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"

namespace dcsst {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("noise schedule needs at least one step");
  alpha_bars_.assign(betas_.size() + 1, 1.0);
  for (std::size_t t = 1; t <= betas_.size(); ++t) {
    const double b = betas_[t - 1];
    if (!(b >= 0.0 && b < 1.0)) {
      throw ConfigError("beta_" + std::to_string(t) + " = " + std::to_string(b) +
                        " outside [0, 1)");
    }
    alpha_bars_[t] = alpha_bars_[t - 1] * (1.0 - b);
    if (b > 0.0 && !(alpha_bars_[t] < alpha_bars_[t - 1])) {
      throw ConfigError("alpha_bar is not decreasing at step " + std::to_string(t));
    }
  }
}

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps == 0) throw ConfigError("noise schedule needs at least one step");
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + f * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::noiseless(std::size_t steps) {
  return NoiseSchedule(std::vector<double>(steps, 0.0));
}

void NoiseSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > betas_.size()) {
    throw ConfigError("diffusion step " + std::to_string(t) + " outside [1, " +
                      std::to_string(betas_.size()) + "]");
  }
}

double NoiseSchedule::beta(std::size_t t) const {
  check_step(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha(std::size_t t) const { return 1.0 - beta(t); }

double NoiseSchedule::alpha_bar(std::size_t t) const {
  if (t == 0) return 1.0;
  check_step(t);
  return alpha_bars_[t];
}

Tensor forward_diffuse(const Tensor& x0, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
  const double ab = schedule.alpha_bar(t);
  if (t == 0) throw ConfigError("diffusion step 0 is not a noising step");
  const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
  Tensor out(x0.shape());
  auto o = out.mutable_data();
  const auto x = x0.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * x[i] + s * standard_normal(rng);
  return out;
}

Tensor forward_diffuse(const Tensor& x0, std::span<const std::size_t> ts,
                       const NoiseSchedule& schedule, Rng& rng) {
  if (x0.rank() == 0 || ts.size() != x0.dim(0)) {
    throw DimensionError("forward_diffuse: " + std::to_string(ts.size()) + " steps for batch " +
                         shape_str(x0.shape()));
  }
  const std::size_t row = x0.numel() / x0.dim(0);
  Tensor out(x0.shape());
  auto o = out.mutable_data();
  const auto x = x0.data();
  for (std::size_t b = 0; b < ts.size(); ++b) {
    if (ts[b] == 0) throw ConfigError("diffusion step 0 is not a noising step");
    const double ab = schedule.alpha_bar(ts[b]);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t i = b * row; i < (b + 1) * row; ++i) o[i] = a * x[i] + s * standard_normal(rng);
  }
  return out;
}

Tensor sample_chain(const Tensor& x0, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
  if (t == 0) throw ConfigError("diffusion step 0 is not a noising step");
  schedule.alpha_bar(t);  // range check
  Tensor out = x0.detach();
  auto o = out.mutable_data();
  for (std::size_t s = 1; s <= t; ++s) {
    const double a = std::sqrt(schedule.alpha(s)), sd = std::sqrt(schedule.beta(s));
    for (double& v : o) v = a * v + sd * standard_normal(rng);
  }
  return out;
}

Tensor consistency_loss(const Classifier& classify, const Tensor& x, const NoiseSchedule& schedule,
                        std::size_t t_max, Rng& rng) {
  if (t_max == 0 || t_max > schedule.steps()) {
    throw ConfigError("t_max " + std::to_string(t_max) + " outside [1, " +
                      std::to_string(schedule.steps()) + "]");
  }
  Tensor clean;
  {
    NoGradScope no_grad;
    clean = classify(x);
  }
  std::vector<std::size_t> ts(x.dim(0));
  for (auto& t : ts) t = 1 + static_cast<std::size_t>(rng() % t_max);
  const Tensor noisy = forward_diffuse(x, ts, schedule, rng);
  return kl_to_target(classify(noisy), clean);
}

}  // namespace dcsst
