// SPDX-License-Identifier: Apache-2.0
#include "dcsst/optim.hpp"

#include <cmath>
#include <numbers>

#include "dcsst/error.hpp"
#include "dcsst/serialize.hpp"

namespace dcsst {

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].numel(), 0.0);
    if (cfg_.kind == OptimizerKind::Adam) v_[i].assign(params_[i].numel(), 0.0);
  }
}

void Optimizer::step(double lr) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    auto w = p.mutable_data();
    auto& m = m_[i];
    const auto g = p.grad();
    const bool has = !g.empty();
    if (cfg_.kind == OptimizerKind::Adam) {
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = has ? g[k] : 0.0;
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      }
    } else {
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = cfg_.momentum * m[k] + (has ? g[k] : 0.0);
        w[k] -= lr * m[k];
      }
    }
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::save_state(std::ostream& out) const {
  write_u32(out, static_cast<std::uint32_t>(cfg_.kind));
  write_u64(out, steps_);
  write_u64(out, params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    write_tensor(out, Tensor({m_[i].size()}, m_[i]));
    if (cfg_.kind == OptimizerKind::Adam) write_tensor(out, Tensor({v_[i].size()}, v_[i]));
  }
}

void Optimizer::load_state(std::istream& in) {
  if (read_u32(in) != static_cast<std::uint32_t>(cfg_.kind)) {
    throw FormatError("optimizer state was written by a different optimizer kind");
  }
  const std::uint64_t steps = read_u64(in);
  if (read_u64(in) != params_.size()) throw FormatError("optimizer state parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto load = [&](std::vector<double>& dst) {
      const Tensor t = read_tensor(in);
      if (t.numel() != dst.size()) throw FormatError("optimizer state buffer size mismatch");
      dst.assign(t.data().begin(), t.data().end());
    };
    load(m_[i]);
    if (cfg_.kind == OptimizerKind::Adam) load(v_[i]);
  }
  steps_ = steps;
}

double scheduled_lr(const SchedulerConfig& cfg, double lr0, std::size_t epoch,
                    std::size_t total_epochs) {
  switch (cfg.kind) {
    case SchedulerKind::Constant:
      return lr0;
    case SchedulerKind::Step:
      return lr0 * std::pow(cfg.gamma, static_cast<double>(epoch / std::max<std::size_t>(1, cfg.step_size)));
    case SchedulerKind::Cosine: {
      if (total_epochs == 0) return lr0;
      const double f = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(total_epochs));
      const double floor = cfg.min_lr_ratio * lr0;
      return floor + (lr0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
    }
  }
  return lr0;
}

OptimizerKind parse_optimizer_kind(const std::string& name) {
  if (name == "adam") return OptimizerKind::Adam;
  if (name == "sgd") return OptimizerKind::SgdMomentum;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string optimizer_kind_name(OptimizerKind kind) {
  return kind == OptimizerKind::Adam ? "adam" : "sgd";
}

SchedulerKind parse_scheduler_kind(const std::string& name) {
  if (name == "cosine") return SchedulerKind::Cosine;
  if (name == "step") return SchedulerKind::Step;
  if (name == "constant") return SchedulerKind::Constant;
  throw ConfigError("unknown scheduler '" + name + "' (expected cosine, step or constant)");
}

std::string scheduler_kind_name(SchedulerKind kind) {
  switch (kind) {
    case SchedulerKind::Cosine: return "cosine";
    case SchedulerKind::Step: return "step";
    case SchedulerKind::Constant: return "constant";
  }
  return "cosine";
}

}  // namespace dcsst
