// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "dcsst/error.hpp"
#include "dcsst/optim.hpp"
#include "test_util.hpp"

namespace dcsst {
namespace {

using testing::bit_equal;

void set_grad(Tensor& p, const std::vector<double>& g) {
  auto buf = p.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i];
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // After bias correction m/sqrt(v) = g/|g|, so each weight moves lr * sign(g).
  Tensor p({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  Optimizer opt({p}, OptimizerConfig{});
  set_grad(p, {0.3, -4.0, 1e-3});
  opt.step(0.01);
  const double eps = 1e-8;
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.3 / (0.3 + eps), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 4.0 / (4.0 + eps), 1e-15);
  EXPECT_NEAR(p[2], 0.5 - 0.01 * 1e-3 / (1e-3 + eps), 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, SecondStepOracle) {
  Tensor p({1}, {0.0});
  p.set_requires_grad(true);
  OptimizerConfig cfg;
  Optimizer opt({p}, cfg);
  set_grad(p, {2.0});
  opt.step(0.1);
  opt.zero_grad();
  set_grad(p, {-1.0});
  opt.step(0.1);
  double m = 0.0, v = 0.0, w = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? 2.0 : -1.0;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    w -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  EXPECT_NEAR(p[0], w, 1e-15);
}

TEST(Adam, ZeroGradientLeavesWeights) {
  Rng rng(1);
  Tensor p = Tensor::randn({4}, rng);
  const Tensor before = p.detach();
  p.set_requires_grad(true);
  Optimizer opt({p}, OptimizerConfig{});
  opt.step(0.1);
  set_grad(p, {0, 0, 0, 0});
  opt.step(0.1);
  EXPECT_TRUE(bit_equal(p, before));
}

TEST(SgdMomentum, VelocityOracle) {
  Tensor p({2}, {1.0, 1.0});
  p.set_requires_grad(true);
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::SgdMomentum;
  cfg.momentum = 0.5;
  Optimizer opt({p}, cfg);
  set_grad(p, {1.0, -2.0});
  opt.step(0.1);
  EXPECT_NEAR(p[0], 0.9, 1e-15);
  EXPECT_NEAR(p[1], 1.2, 1e-15);
  opt.step(0.1);  // same gradient again: velocity 1.5 g
  EXPECT_NEAR(p[0], 0.9 - 0.15, 1e-15);
  EXPECT_NEAR(p[1], 1.2 + 0.3, 1e-15);
}

TEST(Adam, ConvergesOnQuadratic) {
  Rng rng(2);
  const Tensor target = Tensor::randn({6}, rng, 3.0);
  Tensor p = Tensor::zeros({6});
  p.set_requires_grad(true);
  Optimizer opt({p}, OptimizerConfig{});
  const SchedulerConfig sched{};
  for (std::size_t step = 0; step < 500; ++step) {
    opt.zero_grad();
    auto g = p.grad_buffer();
    for (std::size_t i = 0; i < 6; ++i) g[i] = 2.0 * (p[i] - target[i]);
    opt.step(scheduled_lr(sched, 0.1, step, 500));
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(p[i], target[i], 1e-3);
}

TEST(Scheduler, CosineEndpointsAndMonotone) {
  const SchedulerConfig c{};
  EXPECT_DOUBLE_EQ(scheduled_lr(c, 1e-4, 0, 50), 1e-4);
  EXPECT_NEAR(scheduled_lr(c, 1e-4, 50, 50), 1e-6, 1e-18);
  EXPECT_NEAR(scheduled_lr(c, 1e-4, 25, 50), 0.5 * (1e-4 + 1e-6), 1e-18);
  for (std::size_t e = 1; e <= 50; ++e) {
    EXPECT_LT(scheduled_lr(c, 1e-4, e, 50), scheduled_lr(c, 1e-4, e - 1, 50));
  }
}

TEST(Scheduler, StepAndConstant) {
  SchedulerConfig s;
  s.kind = SchedulerKind::Step;
  s.step_size = 10;
  s.gamma = 0.5;
  EXPECT_EQ(scheduled_lr(s, 1.0, 9, 50), 1.0);
  EXPECT_EQ(scheduled_lr(s, 1.0, 10, 50), 0.5);
  EXPECT_EQ(scheduled_lr(s, 1.0, 25, 50), 0.25);
  s.kind = SchedulerKind::Constant;
  EXPECT_EQ(scheduled_lr(s, 0.3, 40, 50), 0.3);
  EXPECT_THROW(parse_scheduler_kind("linear"), ConfigError);
  EXPECT_THROW(parse_optimizer_kind("rmsprop"), ConfigError);
  EXPECT_EQ(parse_optimizer_kind(optimizer_kind_name(OptimizerKind::SgdMomentum)), OptimizerKind::SgdMomentum);
}

TEST(Optimizer, StateRoundTripResumesExactly) {
  Rng rng(3);
  const Tensor init = Tensor::randn({5}, rng);
  const std::vector<std::vector<double>> grads{{1, 2, 3, 4, 5}, {-1, 0, 1, 0, -1}, {0.5, 0.5, 0.5, 0.5, 0.5}};
  auto make = [&] {
    Tensor p = init.detach();
    p.set_requires_grad(true);
    return p;
  };
  Tensor a = make();
  Optimizer oa({a}, OptimizerConfig{});
  for (const auto& g : grads) {
    oa.zero_grad();
    set_grad(a, g);
    oa.step(0.01);
  }

  Tensor b = make();
  Optimizer ob({b}, OptimizerConfig{});
  ob.zero_grad();
  set_grad(b, grads[0]);
  ob.step(0.01);
  std::stringstream state;
  ob.save_state(state);
  Tensor c = b.detach();
  c.set_requires_grad(true);
  Optimizer oc({c}, OptimizerConfig{});
  oc.load_state(state);
  EXPECT_EQ(oc.steps(), 1u);
  for (std::size_t i = 1; i < grads.size(); ++i) {
    oc.zero_grad();
    set_grad(c, grads[i]);
    oc.step(0.01);
  }
  EXPECT_TRUE(bit_equal(a, c));

  OptimizerConfig sgd;
  sgd.kind = OptimizerKind::SgdMomentum;
  Optimizer wrong({c}, sgd);
  std::stringstream again;
  oc.save_state(again);
  EXPECT_THROW(wrong.load_state(again), FormatError);
}

}  // namespace
}  // namespace dcsst
