// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <vector>

#include <gtest/gtest.h>

#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"
#include "dcsst/trainer.hpp"
#include "test_util.hpp"

namespace dcsst {
namespace {

using testing::bit_equal;
using testing::TempDir;

TensorDataset random_pool(std::size_t n, std::uint64_t seed, bool labeled) {
  Rng rng(seed);
  TensorDataset d;
  d.images = Tensor::randn({n, 3, 16, 16}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels.push_back(labeled ? static_cast<int>(i % 4) : -1);
    d.ids.push_back("s" + std::to_string(seed) + "_" + std::to_string(i));
  }
  return d;
}

ModelConfig model_cfg() {
  ModelConfig c = ModelConfig::micro();
  c.zero_init_residual = false;
  c.init_std = 0.2;
  return c;
}

TrainConfig train_cfg() {
  TrainConfig t;
  t.epochs = 4;
  t.initial_lr = 1e-3;
  t.batch_size = 3;
  t.warmup_epochs = 1;
  t.log_wall_time = false;
  t.seeds = {0};
  return t;
}

bool same_weights(const DcsStModel& a, const DcsStModel& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bit_equal(pa[i], pb[i])) return false;
  }
  return true;
}

TEST(PseudoLabels, ThresholdIsStrict) {
  const Tensor probs({3, 2}, {0.95, 0.05, 0.85, 0.15, 0.9, 0.1});
  const auto kept = pseudo_labels_from_probs(probs, 0.9);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].index, 0u);
  EXPECT_EQ(kept[0].label, 0);
  EXPECT_EQ(kept[0].confidence, 0.95);
  EXPECT_TRUE(pseudo_labels_from_probs(probs, 1.0).empty());
}

TEST(PseudoLabels, SelectionProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 30, c = 2 + rng() % 3;
    const Tensor probs = softmax(Tensor::randn({n, c}, rng, 3.0), 1);
    const double tau = uniform01(rng);
    const auto kept = pseudo_labels_from_probs(probs, tau);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = probs.data().subspan(i * c, c);
      const auto top = std::max_element(row.begin(), row.end());
      if (*top > tau) {
        ASSERT_LT(k, kept.size());
        EXPECT_EQ(kept[k].index, i);
        EXPECT_EQ(kept[k].label, static_cast<int>(top - row.begin()));
        ++k;
      }
    }
    EXPECT_EQ(k, kept.size());
  }
}

// With tau = 1 the schedule must collapse to a plain supervised loop.
TEST(Trainer, TauOneIsPlainSupervisedTraining) {
  const TensorDataset labeled = random_pool(8, 1, true), unlabeled = random_pool(10, 2, false);
  TrainConfig cfg = train_cfg();
  cfg.tau = 1.0;
  DcsStModel semi(model_cfg(), 5);
  Trainer trainer(semi, cfg, labeled, unlabeled, 9);
  while (!trainer.done()) {
    const EpochRecord r = trainer.run_epoch();
    EXPECT_EQ(r.pseudo_count, 0u);
    EXPECT_EQ(r.unlabeled_samples_used, 0u);
  }

  DcsStModel plain(model_cfg(), 5);
  plain.set_requires_grad(true);
  Optimizer opt(plain.parameters(), cfg.optimizer);
  Rng shuffle = make_stream(9, "shuffle");
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = scheduled_lr(cfg.scheduler, cfg.initial_lr, e, cfg.epochs);
    const auto order = shuffled_indices(labeled.size(), shuffle);
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
      const std::vector<std::size_t> rows(order.begin() + s, order.begin() + std::min(order.size(), s + cfg.batch_size));
      opt.zero_grad();
      Tape tape;
      Tensor loss;
      {
        TapeScope scope(tape);
        loss = cross_entropy(plain.classify(labeled.batch(rows)), labeled.batch_labels(rows));
      }
      tape.backward(loss);
      opt.step(lr);
    }
  }
  EXPECT_TRUE(same_weights(semi, plain));
}

TEST(Trainer, PseudoWeightScalesLossAndGradients) {
  DcsStModel m(model_cfg(), 3);
  Rng rng(5);
  const Tensor x = Tensor::randn({4, 3, 16, 16}, rng);
  const std::vector<int> y{0, 1, 2, 3};
  auto grads = [&](double w) {
    m.set_requires_grad(true);
    for (auto& p : m.parameters()) p.zero_grad();
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = cross_entropy(m.classify(x), y, std::vector<double>(4, w));
    }
    tape.backward(loss);
    std::vector<double> g;
    for (const auto& p : m.parameters()) g.insert(g.end(), p.grad().begin(), p.grad().end());
    return std::make_pair(loss.item(), g);
  };
  const auto [l1, g1] = grads(1.0);
  const auto [l8, g8] = grads(0.8);
  EXPECT_EQ(l8, 0.8 * l1);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g8[i], 0.8 * g1[i], 1e-15 + 1e-13 * std::abs(g1[i]));
}

TEST(Trainer, WarmupNeverTouchesUnlabeledPool) {
  const TensorDataset labeled = random_pool(8, 1, true);
  const TensorDataset pool_a = random_pool(10, 2, false), pool_b = random_pool(6, 3, false);
  TrainConfig cfg = train_cfg();
  cfg.warmup_epochs = 2;
  cfg.tau = 0.01;
  cfg.consistency = true;
  DcsStModel a(model_cfg(), 5), b(model_cfg(), 5);
  Trainer ta(a, cfg, labeled, pool_a, 1), tb(b, cfg, labeled, pool_b, 1);
  for (int e = 0; e < 2; ++e) {
    EXPECT_EQ(ta.run_epoch().unlabeled_samples_used, 0u);
    EXPECT_EQ(tb.run_epoch().unlabeled_samples_used, 0u);
  }
  EXPECT_TRUE(same_weights(a, b));
  const EpochRecord r = ta.run_epoch();
  EXPECT_EQ(r.pseudo_count, 10u);
  EXPECT_EQ(r.unlabeled_samples_used, 20u);  // pseudo pass plus consistency pass
  EXPECT_GT(r.consistency_loss, 0.0);
}

TEST(Trainer, PseudoLabelsRegeneratedFromCurrentModelEachEpoch) {
  const TensorDataset labeled = random_pool(8, 1, true), unlabeled = random_pool(12, 4, true);
  TrainConfig cfg = train_cfg();
  cfg.epochs = 6;
  cfg.warmup_epochs = 1;
  cfg.tau = 0.3;
  cfg.initial_lr = 3e-3;
  DcsStModel m(model_cfg(), 7);
  Trainer t(m, cfg, labeled, unlabeled, 2);
  t.run_epoch();
  while (!t.done()) {
    const auto expected = generate_pseudo_labels(m, unlabeled, cfg.tau, 64);
    std::size_t correct = 0;
    for (const auto& p : expected) correct += unlabeled.labels[p.index] == p.label;
    const EpochRecord r = t.run_epoch();
    EXPECT_EQ(r.pseudo_count, expected.size());
    EXPECT_EQ(r.unlabeled_samples_used, expected.size());
    if (!expected.empty()) {
      ASSERT_TRUE(r.pseudo_precision.has_value());
      EXPECT_EQ(*r.pseudo_precision, static_cast<double>(correct) / expected.size());
    }
  }
}

TEST(Trainer, ResumeFromStateMatchesUninterrupted) {
  TempDir dir("trainer_resume");
  const TensorDataset labeled = random_pool(8, 1, true), unlabeled = random_pool(10, 2, true);
  TrainConfig cfg = train_cfg();
  cfg.tau = 0.3;
  cfg.consistency = true;

  DcsStModel full(model_cfg(), 5);
  Trainer tf(full, cfg, labeled, unlabeled, 3);
  while (!tf.done()) tf.run_epoch();

  {
    DcsStModel first(model_cfg(), 5);
    Trainer t1(first, cfg, labeled, unlabeled, 3);
    t1.run_epoch();
    t1.run_epoch();
    t1.save_state(dir.str("state.bin"));
  }
  DcsStModel resumed(model_cfg(), 99);
  Trainer t2(resumed, cfg, labeled, unlabeled, 3);
  t2.load_state(dir.str("state.bin"));
  EXPECT_EQ(t2.epoch(), 2u);
  while (!t2.done()) t2.run_epoch();

  EXPECT_TRUE(same_weights(full, resumed));
  ASSERT_EQ(tf.history().size(), t2.history().size());
  for (std::size_t i = 0; i < tf.history().size(); ++i) {
    EXPECT_EQ(tf.history()[i].to_json(), t2.history()[i].to_json());
  }

  DcsStModel other(model_cfg(), 5);
  Trainer wrong_seed(other, cfg, labeled, unlabeled, 4);
  EXPECT_THROW(wrong_seed.load_state(dir.str("state.bin")), ConfigError);
}

TEST(Trainer, RejectsEmptyLabeledPoolAndFinishedRuns) {
  const TensorDataset empty, unlabeled = random_pool(4, 2, false);
  DcsStModel m(model_cfg(), 1);
  EXPECT_THROW(Trainer(m, train_cfg(), empty, unlabeled, 0), ConfigError);
  TrainConfig cfg = train_cfg();
  cfg.epochs = 1;
  const TensorDataset labeled = random_pool(4, 1, true);
  Trainer t(m, cfg, labeled, unlabeled, 0);
  t.run_epoch();
  EXPECT_THROW(t.run_epoch(), ContractError);
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Trainer, TrainCallbackSeesEveryEpoch) {
  const TensorDataset labeled = random_pool(6, 1, true), unlabeled = random_pool(4, 2, false);
  DcsStModel m(model_cfg(), 1);
  std::size_t seen = 0;
  const auto h = train(m, train_cfg(), labeled, unlabeled, 0, [&](const EpochRecord& r) {
    EXPECT_EQ(r.epoch, ++seen);
    EXPECT_EQ(r.wall_ms, 0.0);
    EXPECT_NE(r.to_json().find("\"labeled_loss\""), std::string::npos);
  });
  EXPECT_EQ(seen, 4u);
  EXPECT_EQ(h.size(), 4u);
}

}  // namespace
}  // namespace dcsst
