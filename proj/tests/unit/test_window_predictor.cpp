// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <vector>

#include <gtest/gtest.h>

#include "dcsst/attention.hpp"
#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"
#include "dcsst/window_predictor.hpp"
#include "test_util.hpp"

namespace dcsst {
namespace {

using testing::bit_equal;
using testing::max_abs_diff;

AttentionParams random_params(std::size_t c, Rng& rng) {
  AttentionParams p;
  for (Tensor* t : {&p.wq, &p.wk, &p.wv, &p.wo}) *t = Tensor::randn({c, c}, rng, 0.5);
  for (Tensor* t : {&p.bq, &p.bk, &p.bv, &p.bo}) *t = Tensor::randn({c}, rng, 0.1);
  return p;
}

StageMixture one_hot(std::size_t batch, std::size_t scales, std::size_t k) {
  Tensor w = Tensor::zeros({batch, scales});
  for (std::size_t b = 0; b < batch; ++b) w.mutable_data()[b * scales + k] = 1.0;
  return {w};
}

TEST(PredictScales, ZeroWeightsGiveUniformField) {
  Rng rng(1);
  const Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  const ScaleField f = predict_scales(x, Tensor::zeros({3, 3}), Tensor::zeros({3}), {2, 4, 8});
  EXPECT_EQ(f.probs.shape(), (Shape{2, 3, 8, 8}));
  for (double v : f.probs.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(PredictScales, SaturatedBiasIsOneHot) {
  Rng rng(2);
  const Tensor x = Tensor::randn({1, 3, 4, 4}, rng, 0.1);
  const ScaleField f = predict_scales(x, Tensor::zeros({3, 3}), Tensor({3}, {0.0, 20.0, 0.0}), {2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) EXPECT_GT(f.probs[16 + i], 1.0 - 1e-8);
}

TEST(PredictScales, SumsToOnePerPixel) {
  Rng rng(3);
  const Tensor x = Tensor::randn({2, 3, 5, 6}, rng, 2.0);
  const ScaleField f = predict_scales(x, Tensor::randn({3, 3}, rng), Tensor::randn({3}, rng), {2, 4, 5});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 30; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += f.probs[(b * 3 + k) * 30 + i];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(PredictScales, TranslationConsistent) {
  Rng rng(4);
  const std::size_t C = 3, H = 6, W = 5, dy = 2, dx = 3;
  const Tensor x = Tensor::randn({1, C, H, W}, rng);
  const Tensor w = Tensor::randn({3, C}, rng), b = Tensor::randn({3}, rng);
  auto roll = [&](const Tensor& t, std::size_t ch) {
    Tensor r({1, ch, H, W});
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t xx = 0; xx < W; ++xx) {
          r.mutable_data()[(c * H + (y + dy) % H) * W + (xx + dx) % W] = t[(c * H + y) * W + xx];
        }
      }
    }
    return r;
  };
  const Tensor shifted = predict_scales(roll(x, C), w, b, {2, 4, 5}).probs;
  EXPECT_TRUE(bit_equal(shifted, roll(predict_scales(x, w, b, {2, 4, 5}).probs, 3)));
}

TEST(PredictScales, RejectsBadCandidates) {
  Rng rng(5);
  const Tensor x = Tensor::randn({1, 3, 4, 4}, rng);
  EXPECT_THROW(predict_scales(x, Tensor::zeros({2, 3}), Tensor::zeros({2}), {2, 8}), ConfigError);
  EXPECT_THROW(predict_scales(x, Tensor::zeros({1, 3}), Tensor::zeros({1}), {2}), ConfigError);
  EXPECT_THROW(predict_scales(x, Tensor::zeros({3, 3}), Tensor::zeros({3}), {2, 4}), ConfigError);
}

TEST(PoolToStage, ConstantAndOneHotFields) {
  ScaleField f{Tensor({1, 3, 4, 4}), {2, 4, 4}};
  const double dist[3] = {0.2, 0.5, 0.3};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < 16; ++i) f.probs.mutable_data()[k * 16 + i] = dist[k];
  }
  const StageMixture m = pool_to_stage(f, 2, 2);
  EXPECT_EQ(m.weights.shape(), (Shape{1, 3}));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(m.weights[k], dist[k], 1e-15);

  ScaleField g{Tensor::zeros({2, 3, 4, 4}), {2, 4, 4}};
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 16; ++i) g.probs.mutable_data()[(b * 3 + 1) * 16 + i] = 1.0;
  }
  const StageMixture h = pool_to_stage(g, 1, 1);
  for (std::size_t b = 0; b < 2; ++b) {
    EXPECT_EQ(h.weights[b * 3 + 0], 0.0);
    EXPECT_EQ(h.weights[b * 3 + 1], 1.0);
    EXPECT_EQ(h.weights[b * 3 + 2], 0.0);
  }
}

TEST(PoolToStage, RowsSumToOne) {
  Rng rng(6);
  const Tensor x = Tensor::randn({3, 3, 8, 8}, rng);
  const ScaleField f = predict_scales(x, Tensor::randn({3, 3}, rng), Tensor::randn({3}, rng), {2, 4, 8});
  const StageMixture m = pool_to_stage(f, 4, 4);
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_NEAR(m.weights[b * 3] + m.weights[b * 3 + 1] + m.weights[b * 3 + 2], 1.0, 1e-9);
  }
}

TEST(Harden, ArgmaxWithLowIndexTies) {
  const StageMixture m{Tensor({3, 3}, {0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8})};
  const StageMixture h = harden(m);
  const std::vector<double> expected{0, 1, 0, 1, 0, 0, 0, 0, 1};
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(h.weights[i], expected[i]);
}

TEST(BlockShift, HalfWindowOnShiftedBlocks) {
  EXPECT_EQ(block_shift(4, 8, 8, false), 0u);
  EXPECT_EQ(block_shift(4, 8, 8, true), 2u);
  EXPECT_EQ(block_shift(3, 9, 9, true), 1u);
  EXPECT_EQ(block_shift(8, 8, 8, true), 0u);
}

// The one-hot reduction, bit for bit and at every candidate.
TEST(DynamicWindowAttention, OneHotMixtureEqualsFixedWindow) {
  Rng rng(7);
  const std::vector<std::size_t> cands{2, 4, 8};
  const AttentionConfig cfg{4, 2};
  for (int trial = 0; trial < 3; ++trial) {
    const Tensor x = Tensor::randn({2, 4, 8, 8}, rng);
    const AttentionParams p = random_params(4, rng);
    for (bool shifted : {false, true}) {
      for (std::size_t k = 0; k < cands.size(); ++k) {
        const Tensor y = dynamic_window_attention(x, one_hot(2, 3, k), p, cfg, cands, shifted);
        const Tensor ref = window_attention(x, p, cfg, {cands[k], block_shift(cands[k], 8, 8, shifted)});
        EXPECT_LE(max_abs_diff(y, ref), 1e-12);
        EXPECT_TRUE(bit_equal(y, ref));
      }
    }
  }
}

TEST(DynamicWindowAttention, DuplicateCandidatesMatchSingleWindow) {
  Rng rng(8);
  const AttentionConfig cfg{4, 2};
  const Tensor x = Tensor::randn({1, 4, 8, 8}, rng);
  const AttentionParams p = random_params(4, rng);
  const StageMixture uniform{Tensor::full({1, 2}, 0.5)};
  const Tensor y = dynamic_window_attention(x, uniform, p, cfg, {4, 4}, false);
  EXPECT_LE(max_abs_diff(y, window_attention(x, p, cfg, {4, 0})), 1e-12);
}

TEST(DynamicWindowAttention, OutputInsideConvexHullOfScales) {
  Rng rng(9);
  const std::vector<std::size_t> cands{2, 4, 8};
  const AttentionConfig cfg{4, 2};
  const Tensor x = Tensor::randn({2, 4, 8, 8}, rng);
  const AttentionParams p = random_params(4, rng);
  Tensor w = Tensor::uniform({2, 3}, rng, 0.1, 1.0);
  const StageMixture m{normalize_rows(w)};
  const Tensor y = dynamic_window_attention(x, m, p, cfg, cands, true);
  std::vector<Tensor> outs;
  for (std::size_t c : cands) outs.push_back(window_attention(x, p, cfg, {c, block_shift(c, 8, 8, true)}));
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double lo = std::min({outs[0][i], outs[1][i], outs[2][i]});
    const double hi = std::max({outs[0][i], outs[1][i], outs[2][i]});
    EXPECT_GE(y[i], lo - 1e-9);
    EXPECT_LE(y[i], hi + 1e-9);
  }
}

}  // namespace
}  // namespace dcsst
