// SPDX-License-Identifier: Apache-2.0
#include "dcsst/window_predictor.hpp"

#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"

namespace dcsst {

ScaleField predict_scales(const Tensor& x, const Tensor& w, const Tensor& b,
                          const std::vector<std::size_t>& candidates) {
  const std::size_t S = candidates.size();
  if (S < 2) throw ConfigError("the window predictor needs at least two candidate scales");
  if (w.rank() != 2 || w.dim(0) != S || b.shape() != Shape{S}) {
    throw ConfigError("predictor weights " + shape_str(w.shape()) + " / " + shape_str(b.shape()) +
                      " do not match " + std::to_string(S) + " candidates");
  }
  if (x.rank() != 4) throw DimensionError("predict_scales expects [B,C,H,W], got " + shape_str(x.shape()));
  for (std::size_t c : candidates) {
    if (c == 0 || c > x.dim(2) || c > x.dim(3)) {
      throw ConfigError("candidate window " + std::to_string(c) + " larger than the " +
                        std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) + " feature map");
    }
  }
  return ScaleField{softmax(conv1x1(x, w, b), 1), candidates};
}

StageMixture pool_to_stage(const ScaleField& field, std::size_t stage_height,
                           std::size_t stage_width) {
  const Tensor& p = field.probs;
  const std::size_t H = p.dim(2), W = p.dim(3);
  if (stage_height == 0 || stage_width == 0 || H % stage_height != 0 || W % stage_width != 0 ||
      H / stage_height != W / stage_width) {
    throw ConfigError("stage grid " + std::to_string(stage_height) + "x" +
                      std::to_string(stage_width) + " does not evenly divide the " +
                      std::to_string(H) + "x" + std::to_string(W) + " scale field");
  }
  const std::size_t factor = H / stage_height;
  const Tensor resized = factor == 1 ? p : avg_pool2d(p, factor);
  return StageMixture{normalize_rows(mean_pool(resized, {2, 3}))};
}

StageMixture harden(const StageMixture& mixture) {
  const Tensor& w = mixture.weights;
  const std::size_t B = w.dim(0), S = w.dim(1);
  Tensor hard({B, S});
  auto h = hard.mutable_data();
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t best = 0;
    for (std::size_t s = 1; s < S; ++s) {
      if (w[b * S + s] > w[b * S + best]) best = s;
    }
    h[b * S + best] = 1.0;
  }
  return StageMixture{hard};
}

std::size_t block_shift(std::size_t window, std::size_t height, std::size_t width, bool shifted) {
  if (!shifted || (window >= height && window >= width)) return 0;
  return window / 2;
}

Tensor dynamic_window_attention(const Tensor& x, const StageMixture& mixture,
                                const AttentionParams& params, const AttentionConfig& cfg,
                                const std::vector<std::size_t>& candidates, bool shifted) {
  if (candidates.empty()) throw ConfigError("dynamic window attention needs candidates");
  if (mixture.weights.rank() != 2 || mixture.weights.dim(0) != x.dim(0) ||
      mixture.weights.dim(1) != candidates.size()) {
    throw DimensionError("mixture " + shape_str(mixture.weights.shape()) + " does not match batch " +
                         std::to_string(x.dim(0)) + " and " + std::to_string(candidates.size()) +
                         " candidates");
  }
  const std::size_t H = x.dim(2), W = x.dim(3);
  std::vector<Tensor> outs;
  outs.reserve(candidates.size());
  for (std::size_t window : candidates) {
    const WindowSpec spec{window, block_shift(window, H, W, shifted)};
    outs.push_back(window_attention(x, params, cfg, spec));
  }
  return mix_by_batch(outs, mixture.weights);
}

}  // namespace dcsst
