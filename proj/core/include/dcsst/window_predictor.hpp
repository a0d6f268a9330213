// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "dcsst/attention.hpp"
#include "dcsst/tensor.hpp"

namespace dcsst {

/// Per-pixel distribution over candidate window sizes.
struct ScaleField {
  Tensor probs;                        // [B, S, H, W], sums to 1 over S
  std::vector<std::size_t> candidates;  // S window sizes
};

/// Stage-level scale weights pooled from a ScaleField.
struct StageMixture {
  Tensor weights;  // [B, S], rows sum to 1
};

enum class SelectionMode { Soft, Hard };

/// probs = softmax_S(conv1x1(x; w[S,C], b[S])). Throws ConfigError when fewer
/// than two candidates are given, when w/b disagree with the candidate count,
/// or when a candidate exceeds the spatial extent of x.
ScaleField predict_scales(const Tensor& x, const Tensor& w, const Tensor& b,
                          const std::vector<std::size_t>& candidates);

/// Average-resizes the field to the stage grid, takes the spatial mean and
/// renormalizes each row to sum to 1. Differentiable.
StageMixture pool_to_stage(const ScaleField& field, std::size_t stage_height,
                           std::size_t stage_width);

/// Replaces each row by a constant one-hot vector at its argmax (ties go to
/// the smaller index). No gradient flows through the choice.
StageMixture harden(const StageMixture& mixture);

/// Shift used by a block for window size `window` on an [H, W] map: half the
/// window on shifted blocks, zero when the window already covers the map.
std::size_t block_shift(std::size_t window, std::size_t height, std::size_t width, bool shifted);

/// Runs window attention once per candidate size with shared projections and
/// combines the results as sum_s mixture[b, s] * out_s.
Tensor dynamic_window_attention(const Tensor& x, const StageMixture& mixture,
                                const AttentionParams& params, const AttentionConfig& cfg,
                                const std::vector<std::size_t>& candidates, bool shifted);

}  // namespace dcsst
