// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "dcsst/serialize.hpp"
#include "dcsst/tensor.hpp"

namespace dcsst {

struct AttentionConfig {
  std::size_t model_dim = 0;
  std::size_t num_heads = 1;

  std::size_t head_dim() const { return model_dim / num_heads; }
  /// Throws ConfigError unless model_dim is a positive multiple of num_heads.
  void validate() const;
};

/// w x w windows, cyclically rolled by (-shift, -shift) before partitioning.
struct WindowSpec {
  std::size_t window = 1;
  std::size_t shift = 0;
};

/// Additive mask value for disallowed attention pairs. Finite so gradients stay finite.
inline constexpr double kMaskValue = -1e9;

/// Learned projections of one multi-head attention layer. Weights are
/// [in, out] so that y = x * W + b.
struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;

  static AttentionParams init(const AttentionConfig& cfg, Rng& rng, double stddev,
                              bool zero_output);
  void append_to(NamedTensors& out, const std::string& prefix) const;
  static AttentionParams from_table(const NamedTensors& table, const std::string& prefix);
};

/// Geometry of a partition: padded extent and window grid for an [H, W] map.
struct WindowGeometry {
  std::size_t height = 0, width = 0;
  std::size_t padded_height = 0, padded_width = 0;
  std::size_t windows_y = 0, windows_x = 0;
  std::size_t window = 0, shift = 0;

  std::size_t num_windows() const { return windows_y * windows_x; }
  std::size_t tokens_per_window() const { return window * window; }
};

/// Validates `spec` against an [H, W] map: window <= H and W, shift < window.
WindowGeometry window_geometry(std::size_t height, std::size_t width, const WindowSpec& spec);

/// x[B,C,H,W] -> [B*nW, w*w, C]. H and W are zero-padded up to multiples of
/// w; windows are ordered batch-major, then row-major over the window grid.
Tensor window_partition(const Tensor& x, const WindowSpec& spec);

/// Exact inverse of window_partition for a map of `orig_shape` [B,C,H,W]:
/// un-rolls and strips the padding.
Tensor window_reverse(const Tensor& windows, const WindowSpec& spec, const Shape& orig_shape);

/// Additive mask [nW, w*w, w*w] for one partition. A pair is masked when the
/// key is padding, or when the shift wrapped the two tokens around the map
/// edge into the same window (different seam regions).
Tensor window_attention_mask(std::size_t height, std::size_t width, const WindowSpec& spec);

struct AttentionOutput {
  Tensor output;   // [N, Lq, C]
  Tensor weights;  // [N, heads, Lq, Lk], rows sum to 1
};

/// Scaled dot-product attention with per-head projections:
/// softmax(Q K^T / sqrt(head_dim) + mask) V, heads concatenated and projected.
/// mask, if present, is [Lq, Lk] or [M, Lq, Lk] with slice n % M applied to
/// sequence n.
AttentionOutput multi_head_attention(const Tensor& query, const Tensor& key_value,
                                     const AttentionParams& params, const AttentionConfig& cfg,
                                     const std::optional<Tensor>& mask = std::nullopt);

/// Self-attention over token sequences [N, L, C].
Tensor mhsa(const Tensor& tokens, const AttentionParams& params, const AttentionConfig& cfg,
            const std::optional<Tensor>& mask = std::nullopt);

/// Partition, masked self-attention inside each window, reverse.
/// x[B,C,H,W] -> [B,C,H,W].
Tensor window_attention(const Tensor& x, const AttentionParams& params,
                        const AttentionConfig& cfg, const WindowSpec& spec);

/// [B,C,H,W] <-> [B, H*W, C] token layout.
Tensor to_tokens(const Tensor& x);
Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width);

/// Queries from `current`, keys and values from `prev` (both [B,C,H,W]),
/// global attention over all H*W positions, reshaped back and added to
/// `current`: out = current + attended.
Tensor cross_attention(const Tensor& current, const Tensor& prev, const AttentionParams& params,
                       const AttentionConfig& cfg);

}  // namespace dcsst
