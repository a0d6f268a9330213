// SPDX-License-Identifier: Apache-2.0
#include "dcsst/attention.hpp"

#include <cmath>
#include <map>
#include <tuple>

#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"

namespace dcsst {

void AttentionConfig::validate() const {
  if (model_dim == 0 || num_heads == 0 || model_dim % num_heads != 0) {
    throw ConfigError("attention model_dim " + std::to_string(model_dim) +
                      " must be a positive multiple of num_heads " + std::to_string(num_heads));
  }
}

AttentionParams AttentionParams::init(const AttentionConfig& cfg, Rng& rng, double stddev,
                                      bool zero_output) {
  cfg.validate();
  const std::size_t c = cfg.model_dim;
  AttentionParams p;
  p.wq = Tensor::truncated_normal({c, c}, rng, stddev);
  p.wk = Tensor::truncated_normal({c, c}, rng, stddev);
  p.wv = Tensor::truncated_normal({c, c}, rng, stddev);
  p.wo = zero_output ? Tensor::zeros({c, c}) : Tensor::truncated_normal({c, c}, rng, stddev);
  p.bq = Tensor::zeros({c});
  p.bk = Tensor::zeros({c});
  p.bv = Tensor::zeros({c});
  p.bo = Tensor::zeros({c});
  return p;
}

void AttentionParams::append_to(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".bq", bq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".bk", bk);
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".bv", bv);
  out.emplace_back(prefix + ".wo", wo);
  out.emplace_back(prefix + ".bo", bo);
}

namespace {

const Tensor& lookup(const NamedTensors& table, const std::string& name) {
  for (const auto& [n, t] : table) {
    if (n == name) return t;
  }
  throw FormatError("tensor '" + name + "' missing from table");
}

using CacheKey = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,
                            std::size_t, int>;

// Index maps depend only on geometry, so they are memoized per thread.
GatherIndex cached_index(const CacheKey& key, const std::function<std::vector<std::int64_t>()>& make) {
  thread_local std::map<CacheKey, GatherIndex> cache;
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto idx = std::make_shared<const std::vector<std::int64_t>>(make());
  cache.emplace(key, idx);
  return idx;
}

std::size_t region(std::size_t rolled, std::size_t padded, const WindowGeometry& g) {
  if (g.shift == 0) return 0;
  if (rolled < padded - g.window) return 0;
  if (rolled < padded - g.shift) return 1;
  return 2;
}

}  // namespace

AttentionParams AttentionParams::from_table(const NamedTensors& table, const std::string& prefix) {
  AttentionParams p;
  p.wq = lookup(table, prefix + ".wq");
  p.bq = lookup(table, prefix + ".bq");
  p.wk = lookup(table, prefix + ".wk");
  p.bk = lookup(table, prefix + ".bk");
  p.wv = lookup(table, prefix + ".wv");
  p.bv = lookup(table, prefix + ".bv");
  p.wo = lookup(table, prefix + ".wo");
  p.bo = lookup(table, prefix + ".bo");
  return p;
}

WindowGeometry window_geometry(std::size_t height, std::size_t width, const WindowSpec& spec) {
  if (spec.window == 0 || spec.window > height || spec.window > width) {
    throw ConfigError("window size " + std::to_string(spec.window) + " invalid for a " +
                      std::to_string(height) + "x" + std::to_string(width) + " feature map");
  }
  if (spec.shift >= spec.window) {
    throw ConfigError("window shift " + std::to_string(spec.shift) + " must be < window " +
                      std::to_string(spec.window));
  }
  WindowGeometry g;
  g.height = height;
  g.width = width;
  g.window = spec.window;
  g.shift = spec.shift;
  g.windows_y = (height + spec.window - 1) / spec.window;
  g.windows_x = (width + spec.window - 1) / spec.window;
  g.padded_height = g.windows_y * spec.window;
  g.padded_width = g.windows_x * spec.window;
  return g;
}

Tensor window_partition(const Tensor& x, const WindowSpec& spec) {
  if (x.rank() != 4) throw DimensionError("window_partition expects [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const WindowGeometry g = window_geometry(H, W, spec);
  const std::size_t nW = g.num_windows(), L = g.tokens_per_window(), w = g.window;
  auto index = cached_index({B, C, H, W, w, g.shift, 0}, [&] {
    std::vector<std::int64_t> idx(B * nW * L * C);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t wy = 0; wy < g.windows_y; ++wy) {
        for (std::size_t wx = 0; wx < g.windows_x; ++wx) {
          const std::size_t win = b * nW + wy * g.windows_x + wx;
          for (std::size_t i = 0; i < w; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t py = (wy * w + i + g.shift) % g.padded_height;
              const std::size_t px = (wx * w + j + g.shift) % g.padded_width;
              const bool pad = py >= H || px >= W;
              for (std::size_t c = 0; c < C; ++c) {
                idx[(win * L + i * w + j) * C + c] =
                    pad ? -1 : static_cast<std::int64_t>(((b * C + c) * H + py) * W + px);
              }
            }
          }
        }
      }
    }
    return idx;
  });
  return gather(x, {B * nW, L, C}, index);
}

Tensor window_reverse(const Tensor& windows, const WindowSpec& spec, const Shape& orig_shape) {
  if (orig_shape.size() != 4) throw DimensionError("window_reverse needs a [B,C,H,W] target shape");
  const std::size_t B = orig_shape[0], C = orig_shape[1], H = orig_shape[2], W = orig_shape[3];
  const WindowGeometry g = window_geometry(H, W, spec);
  const std::size_t nW = g.num_windows(), L = g.tokens_per_window(), w = g.window;
  if (windows.shape() != Shape{B * nW, L, C}) {
    throw DimensionError("window_reverse: windows " + shape_str(windows.shape()) +
                         " do not match target " + shape_str(orig_shape));
  }
  auto index = cached_index({B, C, H, W, w, g.shift, 1}, [&] {
    std::vector<std::int64_t> idx(B * C * H * W);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
          const std::size_t ry = (y + g.padded_height - g.shift) % g.padded_height;
          for (std::size_t x = 0; x < W; ++x) {
            const std::size_t rx = (x + g.padded_width - g.shift) % g.padded_width;
            const std::size_t win = b * nW + (ry / w) * g.windows_x + rx / w;
            const std::size_t tok = (ry % w) * w + rx % w;
            idx[((b * C + c) * H + y) * W + x] = static_cast<std::int64_t>((win * L + tok) * C + c);
          }
        }
      }
    }
    return idx;
  });
  return gather(windows, orig_shape, index);
}

Tensor window_attention_mask(std::size_t height, std::size_t width, const WindowSpec& spec) {
  const WindowGeometry g = window_geometry(height, width, spec);
  const std::size_t nW = g.num_windows(), L = g.tokens_per_window(), w = g.window;
  Tensor mask({nW, L, L});
  auto m = mask.mutable_data();
  std::vector<std::size_t> label(L);
  std::vector<bool> pad(L);
  for (std::size_t wy = 0; wy < g.windows_y; ++wy) {
    for (std::size_t wx = 0; wx < g.windows_x; ++wx) {
      for (std::size_t i = 0; i < w; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const std::size_t ry = wy * w + i, rx = wx * w + j;
          const std::size_t t = i * w + j;
          label[t] = 3 * region(ry, g.padded_height, g) + region(rx, g.padded_width, g);
          pad[t] = (ry + g.shift) % g.padded_height >= height ||
                   (rx + g.shift) % g.padded_width >= width;
        }
      }
      double* mw = m.data() + (wy * g.windows_x + wx) * L * L;
      for (std::size_t q = 0; q < L; ++q) {
        for (std::size_t k = 0; k < L; ++k) {
          mw[q * L + k] = (pad[k] || label[q] != label[k]) ? kMaskValue : 0.0;
        }
      }
    }
  }
  return mask;
}

AttentionOutput multi_head_attention(const Tensor& query, const Tensor& key_value,
                                     const AttentionParams& params, const AttentionConfig& cfg,
                                     const std::optional<Tensor>& mask) {
  cfg.validate();
  if (query.rank() != 3 || key_value.rank() != 3 || query.dim(2) != cfg.model_dim ||
      key_value.dim(2) != cfg.model_dim || query.dim(0) != key_value.dim(0)) {
    throw DimensionError("attention inputs " + shape_str(query.shape()) + " / " +
                         shape_str(key_value.shape()) + " do not match model_dim " +
                         std::to_string(cfg.model_dim));
  }
  const std::size_t N = query.dim(0), Lq = query.dim(1), Lk = key_value.dim(1);
  const std::size_t h = cfg.num_heads, d = cfg.head_dim(), C = cfg.model_dim;
  if (mask && mask->rank() == 2) {
    return multi_head_attention(query, key_value, params, cfg,
                                reshape(*mask, {1, mask->dim(0), mask->dim(1)}));
  }
  if (mask && (mask->rank() != 3 || mask->dim(1) != Lq || mask->dim(2) != Lk ||
               N % mask->dim(0) != 0)) {
    throw DimensionError("attention mask " + shape_str(mask->shape()) + " does not fit " +
                         std::to_string(N) + " sequences of " + std::to_string(Lq) + "x" +
                         std::to_string(Lk));
  }
  const Tensor q = permute(reshape(linear(query, params.wq, params.bq), {N, Lq, h, d}), {0, 2, 1, 3});
  const Tensor k = permute(reshape(linear(key_value, params.wk, params.bk), {N, Lk, h, d}), {0, 2, 3, 1});
  const Tensor v = permute(reshape(linear(key_value, params.wv, params.bv), {N, Lk, h, d}), {0, 2, 1, 3});
  Tensor scores = scale(matmul(q, k), 1.0 / std::sqrt(static_cast<double>(d)));
  if (mask) scores = add_mask(scores, *mask);
  const Tensor weights = softmax(scores, -1);
  const Tensor context = reshape(permute(matmul(weights, v), {0, 2, 1, 3}), {N, Lq, C});
  return {linear(context, params.wo, params.bo), weights};
}

Tensor mhsa(const Tensor& tokens, const AttentionParams& params, const AttentionConfig& cfg,
            const std::optional<Tensor>& mask) {
  return multi_head_attention(tokens, tokens, params, cfg, mask).output;
}

Tensor window_attention(const Tensor& x, const AttentionParams& params,
                        const AttentionConfig& cfg, const WindowSpec& spec) {
  const std::size_t H = x.dim(2), W = x.dim(3);
  const WindowGeometry g = window_geometry(H, W, spec);
  std::optional<Tensor> mask;
  if (g.shift > 0 || g.padded_height != H || g.padded_width != W) {
    mask = window_attention_mask(H, W, spec);
  }
  const Tensor windows = window_partition(x, spec);
  return window_reverse(mhsa(windows, params, cfg, mask), spec, x.shape());
}

Tensor to_tokens(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("to_tokens expects [B,C,H,W], got " + shape_str(x.shape()));
  return permute(reshape(x, {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)}), {0, 2, 1});
}

Tensor from_tokens(const Tensor& tokens, std::size_t height, std::size_t width) {
  if (tokens.rank() != 3 || tokens.dim(1) != height * width) {
    throw DimensionError("from_tokens: " + shape_str(tokens.shape()) + " is not [B," +
                         std::to_string(height * width) + ",C]");
  }
  return reshape(permute(tokens, {0, 2, 1}), {tokens.dim(0), tokens.dim(2), height, width});
}

Tensor cross_attention(const Tensor& current, const Tensor& prev, const AttentionParams& params,
                       const AttentionConfig& cfg) {
  if (current.rank() != 4 || current.shape() != prev.shape()) {
    throw DimensionError("cross_attention needs equal [B,C,H,W] maps, got " +
                         shape_str(current.shape()) + " and " + shape_str(prev.shape()));
  }
  const std::size_t H = current.dim(2), W = current.dim(3);
  const Tensor attended =
      multi_head_attention(to_tokens(current), to_tokens(prev), params, cfg).output;
  return add(current, from_tokens(attended, H, W));
}

}  // namespace dcsst
