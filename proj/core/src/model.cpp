// SPDX-License-Identifier: Apache-2.0
#include "dcsst/model.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <tuple>

#include "dcsst/error.hpp"
#include "dcsst/ops.hpp"
#include "dcsst/rng.hpp"

namespace dcsst {

// ---- config ---------------------------------------------------------------

std::size_t ModelConfig::stage_resolution(std::size_t stage) const {
  return (image_size / patch_size) >> stage;
}

std::vector<std::size_t> ModelConfig::stage_windows(std::size_t stage) const {
  const std::size_t res = stage_resolution(stage);
  if (!dynamic_window) return {std::min(fixed_window, res)};
  std::vector<std::size_t> out;
  for (std::size_t c : candidates) out.push_back(std::min(c, res));
  return out;
}

bool ModelConfig::fuses_at(std::size_t stage) const {
  if (!cross_scale || stage == 0 || stage >= num_stages()) return false;
  if (cross_scale_stages.empty()) return true;
  return std::find(cross_scale_stages.begin(), cross_scale_stages.end(), stage) !=
         cross_scale_stages.end();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (image_size == 0 || patch_size == 0) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (in_channels == 0) fail("in_channels must be positive");
  const std::size_t n = embed_dims.size();
  if (n == 0) fail("at least one stage is required");
  if (depths.size() != n || num_heads.size() != n) {
    fail("embed_dims, depths and num_heads must have the same length");
  }
  const std::size_t grid = image_size / patch_size;
  if (grid % (std::size_t{1} << (n - 1)) != 0) {
    fail("patch grid " + std::to_string(grid) + " cannot be halved " + std::to_string(n - 1) +
         " times");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (depths[i] == 0) fail("stage " + std::to_string(i) + " has zero depth");
    if (num_heads[i] == 0 || embed_dims[i] == 0 || embed_dims[i] % num_heads[i] != 0) {
      fail("stage " + std::to_string(i) + " dim " + std::to_string(embed_dims[i]) +
           " is not divisible by " + std::to_string(num_heads[i]) + " heads");
    }
    if (i > 0 && embed_dims[i] != 2 * embed_dims[i - 1]) {
      fail("embed_dims must double at every stage");
    }
  }
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (mlp_ratio == 0) fail("mlp_ratio must be positive");
  if (dynamic_window) {
    if (candidates.size() < 2) fail("dynamic windows need at least two candidates");
    for (std::size_t c : candidates) {
      if (c == 0) fail("candidate windows must be positive");
      if (c > image_size) fail("candidate window " + std::to_string(c) + " exceeds the image");
    }
  } else if (fixed_window == 0) {
    fail("fixed_window must be positive");
  }
  for (std::size_t s : cross_scale_stages) {
    if (s == 0 || s >= n) fail("cross_scale_stages entries must be in [1, num_stages)");
  }
  if (!(init_std >= 0.0)) fail("init_std must be non-negative");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dims = {8, 16};
  c.depths = {1, 1};
  c.num_heads = {2, 2};
  c.candidates = {2, 4};
  c.fixed_window = 2;
  c.mlp_ratio = 2;
  return c;
}

ModelConfig ModelConfig::swin_base() {
  ModelConfig c;
  c.image_size = 224;
  c.patch_size = 4;
  c.embed_dims = {128, 256, 512, 1024};
  c.depths = {2, 2, 18, 2};
  c.num_heads = {4, 8, 16, 32};
  c.candidates = {7, 14, 28};
  c.fixed_window = 7;
  return c;
}

bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "image_size") cfg.image_size = parse_size(key, value);
  else if (key == "in_channels") cfg.in_channels = parse_size(key, value);
  else if (key == "patch_size") cfg.patch_size = parse_size(key, value);
  else if (key == "embed_dims") cfg.embed_dims = parse_size_list(key, value);
  else if (key == "depths") cfg.depths = parse_size_list(key, value);
  else if (key == "num_heads") cfg.num_heads = parse_size_list(key, value);
  else if (key == "candidates") cfg.candidates = parse_size_list(key, value);
  else if (key == "fixed_window") cfg.fixed_window = parse_size(key, value);
  else if (key == "mlp_ratio") cfg.mlp_ratio = parse_size(key, value);
  else if (key == "num_classes") cfg.num_classes = parse_size(key, value);
  else if (key == "selection") {
    if (value == "soft") cfg.selection = SelectionMode::Soft;
    else if (value == "hard") cfg.selection = SelectionMode::Hard;
    else throw ConfigError("'selection' must be soft or hard, got '" + value + "'");
  } else if (key == "dynamic_window") cfg.dynamic_window = parse_bool(key, value);
  else if (key == "cross_scale") cfg.cross_scale = parse_bool(key, value);
  else if (key == "cross_scale_stages") cfg.cross_scale_stages = parse_size_list(key, value);
  else if (key == "init_std") cfg.init_std = parse_double(key, value);
  else if (key == "zero_init_residual") cfg.zero_init_residual = parse_bool(key, value);
  else if (key == "layer_norm_eps") cfg.layer_norm_eps = parse_double(key, value);
  else return false;
  return true;
}

KeyValues model_config_entries(const ModelConfig& cfg) {
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {
      {"image_size", std::to_string(cfg.image_size)},
      {"in_channels", std::to_string(cfg.in_channels)},
      {"patch_size", std::to_string(cfg.patch_size)},
      {"embed_dims", format_size_list(cfg.embed_dims)},
      {"depths", format_size_list(cfg.depths)},
      {"num_heads", format_size_list(cfg.num_heads)},
      {"candidates", format_size_list(cfg.candidates)},
      {"fixed_window", std::to_string(cfg.fixed_window)},
      {"mlp_ratio", std::to_string(cfg.mlp_ratio)},
      {"num_classes", std::to_string(cfg.num_classes)},
      {"selection", cfg.selection == SelectionMode::Soft ? "soft" : "hard"},
      {"dynamic_window", b(cfg.dynamic_window)},
      {"cross_scale", b(cfg.cross_scale)},
      {"cross_scale_stages", format_size_list(cfg.cross_scale_stages)},
      {"init_std", format_double(cfg.init_std)},
      {"zero_init_residual", b(cfg.zero_init_residual)},
      {"layer_norm_eps", format_double(cfg.layer_norm_eps)},
  };
}

std::string model_config_text(const ModelConfig& cfg) {
  return format_key_values(model_config_entries(cfg));
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (!apply_model_key(cfg, k, v)) throw ConfigError("unknown model config key '" + k + "'");
  }
  cfg.validate();
  return cfg;
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t p = cfg.patch_size;
  std::size_t n = 0;
  if (cfg.dynamic_window) n += cfg.num_scales() * cfg.in_channels + cfg.num_scales();
  n += cfg.in_channels * p * p * cfg.embed_dims[0] + cfg.embed_dims[0];
  for (std::size_t i = 0; i < cfg.num_stages(); ++i) {
    const std::size_t c = cfg.embed_dims[i], h = cfg.mlp_ratio * c;
    const std::size_t block = 2 * c + 4 * (c * c + c) + 2 * c + (c * h + h) + (h * c + c);
    n += cfg.depths[i] * block;
    if (i + 1 < cfg.num_stages()) n += 4 * c * cfg.embed_dims[i + 1] + cfg.embed_dims[i + 1];
    if (cfg.fuses_at(i)) n += cfg.embed_dims[i - 1] * c + c + 4 * (c * c + c);
  }
  const std::size_t last = cfg.embed_dims.back();
  n += 2 * last + last * cfg.num_classes + cfg.num_classes;
  return n;
}

// ---- building blocks ------------------------------------------------------

namespace {

using IndexKey = std::tuple<int, std::size_t, std::size_t, std::size_t, std::size_t>;

GatherIndex cached_index(const IndexKey& key, const std::function<std::vector<std::int64_t>()>& make) {
  thread_local std::map<IndexKey, GatherIndex> cache;
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  auto idx = std::make_shared<const std::vector<std::int64_t>>(make());
  cache.emplace(key, idx);
  return idx;
}

}  // namespace

Tensor patch_embed(const Tensor& images, const Tensor& w, const Tensor& b, std::size_t patch) {
  if (images.rank() != 4) {
    throw DimensionError("patch_embed expects [B,C,H,W], got " + shape_str(images.shape()));
  }
  const std::size_t B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  if (patch == 0 || H % patch != 0 || W % patch != 0) {
    throw ConfigError("image " + std::to_string(H) + "x" + std::to_string(W) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  const std::size_t hp = H / patch, wp = W / patch, K = C * patch * patch;
  if (w.shape() != Shape{K, w.dim(-1)}) {
    throw DimensionError("patch_embed weight " + shape_str(w.shape()) + " needs " +
                         std::to_string(K) + " input rows");
  }
  // Key packs B, C and the two extents; patch size is recoverable from H/hp.
  auto index = cached_index({0, B, C, H * 65536 + W, patch}, [&] {
    std::vector<std::int64_t> idx(B * hp * wp * K);
    std::size_t o = 0;
    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t py = 0; py < hp; ++py) {
        for (std::size_t px = 0; px < wp; ++px) {
          for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < patch; ++i) {
              for (std::size_t j = 0; j < patch; ++j) {
                idx[o++] = static_cast<std::int64_t>(((bi * C + c) * H + py * patch + i) * W +
                                                     px * patch + j);
              }
            }
          }
        }
      }
    }
    return idx;
  });
  const Tensor patches = gather(images, {B, hp * wp, K}, index);
  return from_tokens(linear(patches, w, b), hp, wp);
}

Tensor block_forward(const Tensor& x, const BlockParams& p, const StageContext& ctx, bool shifted) {
  const std::size_t H = x.dim(2), W = x.dim(3);
  const Tensor h = from_tokens(layer_norm(to_tokens(x), p.ln1_gamma, p.ln1_beta, ctx.eps), H, W);
  Tensor attended;
  if (ctx.mixture) {
    attended = dynamic_window_attention(h, *ctx.mixture, p.attn, ctx.attn, ctx.windows, shifted);
  } else {
    if (ctx.windows.size() != 1) throw ConfigError("a fixed-window stage needs exactly one window");
    const std::size_t w = ctx.windows[0];
    attended = window_attention(h, p.attn, ctx.attn, WindowSpec{w, block_shift(w, H, W, shifted)});
  }
  const Tensor y = add(x, attended);
  const Tensor t = layer_norm(to_tokens(y), p.ln2_gamma, p.ln2_beta, ctx.eps);
  const Tensor m = linear(gelu(linear(t, p.fc1_w, p.fc1_b)), p.fc2_w, p.fc2_b);
  return add(y, from_tokens(m, H, W));
}

Tensor stage_forward(const Tensor& x, const StageParams& p, const StageContext& ctx) {
  Tensor y = x;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) y = block_forward(y, p.blocks[i], ctx, i % 2 == 1);
  return y;
}

Tensor patch_merge(const Tensor& x, const MergeParams& p) {
  if (x.rank() != 4) throw DimensionError("patch_merge expects [B,C,H,W], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw ConfigError("patch_merge needs even spatial dims, got " + shape_str(x.shape()));
  }
  const std::size_t ho = H / 2, wo = W / 2;
  auto index = cached_index({1, B, C, H, W}, [&] {
    static constexpr std::size_t kOffsets[4][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    std::vector<std::int64_t> idx(B * ho * wo * 4 * C);
    std::size_t o = 0;
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t xx = 0; xx < wo; ++xx) {
          for (const auto& off : kOffsets) {
            for (std::size_t c = 0; c < C; ++c) {
              idx[o++] = static_cast<std::int64_t>(((b * C + c) * H + 2 * y + off[0]) * W +
                                                   2 * xx + off[1]);
            }
          }
        }
      }
    }
    return idx;
  });
  const Tensor cat = gather(x, {B, ho * wo, 4 * C}, index);
  return from_tokens(linear(cat, p.w, p.b), ho, wo);
}

Tensor cross_scale_fuse(const Tensor& current, const Tensor& prev, const FusionParams& p,
                        const AttentionConfig& cfg) {
  if (current.rank() != 4 || prev.rank() != 4 || current.dim(0) != prev.dim(0)) {
    throw DimensionError("cross_scale_fuse: incompatible maps " + shape_str(current.shape()) +
                         " and " + shape_str(prev.shape()));
  }
  const std::size_t H = current.dim(2), W = current.dim(3);
  const std::size_t ph = prev.dim(2), pw = prev.dim(3);
  if (ph % H != 0 || pw % W != 0 || ph / H != pw / W) {
    throw DimensionError("cross_scale_fuse: previous map " + shape_str(prev.shape()) +
                         " does not pool evenly to " + shape_str(current.shape()));
  }
  const std::size_t factor = ph / H;
  const Tensor pooled = factor == 1 ? prev : avg_pool2d(prev, factor);
  const Tensor aligned = from_tokens(linear(to_tokens(pooled), p.align_w, p.align_b), H, W);
  return cross_attention(current, aligned, p.attn, cfg);
}

// ---- model ----------------------------------------------------------------

DcsStModel::DcsStModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng = make_stream(seed, "init");
  const double sd = cfg_.init_std;
  const bool zero_res = cfg_.zero_init_residual;
  auto tn = [&](Shape s) { return Tensor::truncated_normal(std::move(s), rng, sd); };
  auto residual = [&](Shape s) { return zero_res ? Tensor::zeros(std::move(s)) : tn(std::move(s)); };

  ModelParams& P = params_;
  const std::size_t S = cfg_.num_scales();
  if (cfg_.dynamic_window) {
    P.predictor_w = tn({S, cfg_.in_channels});
    P.predictor_b = Tensor::zeros({S});
  }
  const std::size_t K = cfg_.in_channels * cfg_.patch_size * cfg_.patch_size;
  P.embed_w = tn({K, cfg_.embed_dims[0]});
  P.embed_b = Tensor::zeros({cfg_.embed_dims[0]});

  const std::size_t n = cfg_.num_stages();
  P.stages.resize(n);
  P.fusions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = cfg_.embed_dims[i], h = cfg_.mlp_ratio * c;
    const AttentionConfig acfg{c, cfg_.num_heads[i]};
    for (std::size_t d = 0; d < cfg_.depths[i]; ++d) {
      BlockParams b;
      b.ln1_gamma = Tensor::ones({c});
      b.ln1_beta = Tensor::zeros({c});
      b.attn = AttentionParams::init(acfg, rng, sd, zero_res);
      b.ln2_gamma = Tensor::ones({c});
      b.ln2_beta = Tensor::zeros({c});
      b.fc1_w = tn({c, h});
      b.fc1_b = Tensor::zeros({h});
      b.fc2_w = residual({h, c});
      b.fc2_b = Tensor::zeros({c});
      P.stages[i].blocks.push_back(std::move(b));
    }
    if (i + 1 < n) {
      P.stages[i].merge = MergeParams{tn({4 * c, cfg_.embed_dims[i + 1]}),
                                      Tensor::zeros({cfg_.embed_dims[i + 1]})};
    }
    if (cfg_.fuses_at(i)) {
      FusionParams f;
      f.align_w = tn({cfg_.embed_dims[i - 1], c});
      f.align_b = Tensor::zeros({c});
      f.attn = AttentionParams::init(acfg, rng, sd, zero_res);
      P.fusions[i] = std::move(f);
    }
  }
  const std::size_t last = cfg_.embed_dims.back();
  P.norm_gamma = Tensor::ones({last});
  P.norm_beta = Tensor::zeros({last});
  P.head_w = tn({last, cfg_.num_classes});
  P.head_b = Tensor::zeros({cfg_.num_classes});
}

ForwardTrace DcsStModel::forward(const Tensor& images) const {
  const std::size_t s = cfg_.image_size;
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != s ||
      images.dim(3) != s) {
    throw ConfigError("model expects [B," + std::to_string(cfg_.in_channels) + "," +
                      std::to_string(s) + "," + std::to_string(s) + "] images, got " +
                      shape_str(images.shape()));
  }
  ForwardTrace trace;
  if (cfg_.dynamic_window) {
    trace.scale_field = predict_scales(images, params_.predictor_w, params_.predictor_b,
                                       cfg_.candidates);
  }
  Tensor x = patch_embed(images, params_.embed_w, params_.embed_b, cfg_.patch_size);
  Tensor prev;
  for (std::size_t i = 0; i < cfg_.num_stages(); ++i) {
    const std::size_t res = x.dim(2);
    StageContext ctx;
    ctx.attn = AttentionConfig{cfg_.embed_dims[i], cfg_.num_heads[i]};
    ctx.windows = cfg_.stage_windows(i);
    ctx.eps = cfg_.layer_norm_eps;
    if (cfg_.dynamic_window) {
      StageMixture m = pool_to_stage(*trace.scale_field, res, res);
      if (cfg_.selection == SelectionMode::Hard) m = harden(m);
      trace.mixtures.push_back(m);
      ctx.mixture = std::move(m);
    }
    x = stage_forward(x, params_.stages[i], ctx);
    if (params_.fusions[i]) x = cross_scale_fuse(x, prev, *params_.fusions[i], ctx.attn);
    trace.stage_features.push_back(x);
    prev = x;
    if (params_.stages[i].merge) x = patch_merge(x, *params_.stages[i].merge);
  }
  const Tensor normed = layer_norm(to_tokens(x), params_.norm_gamma, params_.norm_beta,
                                   cfg_.layer_norm_eps);
  trace.logits = linear(mean_pool(normed, {1}), params_.head_w, params_.head_b);
  return trace;
}

Tensor DcsStModel::classify(const Tensor& images) const { return forward(images).logits; }

namespace {

// Visits every trainable tensor in checkpoint order. Works for const and
// mutable parameter sets.
template <typename Params, typename F>
void visit_parameters(Params& P, F&& f) {
  auto attn = [&](auto& a, const std::string& prefix) {
    f(prefix + ".wq", a.wq);
    f(prefix + ".bq", a.bq);
    f(prefix + ".wk", a.wk);
    f(prefix + ".bk", a.bk);
    f(prefix + ".wv", a.wv);
    f(prefix + ".bv", a.bv);
    f(prefix + ".wo", a.wo);
    f(prefix + ".bo", a.bo);
  };
  if (P.predictor_w.rank() != 0) {
    f("predictor.w", P.predictor_w);
    f("predictor.b", P.predictor_b);
  }
  f("embed.w", P.embed_w);
  f("embed.b", P.embed_b);
  for (std::size_t i = 0; i < P.stages.size(); ++i) {
    const std::string sp = "stage" + std::to_string(i);
    for (std::size_t d = 0; d < P.stages[i].blocks.size(); ++d) {
      auto& b = P.stages[i].blocks[d];
      const std::string bp = sp + ".block" + std::to_string(d);
      f(bp + ".ln1.gamma", b.ln1_gamma);
      f(bp + ".ln1.beta", b.ln1_beta);
      attn(b.attn, bp + ".attn");
      f(bp + ".ln2.gamma", b.ln2_gamma);
      f(bp + ".ln2.beta", b.ln2_beta);
      f(bp + ".fc1.w", b.fc1_w);
      f(bp + ".fc1.b", b.fc1_b);
      f(bp + ".fc2.w", b.fc2_w);
      f(bp + ".fc2.b", b.fc2_b);
    }
    if (P.fusions[i]) {
      f(sp + ".fuse.align.w", P.fusions[i]->align_w);
      f(sp + ".fuse.align.b", P.fusions[i]->align_b);
      attn(P.fusions[i]->attn, sp + ".fuse.attn");
    }
    if (P.stages[i].merge) {
      f(sp + ".merge.w", P.stages[i].merge->w);
      f(sp + ".merge.b", P.stages[i].merge->b);
    }
  }
  f("norm.gamma", P.norm_gamma);
  f("norm.beta", P.norm_beta);
  f("head.w", P.head_w);
  f("head.b", P.head_b);
}

}  // namespace

NamedTensors DcsStModel::named_parameters() const {
  NamedTensors out;
  visit_parameters(params_, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); });
  return out;
}

void DcsStModel::bind_parameters(const std::vector<Tensor>& tensors) {
  std::size_t i = 0;
  visit_parameters(params_, [&](const std::string& name, Tensor& t) {
    if (i >= tensors.size() || tensors[i].shape() != t.shape()) {
      throw DimensionError("bind_parameters: tensor " + std::to_string(i) + " does not fit '" +
                           name + "' " + shape_str(t.shape()));
    }
    t = tensors[i++];
  });
  if (i != tensors.size()) throw DimensionError("bind_parameters: too many tensors");
}

std::vector<Tensor> DcsStModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t DcsStModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void DcsStModel::load_parameters(const NamedTensors& table) {
  const NamedTensors mine = named_parameters();
  if (table.size() != mine.size()) {
    throw FormatError("parameter table has " + std::to_string(table.size()) + " entries, model has " +
                      std::to_string(mine.size()));
  }
  for (std::size_t i = 0; i < mine.size(); ++i) {
    const auto& [name, dst] = mine[i];
    const auto& [src_name, src] = table[i];
    if (src_name != name || src.shape() != dst.shape()) {
      throw FormatError("parameter " + std::to_string(i) + ": expected '" + name + "' " +
                        shape_str(dst.shape()) + ", found '" + src_name + "' " +
                        shape_str(src.shape()));
    }
    Tensor target = dst;
    std::copy(src.data().begin(), src.data().end(), target.mutable_data().begin());
  }
}

void DcsStModel::set_requires_grad(bool flag) {
  for (auto& [name, t] : named_parameters()) {
    Tensor h = t;
    h.set_requires_grad(flag);
  }
}

DcsStModel DcsStModel::clone() const {
  DcsStModel copy(cfg_, 0);
  copy.load_parameters(named_parameters());
  for (auto& [name, t] : named_parameters()) {
    if (t.requires_grad()) {
      copy.set_requires_grad(true);
      break;
    }
  }
  return copy;
}

// ---- checkpoints ----------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[4] = {'D', 'C', 'S', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const DcsStModel& model, const KeyValues& metadata,
                     const NamedTensors& extra) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kCheckpointMagic, 4);
  write_u32(out, kCheckpointVersion);
  write_string(out, model_config_text(model.config()));
  write_string(out, format_key_values(metadata));
  NamedTensors table = model.named_parameters();
  write_u64(out, extra.size());
  table.insert(table.end(), extra.begin(), extra.end());
  write_named_tensors(out, table);
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || !std::equal(magic, magic + 4, kCheckpointMagic)) {
    throw FormatError("'" + path + "' is not a model checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported");
  }
  Checkpoint ck;
  ck.config = parse_model_config(read_string(in));
  ck.metadata = parse_key_values(read_string(in));
  const std::uint64_t n_extra = read_u64(in);
  NamedTensors all = read_named_tensors(in);
  if (n_extra > all.size()) throw FormatError("checkpoint extra-tensor count exceeds table size");
  const auto split = all.end() - static_cast<std::ptrdiff_t>(n_extra);
  ck.parameters.assign(all.begin(), split);
  ck.extra.assign(split, all.end());
  return ck;
}

DcsStModel model_from_checkpoint(const Checkpoint& ckpt) {
  DcsStModel model(ckpt.config, 0);
  model.load_parameters(ckpt.parameters);
  return model;
}

}  // namespace dcsst
