// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcsst/attention.hpp"
#include "dcsst/config_text.hpp"
#include "dcsst/serialize.hpp"
#include "dcsst/tensor.hpp"
#include "dcsst/window_predictor.hpp"

namespace dcsst {

/// Hierarchical windowed transformer with optional dynamic window selection
/// and cross-scale fusion between consecutive stages.
///
/// Config keys (flat `key = value`, lists comma separated):
///   image_size, in_channels, patch_size, embed_dims, depths, num_heads,
///   candidates, fixed_window, mlp_ratio, num_classes, selection (soft|hard),
///   dynamic_window, cross_scale, cross_scale_stages, init_std,
///   zero_init_residual, layer_norm_eps
struct ModelConfig {
  std::size_t image_size = 64;
  std::size_t in_channels = 3;
  std::size_t patch_size = 4;
  std::vector<std::size_t> embed_dims{32, 64, 128};
  std::vector<std::size_t> depths{2, 2, 2};
  std::vector<std::size_t> num_heads{2, 4, 8};
  /// Candidate window sizes; their count is the number of scales S. Each
  /// stage clips them to its own resolution.
  std::vector<std::size_t> candidates{2, 4, 8};
  /// Window used by every block when dynamic_window is off.
  std::size_t fixed_window = 4;
  std::size_t mlp_ratio = 4;
  std::size_t num_classes = 4;
  SelectionMode selection = SelectionMode::Soft;
  bool dynamic_window = true;
  bool cross_scale = true;
  /// Stages (>= 1) that fuse with their predecessor; empty means all of them.
  std::vector<std::size_t> cross_scale_stages;
  double init_std = 0.02;
  bool zero_init_residual = true;
  double layer_norm_eps = 1e-5;

  std::size_t num_stages() const { return embed_dims.size(); }
  std::size_t num_scales() const { return candidates.size(); }
  /// Side length of the square feature map at `stage`.
  std::size_t stage_resolution(std::size_t stage) const;
  /// Window sizes used by blocks of `stage`.
  std::vector<std::size_t> stage_windows(std::size_t stage) const;
  bool fuses_at(std::size_t stage) const;

  /// Throws ConfigError on any inconsistency.
  void validate() const;

  /// image 64, patch 4, dims [32,64,128], depths [2,2,2], heads [2,4,8], candidates [2,4,8].
  static ModelConfig desk();
  /// image 16, patch 4, dims [8,16], depths [1,1], heads [2,2], candidates [2,4].
  static ModelConfig micro();
  /// Full-size preset (224 px, dims [128..1024], depths [2,2,18,2]).
  static ModelConfig swin_base();
};

/// Applies one config key. Returns false if the key is not a model key.
bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);
KeyValues model_config_entries(const ModelConfig& cfg);
std::string model_config_text(const ModelConfig& cfg);
/// Parses a model config; unknown keys are a ConfigError. Result is validated.
ModelConfig parse_model_config(const std::string& text);

/// Closed-form parameter count (see README for the formula).
std::size_t expected_parameter_count(const ModelConfig& cfg);

struct BlockParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionParams attn;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
};

struct MergeParams {
  Tensor w, b;  // [4C, C_next], [C_next]
};

struct FusionParams {
  Tensor align_w, align_b;  // [C_prev, C], [C]
  AttentionParams attn;
};

struct StageParams {
  std::vector<BlockParams> blocks;
  std::optional<MergeParams> merge;
};

struct ModelParams {
  Tensor predictor_w, predictor_b;  // present only with dynamic windows
  Tensor embed_w, embed_b;          // [Cin*p*p, C0], [C0]
  std::vector<StageParams> stages;
  std::vector<std::optional<FusionParams>> fusions;  // one slot per stage
  Tensor norm_gamma, norm_beta;
  Tensor head_w, head_b;            // [C_last, K], [K]
};

/// What a stage needs besides its weights.
struct StageContext {
  AttentionConfig attn;
  std::vector<std::size_t> windows;     // one fixed window, or the candidates
  std::optional<StageMixture> mixture;  // set when windows are dynamic
  double eps = 1e-5;
};

/// images[B,Cin,H,W] -> [B,C0,H/p,W/p]; each p x p patch (channel-major,
/// then row, then column) is projected by w[Cin*p*p, C0] + b.
Tensor patch_embed(const Tensor& images, const Tensor& w, const Tensor& b, std::size_t patch);

/// Pre-norm block: x + attn(LN(x)), then x + MLP(LN(x)).
Tensor block_forward(const Tensor& x, const BlockParams& p, const StageContext& ctx, bool shifted);

/// Runs the stage's blocks, alternating unshifted and shifted windows.
/// Spatial size and channels are unchanged.
Tensor stage_forward(const Tensor& x, const StageParams& p, const StageContext& ctx);

/// x[B,C,H,W] -> [B,C_next,H/2,W/2]: 2x2 neighbourhoods concatenated in
/// order (0,0),(1,0),(0,1),(1,1) then projected.
Tensor patch_merge(const Tensor& x, const MergeParams& p);

/// Average-pools prev to current's grid, projects its channels, then
/// current + cross_attention(current, aligned prev).
Tensor cross_scale_fuse(const Tensor& current, const Tensor& prev, const FusionParams& p,
                        const AttentionConfig& cfg);

struct ForwardTrace {
  Tensor logits;                         // [B, K]
  std::vector<Tensor> stage_features;    // after fusion, before merge
  std::vector<StageMixture> mixtures;    // empty without dynamic windows
  std::optional<ScaleField> scale_field;
};

class DcsStModel {
 public:
  /// Initializes weights from the "init" stream of `seed`.
  DcsStModel(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  Tensor classify(const Tensor& images) const;
  ForwardTrace forward(const Tensor& images) const;

  /// All trainable tensors in a fixed order. Handles share storage with the model.
  NamedTensors named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  /// Copies values from a table holding exactly this model's parameter names and shapes.
  void load_parameters(const NamedTensors& table);
  void set_requires_grad(bool flag);
  /// Replaces the parameter handles, in named_parameters() order, without
  /// copying. Used to differentiate the model with respect to external leaves.
  void bind_parameters(const std::vector<Tensor>& tensors);
  /// Independent copy with equal weights.
  DcsStModel clone() const;

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

/// Checkpoint file: "DCSM" | u32 version | config text | metadata text |
/// named tensor table (model parameters followed by `extra`).
struct Checkpoint {
  ModelConfig config;
  KeyValues metadata;
  NamedTensors parameters;
  NamedTensors extra;
};

void save_checkpoint(const std::string& path, const DcsStModel& model, const KeyValues& metadata,
                     const NamedTensors& extra = {});
Checkpoint load_checkpoint(const std::string& path);
DcsStModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dcsst
