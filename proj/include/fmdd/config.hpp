// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace fmdd {

/// One conv stage of a stand-in feature extractor (padding is kernel/2).
struct ConvStage {
  std::size_t channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 2;
};

struct ExtractorConfig {
  std::size_t in_channels = 1;
  std::vector<ConvStage> stages;

  std::size_t out_channels() const { return stages.empty() ? in_channels : stages.back().channels; }
  /// Spatial extent after all stages; throws if any stage collapses it.
  std::size_t out_extent(std::size_t in) const;
};

/// Where adapters sit inside an encoder block.
struct AvaPlacement {
  bool mhsa = true;
  bool ffn = true;

  bool any() const { return mhsa || ffn; }
  std::string name() const;
};

struct AvaConfig {
  std::size_t d_model = 0;
  std::size_t d_bottleneck = 0;
  // Odd temporal kernel; 0 disables the conv stage entirely.
  std::size_t kernel_k = 5;
  AvaPlacement placement;
  std::vector<std::size_t> layer_set;

  bool has_layer(std::size_t layer) const;
  void validate(std::size_t n_layers) const;
};

enum class FusionMode { kAva, kConcat, kSeConcat, kCmfl, kPrompt };

std::string to_string(FusionMode mode);
/// Accepts ava|concat|se-concat|cmfl|prompt.
FusionMode parse_fusion_mode(const std::string& s);

enum class FfnNormOrder {
  kAsPaper,  // out = x + LN(MLP(x)) + A'(x)
  kPreNorm,  // out = x + MLP(LN(x)) + A'(x)
};

struct ModelConfig {
  std::string preset = "test";
  std::size_t time_steps = 4;

  std::array<std::size_t, 3> frame_dims{1, 16, 16};  // C, H, W per frame
  std::array<std::size_t, 3> spec_dims{1, 64, 48};   // C, time, frequency

  ExtractorConfig visual;
  ExtractorConfig audio;
  std::size_t visual_proj_kernel = 3;
  std::size_t audio_proj_kernel = 3;

  std::size_t d_model = 32;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t mlp_ratio = 4;

  AvaConfig ava;
  FusionMode fusion = FusionMode::kAva;
  FfnNormOrder ffn_norm = FfnNormOrder::kAsPaper;

  std::size_t n_prompts = 5;
  std::size_t se_reduction = 4;
  double cmfl_gamma = 2.0;
  std::size_t n_classes = 2;

  std::size_t visual_dim() const { return visual.out_channels(); }
  std::size_t audio_dim() const { return audio.out_channels(); }
  /// Audio feature map extents after the extractor: (time, frequency).
  std::size_t audio_time() const { return audio.out_extent(spec_dims[1]); }
  std::size_t audio_freq() const { return audio.out_extent(spec_dims[2]); }
  std::size_t base_sequence_length() const { return 2 * time_steps + 1; }
  std::size_t sequence_length() const;

  /// Throws std::invalid_argument describing the first inconsistency.
  void validate() const;
};

/// "test" (T=4, dv=16, d=32, N=2) or "paper" (T=20, dv=512, d=768, N=8).
ModelConfig make_preset(const std::string& name);
/// Same preset with a different fusion mode (AVA layers cleared for others).
ModelConfig with_fusion(ModelConfig cfg, FusionMode mode);

/// key=value lines, one per field.
std::string serialize_config(const ModelConfig& cfg);
ModelConfig parse_config(const std::string& text);

}  // namespace fmdd
