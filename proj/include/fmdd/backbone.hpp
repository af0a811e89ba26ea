// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fmdd/config.hpp"
#include "fmdd/nn.hpp"
#include "fmdd/tensor.hpp"

namespace fmdd {

/// T face crops, frames [T x C x H x W].
struct VisualClip {
  Tensor frames;
  std::size_t time_steps() const { return frames.dim(0); }
};

/// One spectrogram image [C x time x frequency].
struct AudioSpectrogram {
  Tensor image;
};

/// Half-open index range into a token sequence.
struct TokenRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

/// [class | prompts (optional) | visual 0..T-1 | audio 0..T-1]. Visual token
/// visual.begin + t and audio token audio.begin + t share time step t.
struct TokenLayout {
  std::size_t time_steps = 0;
  std::size_t prompt_count = 0;

  std::size_t class_index() const { return 0; }
  TokenRange prompts() const { return {1, 1 + prompt_count}; }
  TokenRange visual() const { return {1 + prompt_count, 1 + prompt_count + time_steps}; }
  TokenRange audio() const {
    return {1 + prompt_count + time_steps, 1 + prompt_count + 2 * time_steps};
  }
  std::size_t length() const { return 1 + prompt_count + 2 * time_steps; }
};

struct TokenSequence {
  Tensor tokens;  // [S x d]
  TokenLayout layout;
};

/// Registers extractor, projection, class-token and position parameters.
void backbone_specs(std::vector<ParamSpec>& out, const ModelConfig& cfg);

/// Shared-weight per-frame CNN with global average pool: [T x dv].
Tensor visual_extract(const VisualClip& clip, const ModelConfig& cfg, const ParameterStore& store);

/// Unshared CNN over the spectrogram keeping time and frequency axes:
/// [da x T' x F'], with T' == T by configuration.
Tensor audio_extract(const AudioSpectrogram& spec, const ModelConfig& cfg,
                     const ParameterStore& store);

/// Temporal conv1d over frame features: [T x dv] -> [T x d].
Tensor project_visual(const Tensor& features, const ModelConfig& cfg, const ParameterStore& store);

/// Frequency-global conv then temporal conv1d: [da x T x F'] -> [T x d].
Tensor project_audio(const Tensor& features, const ModelConfig& cfg, const ParameterStore& store);

/// [class | visual | audio] plus learnable position embeddings.
TokenSequence assemble_tokens(const Tensor& visual_tokens, const Tensor& audio_tokens,
                              const Tensor& class_token, const Tensor& pos_emb);

/// Shape inference for the extractors and projections, used to validate
/// presets too large to run. Returns {T x dv, da x T' x F', T x d, T x d}.
struct BackboneShapes {
  Shape visual_features;
  Shape audio_features;
  Shape visual_tokens;
  Shape audio_tokens;
  std::size_t sequence_length = 0;
};
BackboneShapes infer_backbone_shapes(const ModelConfig& cfg);

}  // namespace fmdd
