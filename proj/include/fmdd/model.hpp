// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fmdd/backbone.hpp"
#include "fmdd/config.hpp"
#include "fmdd/nn.hpp"

namespace fmdd {

/// Which raw inputs are present. Missing ones are zero-blocked.
struct ModalityMask {
  bool vision = true;
  bool audio = true;

  /// Throws std::invalid_argument when both modalities are absent.
  void validate() const;
  /// "va", "v" or "a".
  std::string name() const;
  static ModalityMask parse(const std::string& s);
  static ModalityMask both() { return {true, true}; }
  static ModalityMask vision_only() { return {true, false}; }
  static ModalityMask audio_only() { return {false, true}; }

  friend bool operator==(const ModalityMask&, const ModalityMask&) = default;
};

/// Replaces each absent modality's raw input with zeros of the same shape.
std::pair<VisualClip, AudioSpectrogram> apply_mask(const VisualClip& clip,
                                                   const AudioSpectrogram& spec,
                                                   const ModalityMask& mask);

struct ForwardOutput {
  Tensor logits;  // [n_classes]
  // Branch heads on pooled visual / audio tokens; CMFL mode only.
  Tensor aux_visual;
  Tensor aux_audio;
};

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  std::size_t frozen = 0;
};

/// Every parameter of a configuration, in registration order.
std::vector<ParamSpec> model_param_specs(const ModelConfig& cfg);

ParamCounts count_parameters(const ParameterStore& store);

/// Feature extractors -> temporal projections -> [class|visual|audio] tokens
/// -> N encoder blocks (with adapters in AVA mode) -> classification head.
class Model {
 public:
  /// Builds, initializes from `seed`, and freezes the "encoder." namespace.
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0);

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  ForwardOutput forward(const VisualClip& clip, const AudioSpectrogram& spec,
                        const ModalityMask& mask = ModalityMask::both()) const;

  /// Tokens entering the encoder stack (after prompts, if any).
  TokenSequence embed(const VisualClip& clip, const AudioSpectrogram& spec) const;

  /// T' = T + MHSA(LN1(T)) [+ A(T)];  out = T' + ffn(T') [+ A'(T')].
  Tensor encoder_block(const TokenSequence& seq, std::size_t layer) const;

 private:
  ModelConfig cfg_;
  ParameterStore store_;
};

inline const std::string kEncoderPrefix = "encoder.";
inline const std::string kAvaPrefix = "ava.";

std::string encoder_layer_prefix(std::size_t layer);
std::string ava_prefix(std::size_t layer, bool mhsa_site);

}  // namespace fmdd
