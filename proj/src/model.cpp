// SPDX-License-Identifier: Apache-2.0
#include "fmdd/model.hpp"

#include <stdexcept>

#include "fmdd/fusion.hpp"
#include "fmdd/ops.hpp"

namespace fmdd {

void ModalityMask::validate() const {
  if (!vision && !audio) throw std::invalid_argument("modality mask blocks both vision and audio");
}

std::string ModalityMask::name() const {
  if (vision && audio) return "va";
  if (vision) return "v";
  if (audio) return "a";
  return "none";
}

ModalityMask ModalityMask::parse(const std::string& s) {
  if (s == "va" || s == "av") return both();
  if (s == "v") return vision_only();
  if (s == "a") return audio_only();
  throw std::invalid_argument("unknown scenario: " + s + " (expected va|v|a)");
}

std::pair<VisualClip, AudioSpectrogram> apply_mask(const VisualClip& clip,
                                                   const AudioSpectrogram& spec,
                                                   const ModalityMask& mask) {
  mask.validate();
  VisualClip c = mask.vision ? clip : VisualClip{Tensor::zeros(clip.frames.shape())};
  AudioSpectrogram s = mask.audio ? spec : AudioSpectrogram{Tensor::zeros(spec.image.shape())};
  return {std::move(c), std::move(s)};
}

std::string encoder_layer_prefix(std::size_t layer) {
  return kEncoderPrefix + "layer" + std::to_string(layer) + ".";
}

std::string ava_prefix(std::size_t layer, bool mhsa_site) {
  return kAvaPrefix + "layer" + std::to_string(layer) + (mhsa_site ? ".mhsa." : ".ffn.");
}

std::vector<ParamSpec> model_param_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  backbone_specs(specs, cfg);
  const MhsaConfig attn{cfg.d_model, cfg.n_heads};
  for (std::size_t j = 0; j < cfg.n_layers; ++j) {
    const std::string p = encoder_layer_prefix(j);
    layer_norm_specs(specs, p + "ln1.", cfg.d_model);
    mhsa_specs(specs, p + "attn.", attn);
    layer_norm_specs(specs, p + "ln2.", cfg.d_model);
    mlp_specs(specs, p + "mlp.", cfg.d_model, cfg.mlp_ratio);
  }
  if (cfg.fusion == FusionMode::kAva) {
    for (std::size_t j : cfg.ava.layer_set) {
      if (cfg.ava.placement.mhsa) ava_specs(specs, ava_prefix(j, true), cfg.ava);
      if (cfg.ava.placement.ffn) ava_specs(specs, ava_prefix(j, false), cfg.ava);
    }
  }
  const std::size_t d = cfg.d_model, nc = cfg.n_classes;
  switch (cfg.fusion) {
    case FusionMode::kAva:
      linear_specs(specs, "head.", d, nc);
      break;
    case FusionMode::kPrompt:
      specs.push_back({"prompt.tokens", {cfg.n_prompts, d}, InitKind::kNormal});
      linear_specs(specs, "head.", d, nc);
      break;
    case FusionMode::kConcat:
      concat_fuse_specs(specs, "fusion.concat.", d, nc);
      break;
    case FusionMode::kSeConcat:
      se_concat_fuse_specs(specs, "fusion.", d, cfg.se_reduction, nc);
      break;
    case FusionMode::kCmfl:
      linear_specs(specs, "head.", d, nc);
      linear_specs(specs, "aux_visual.", d, nc);
      linear_specs(specs, "aux_audio.", d, nc);
      break;
  }
  return specs;
}

ParamCounts count_parameters(const ParameterStore& store) {
  ParamCounts c;
  for (const auto& p : store.params()) {
    c.total += p.value.size();
    (p.trainable() ? c.trainable : c.frozen) += p.value.size();
  }
  return c;
}

Model::Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), store_(model_param_specs(cfg_)) {
  init_params(store_, seed);
  store_.set_trainable(kEncoderPrefix, false);
}

TokenSequence Model::embed(const VisualClip& clip, const AudioSpectrogram& spec) const {
  const Tensor tv = project_visual(visual_extract(clip, cfg_, store_), cfg_, store_);
  const Tensor ta = project_audio(audio_extract(spec, cfg_, store_), cfg_, store_);
  TokenSequence seq = assemble_tokens(tv, ta, store_.get("tokens.class"), store_.get("tokens.pos"));
  if (cfg_.fusion == FusionMode::kPrompt && cfg_.n_prompts > 0)
    seq = prompt_prepend(seq, store_.get("prompt.tokens"));
  return seq;
}

Tensor Model::encoder_block(const TokenSequence& seq, std::size_t layer) const {
  const std::string p = encoder_layer_prefix(layer);
  const bool adapted = cfg_.fusion == FusionMode::kAva && cfg_.ava.has_layer(layer);
  const Tensor& x = seq.tokens;

  Tensor mid = ops::add(x, mhsa(layer_norm(x, store_, p + "ln1."), {cfg_.d_model, cfg_.n_heads},
                                store_, p + "attn."));
  if (adapted && cfg_.ava.placement.mhsa)
    mid = ops::add(mid, ava_forward(seq, cfg_.ava, store_, ava_prefix(layer, true)));

  const Tensor ffn = cfg_.ffn_norm == FfnNormOrder::kAsPaper
                         ? layer_norm(mlp(mid, store_, p + "mlp."), store_, p + "ln2.")
                         : mlp(layer_norm(mid, store_, p + "ln2."), store_, p + "mlp.");
  Tensor out = ops::add(mid, ffn);
  if (adapted && cfg_.ava.placement.ffn)
    out = ops::add(out, ava_forward({mid, seq.layout}, cfg_.ava, store_, ava_prefix(layer, false)));
  return out;
}

ForwardOutput Model::forward(const VisualClip& clip, const AudioSpectrogram& spec,
                             const ModalityMask& mask) const {
  const auto [masked_clip, masked_spec] = apply_mask(clip, spec, mask);
  TokenSequence seq = embed(masked_clip, masked_spec);
  for (std::size_t j = 0; j < cfg_.n_layers; ++j) seq.tokens = encoder_block(seq, j);

  const TokenRange vis = seq.layout.visual(), aud = seq.layout.audio();
  auto pooled = [&](TokenRange r) { return ops::mean_rows(ops::slice_rows(seq.tokens, r.begin, r.end)); };
  auto class_out = [&] { return ops::select(seq.tokens, seq.layout.class_index()); };

  ForwardOutput out;
  switch (cfg_.fusion) {
    case FusionMode::kAva:
    case FusionMode::kPrompt:
      out.logits = linear(class_out(), store_, "head.");
      break;
    case FusionMode::kConcat:
      out.logits = concat_fuse(pooled(vis), pooled(aud), store_, "fusion.concat.");
      break;
    case FusionMode::kSeConcat:
      out.logits = se_concat_fuse(pooled(vis), pooled(aud), store_, "fusion.");
      break;
    case FusionMode::kCmfl:
      out.logits = linear(class_out(), store_, "head.");
      out.aux_visual = linear(pooled(vis), store_, "aux_visual.");
      out.aux_audio = linear(pooled(aud), store_, "aux_audio.");
      break;
  }
  return out;
}

}  // namespace fmdd
