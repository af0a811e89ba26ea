// SPDX-License-Identifier: Apache-2.0
#include "fmdd/backbone.hpp"

#include "fmdd/ops.hpp"

namespace fmdd {

namespace {

void extractor_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                     const ExtractorConfig& e) {
  std::size_t in = e.in_channels;
  for (std::size_t i = 0; i < e.stages.size(); ++i) {
    const auto& s = e.stages[i];
    const std::string p = prefix + "stage" + std::to_string(i) + ".";
    out.push_back({p + "weight", {s.channels, in, s.kernel, s.kernel}, InitKind::kConvFanIn});
    out.push_back({p + "bias", {s.channels}, InitKind::kZeros});
    in = s.channels;
  }
}

Tensor run_extractor(Tensor x, const ExtractorConfig& e, const ParameterStore& store,
                     const std::string& prefix) {
  for (std::size_t i = 0; i < e.stages.size(); ++i) {
    const auto& s = e.stages[i];
    const std::string p = prefix + "stage" + std::to_string(i) + ".";
    x = ops::gelu(ops::conv2d(x, store.get(p + "weight"), store.get(p + "bias"), s.stride,
                              s.kernel / 2));
  }
  return x;
}

void check_dims(const Tensor& x, const Shape& expected, const char* what) {
  if (x.shape() != expected)
    throw ShapeError(std::string(what) + ": expected " + shape_str(expected) + ", got " +
                     shape_str(x.shape()));
}

}  // namespace

void backbone_specs(std::vector<ParamSpec>& out, const ModelConfig& cfg) {
  extractor_specs(out, "visual.", cfg.visual);
  extractor_specs(out, "audio.", cfg.audio);
  const std::size_t d = cfg.d_model, dv = cfg.visual_dim(), da = cfg.audio_dim();
  out.push_back({"proj_visual.weight", {d, dv, cfg.visual_proj_kernel}, InitKind::kConvFanIn});
  out.push_back({"proj_visual.bias", {d}, InitKind::kZeros});
  out.push_back({"proj_audio.freq.weight", {da, da, 1, cfg.audio_freq()}, InitKind::kConvFanIn});
  out.push_back({"proj_audio.freq.bias", {da}, InitKind::kZeros});
  out.push_back({"proj_audio.time.weight", {d, da, cfg.audio_proj_kernel}, InitKind::kConvFanIn});
  out.push_back({"proj_audio.time.bias", {d}, InitKind::kZeros});
  out.push_back({"tokens.class", {d}, InitKind::kNormal});
  out.push_back({"tokens.pos", {cfg.base_sequence_length(), d}, InitKind::kNormal});
}

Tensor visual_extract(const VisualClip& clip, const ModelConfig& cfg, const ParameterStore& store) {
  const auto& fd = cfg.frame_dims;
  check_dims(clip.frames, {cfg.time_steps, fd[0], fd[1], fd[2]}, "visual_extract");
  std::vector<Tensor> rows;
  rows.reserve(cfg.time_steps);
  for (std::size_t t = 0; t < cfg.time_steps; ++t) {
    Tensor frame = ops::select(clip.frames, t);
    rows.push_back(ops::global_avg_pool(run_extractor(frame, cfg.visual, store, "visual.")));
  }
  return ops::stack(rows);
}

Tensor audio_extract(const AudioSpectrogram& spec, const ModelConfig& cfg,
                     const ParameterStore& store) {
  const auto& sd = cfg.spec_dims;
  check_dims(spec.image, {sd[0], sd[1], sd[2]}, "audio_extract");
  Tensor out = run_extractor(spec.image, cfg.audio, store, "audio.");
  if (out.dim(1) != cfg.time_steps)
    throw ShapeError("audio_extract: T'=" + std::to_string(out.dim(1)) + " differs from T=" +
                     std::to_string(cfg.time_steps));
  return out;
}

Tensor project_visual(const Tensor& features, const ModelConfig& cfg, const ParameterStore& store) {
  check_dims(features, {cfg.time_steps, cfg.visual_dim()}, "project_visual");
  Tensor y = ops::conv1d(ops::transpose(features), store.get("proj_visual.weight"),
                         store.get("proj_visual.bias"), cfg.visual_proj_kernel / 2);
  return ops::transpose(y);
}

Tensor project_audio(const Tensor& features, const ModelConfig& cfg, const ParameterStore& store) {
  check_dims(features, {cfg.audio_dim(), cfg.time_steps, cfg.audio_freq()}, "project_audio");
  Tensor collapsed = ops::conv2d(features, store.get("proj_audio.freq.weight"),
                                 store.get("proj_audio.freq.bias"), 1, 0);
  collapsed = ops::reshape(collapsed, {cfg.audio_dim(), cfg.time_steps});
  Tensor y = ops::conv1d(collapsed, store.get("proj_audio.time.weight"),
                         store.get("proj_audio.time.bias"), cfg.audio_proj_kernel / 2);
  return ops::transpose(y);
}

TokenSequence assemble_tokens(const Tensor& visual_tokens, const Tensor& audio_tokens,
                              const Tensor& class_token, const Tensor& pos_emb) {
  if (visual_tokens.rank() != 2 || visual_tokens.shape() != audio_tokens.shape())
    throw ShapeError("assemble_tokens: visual " + shape_str(visual_tokens.shape()) +
                     " and audio " + shape_str(audio_tokens.shape()) + " must share T and d");
  const std::size_t t = visual_tokens.dim(0), d = visual_tokens.dim(1);
  if (class_token.shape() != Shape{d})
    throw ShapeError("assemble_tokens: class token " + shape_str(class_token.shape()) +
                     " vs width " + std::to_string(d));
  if (pos_emb.shape() != Shape{2 * t + 1, d})
    throw ShapeError("assemble_tokens: position embeddings " + shape_str(pos_emb.shape()) +
                     " vs sequence " + shape_str({2 * t + 1, d}));
  Tensor seq = ops::concat_rows({ops::reshape(class_token, {1, d}), visual_tokens, audio_tokens});
  return {ops::add(seq, pos_emb), TokenLayout{t, 0}};
}

BackboneShapes infer_backbone_shapes(const ModelConfig& cfg) {
  cfg.validate();
  BackboneShapes s;
  s.visual_features = {cfg.time_steps, cfg.visual_dim()};
  s.audio_features = {cfg.audio_dim(), cfg.audio_time(), cfg.audio_freq()};
  s.visual_tokens = {cfg.time_steps, cfg.d_model};
  s.audio_tokens = {cfg.audio_time(), cfg.d_model};
  s.sequence_length = cfg.base_sequence_length();
  return s;
}

}  // namespace fmdd
