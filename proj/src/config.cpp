// SPDX-License-Identifier: Apache-2.0
#include "fmdd/config.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fmdd {

std::size_t ExtractorConfig::out_extent(std::size_t in) const {
  std::size_t e = in;
  for (const auto& s : stages) {
    const std::size_t pad = s.kernel / 2;
    if (s.stride == 0 || e + 2 * pad < s.kernel)
      throw std::invalid_argument("extractor stage collapses extent " + std::to_string(e));
    e = (e + 2 * pad - s.kernel) / s.stride + 1;
  }
  return e;
}

std::string AvaPlacement::name() const {
  if (mhsa && ffn) return "mhsa+ffn";
  if (mhsa) return "mhsa";
  if (ffn) return "ffn";
  return "none";
}

bool AvaConfig::has_layer(std::size_t layer) const {
  return std::find(layer_set.begin(), layer_set.end(), layer) != layer_set.end();
}

void AvaConfig::validate(std::size_t n_layers) const {
  if (layer_set.empty()) return;
  if (d_bottleneck == 0) throw std::invalid_argument("ava: d_bottleneck must be >= 1");
  if (kernel_k != 0 && kernel_k % 2 == 0)
    throw std::invalid_argument("ava: kernel_k must be odd (or 0), got " + std::to_string(kernel_k));
  for (auto l : layer_set)
    if (l >= n_layers)
      throw std::invalid_argument("ava: layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(n_layers) + ")");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kAva: return "ava";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kSeConcat: return "se-concat";
    case FusionMode::kCmfl: return "cmfl";
    case FusionMode::kPrompt: return "prompt";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "ava") return FusionMode::kAva;
  if (s == "concat") return FusionMode::kConcat;
  if (s == "se-concat") return FusionMode::kSeConcat;
  if (s == "cmfl") return FusionMode::kCmfl;
  if (s == "prompt") return FusionMode::kPrompt;
  throw std::invalid_argument("unknown fusion mode: " + s);
}

std::size_t ModelConfig::sequence_length() const {
  return base_sequence_length() + (fusion == FusionMode::kPrompt ? n_prompts : 0);
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (time_steps == 0) fail("time_steps must be >= 1");
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (n_classes != 2) fail("only binary classification is supported");
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    fail("n_heads=" + std::to_string(n_heads) + " must divide d_model=" + std::to_string(d_model));
  if (visual.in_channels != frame_dims[0]) fail("visual extractor input channels != frame channels");
  if (audio.in_channels != spec_dims[0]) fail("audio extractor input channels != spectrogram channels");
  visual.out_extent(frame_dims[1]);
  visual.out_extent(frame_dims[2]);
  if (audio_time() != time_steps)
    fail("audio extractor yields T'=" + std::to_string(audio_time()) + " but T=" +
         std::to_string(time_steps));
  if (audio_freq() == 0) fail("audio frequency extent collapsed");
  for (auto k : {visual_proj_kernel, audio_proj_kernel})
    if (k % 2 == 0) fail("projection kernels must be odd");
  if (ava.d_model != d_model) fail("ava.d_model differs from d_model");
  ava.validate(n_layers);
  if (fusion != FusionMode::kAva && !ava.layer_set.empty())
    fail("adapters are only active in ava fusion mode");
  if (se_reduction == 0) fail("se_reduction must be >= 1");
  if (cmfl_gamma < 0.0) fail("cmfl_gamma must be non-negative");
}

namespace {

ExtractorConfig four_stage(std::size_t in_ch, std::vector<std::size_t> widths,
                           std::size_t first_kernel, std::size_t first_stride) {
  ExtractorConfig e;
  e.in_channels = in_ch;
  for (std::size_t i = 0; i < widths.size(); ++i)
    e.stages.push_back({widths[i], i == 0 ? first_kernel : 3, i == 0 ? first_stride : 2});
  return e;
}

std::vector<std::size_t> all_layers(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

ModelConfig make_preset(const std::string& name) {
  ModelConfig c;
  c.preset = name;
  if (name == "test") {
    c.time_steps = 4;
    c.frame_dims = {1, 16, 16};
    c.spec_dims = {1, 64, 48};
    c.visual = four_stage(1, {4, 8, 16, 16}, 3, 2);
    c.audio = four_stage(1, {4, 8, 16, 16}, 3, 2);
    c.d_model = 32;
    c.n_heads = 4;
    c.n_layers = 2;
    c.ava.d_bottleneck = 8;
  } else if (name == "paper") {
    // 224x224 face crops, 640x480 spectrogram image; overall stride 32 as in
    // ResNet18 so the audio map is 20 x 15.
    c.time_steps = 20;
    c.frame_dims = {3, 224, 224};
    c.spec_dims = {3, 640, 480};
    c.visual = four_stage(3, {64, 128, 256, 512}, 7, 4);
    c.audio = four_stage(3, {64, 128, 256, 512}, 7, 4);
    c.d_model = 768;
    c.n_heads = 12;
    c.n_layers = 8;
    c.ava.d_bottleneck = 32;
  } else {
    throw std::invalid_argument("unknown preset: " + name + " (expected test|paper)");
  }
  c.ava.d_model = c.d_model;
  c.ava.kernel_k = 5;
  c.ava.layer_set = all_layers(c.n_layers);
  c.validate();
  return c;
}

ModelConfig with_fusion(ModelConfig cfg, FusionMode mode) {
  cfg.fusion = mode;
  if (mode == FusionMode::kAva) {
    if (cfg.ava.layer_set.empty()) cfg.ava.layer_set = all_layers(cfg.n_layers);
  } else {
    cfg.ava.layer_set.clear();
  }
  return cfg;
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s, char sep = ',') {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(std::stoull(item));
  return out;
}

std::string stages_str(const ExtractorConfig& e) {
  std::string s;
  for (std::size_t i = 0; i < e.stages.size(); ++i)
    s += (i ? "," : "") + std::to_string(e.stages[i].channels) + ":" +
         std::to_string(e.stages[i].kernel) + ":" + std::to_string(e.stages[i].stride);
  return s;
}

std::vector<ConvStage> parse_stages(const std::string& s) {
  std::vector<ConvStage> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto parts = split_sizes(item, ':');
    if (parts.size() != 3) throw std::invalid_argument("bad extractor stage: " + item);
    out.push_back({parts[0], parts[1], parts[2]});
  }
  return out;
}

template <std::size_t N>
std::array<std::size_t, N> to_array(const std::vector<std::size_t>& v, const std::string& key) {
  if (v.size() != N) throw std::invalid_argument("config key " + key + " needs " + std::to_string(N) + " values");
  std::array<std::size_t, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

}  // namespace

std::string serialize_config(const ModelConfig& c) {
  char gamma[64];
  std::snprintf(gamma, sizeof gamma, "%.17g", c.cmfl_gamma);
  std::ostringstream os;
  os << "preset=" << c.preset << '\n'
     << "time_steps=" << c.time_steps << '\n'
     << "frame_dims=" << join({c.frame_dims.begin(), c.frame_dims.end()}) << '\n'
     << "spec_dims=" << join({c.spec_dims.begin(), c.spec_dims.end()}) << '\n'
     << "visual.in_channels=" << c.visual.in_channels << '\n'
     << "visual.stages=" << stages_str(c.visual) << '\n'
     << "audio.in_channels=" << c.audio.in_channels << '\n'
     << "audio.stages=" << stages_str(c.audio) << '\n'
     << "visual_proj_kernel=" << c.visual_proj_kernel << '\n'
     << "audio_proj_kernel=" << c.audio_proj_kernel << '\n'
     << "d_model=" << c.d_model << '\n'
     << "n_heads=" << c.n_heads << '\n'
     << "n_layers=" << c.n_layers << '\n'
     << "mlp_ratio=" << c.mlp_ratio << '\n'
     << "ava.d_bottleneck=" << c.ava.d_bottleneck << '\n'
     << "ava.kernel_k=" << c.ava.kernel_k << '\n'
     << "ava.placement=" << c.ava.placement.name() << '\n'
     << "ava.layer_set=" << join(c.ava.layer_set) << '\n'
     << "fusion=" << to_string(c.fusion) << '\n'
     << "ffn_norm=" << (c.ffn_norm == FfnNormOrder::kAsPaper ? "as_paper" : "pre_norm") << '\n'
     << "n_prompts=" << c.n_prompts << '\n'
     << "se_reduction=" << c.se_reduction << '\n'
     << "cmfl_gamma=" << gamma << '\n'
     << "n_classes=" << c.n_classes << '\n';
  return os.str();
}

ModelConfig parse_config(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("config missing key: " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto num = [&](const std::string& key) { return static_cast<std::size_t>(std::stoull(take(key))); };

  ModelConfig c;
  c.preset = take("preset");
  c.time_steps = num("time_steps");
  c.frame_dims = to_array<3>(split_sizes(take("frame_dims")), "frame_dims");
  c.spec_dims = to_array<3>(split_sizes(take("spec_dims")), "spec_dims");
  c.visual.in_channels = num("visual.in_channels");
  c.visual.stages = parse_stages(take("visual.stages"));
  c.audio.in_channels = num("audio.in_channels");
  c.audio.stages = parse_stages(take("audio.stages"));
  c.visual_proj_kernel = num("visual_proj_kernel");
  c.audio_proj_kernel = num("audio_proj_kernel");
  c.d_model = num("d_model");
  c.n_heads = num("n_heads");
  c.n_layers = num("n_layers");
  c.mlp_ratio = num("mlp_ratio");
  c.ava.d_model = c.d_model;
  c.ava.d_bottleneck = num("ava.d_bottleneck");
  c.ava.kernel_k = num("ava.kernel_k");
  const std::string placement = take("ava.placement");
  c.ava.placement.mhsa = placement == "mhsa" || placement == "mhsa+ffn";
  c.ava.placement.ffn = placement == "ffn" || placement == "mhsa+ffn";
  c.ava.layer_set = split_sizes(take("ava.layer_set"));
  c.fusion = parse_fusion_mode(take("fusion"));
  const std::string norm = take("ffn_norm");
  if (norm == "as_paper") c.ffn_norm = FfnNormOrder::kAsPaper;
  else if (norm == "pre_norm") c.ffn_norm = FfnNormOrder::kPreNorm;
  else throw std::invalid_argument("bad ffn_norm: " + norm);
  c.n_prompts = num("n_prompts");
  c.se_reduction = num("se_reduction");
  c.cmfl_gamma = std::stod(take("cmfl_gamma"));
  c.n_classes = num("n_classes");
  if (!kv.empty()) throw std::invalid_argument("unknown config key: " + kv.begin()->first);
  c.validate();
  return c;
}

}  // namespace fmdd
