// SPDX-License-Identifier: Apache-2.0
#include "fmdd/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "fmdd/ops.hpp"
#include "fmdd/random.hpp"

namespace fmdd {

ParameterStore::ParameterStore(const std::vector<ParamSpec>& specs) {
  params_.reserve(specs.size());
  for (const auto& s : specs) add(s);
}

Parameter& ParameterStore::add(const ParamSpec& spec) {
  if (index_.count(spec.name)) throw std::invalid_argument("duplicate parameter name: " + spec.name);
  double fill = spec.init == InitKind::kOnes ? 1.0 : 0.0;
  Tensor value(spec.shape, fill);
  value.set_requires_grad(true);
  index_.emplace(spec.name, params_.size());
  params_.push_back(Parameter{spec.name, std::move(value), spec.init});
  return params_.back();
}

bool ParameterStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

const Tensor& ParameterStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return params_[it->second].value;
}

Parameter& ParameterStore::param(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw std::out_of_range("unknown parameter: " + std::string(name));
  return params_[it->second];
}

std::size_t ParameterStore::set_trainable(std::string_view prefix, bool flag) {
  std::size_t n = 0;
  for (auto& p : params_) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    p.set_trainable(flag);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("no parameter matches prefix '" + std::string(prefix) + "'");
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void init_params(ParameterStore& store, std::uint64_t seed) {
  for (auto& p : store.params()) {
    auto values = p.value.mutable_data();
    switch (p.init) {
      case InitKind::kZeros:
        std::fill(values.begin(), values.end(), 0.0);
        break;
      case InitKind::kOnes:
        std::fill(values.begin(), values.end(), 1.0);
        break;
      case InitKind::kNormal:
      case InitKind::kConvFanIn:
      case InitKind::kLinearFanIn: {
        double std = kInitStd;
        if (p.init == InitKind::kConvFanIn)
          std = std::sqrt(2.0 / static_cast<double>(values.size() / p.value.dim(0)));
        else if (p.init == InitKind::kLinearFanIn)
          std = std::sqrt(1.0 / static_cast<double>(p.value.dim(0)));
        SplitMix64 rng(fnv1a(p.name) ^ (seed * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL));
        for (auto& v : values) v = rng.truncated_normal(std);
        break;
      }
    }
  }
}

void linear_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t din,
                  std::size_t dout, InitKind weight_init, InitKind bias_init) {
  out.push_back({prefix + "weight", {din, dout}, weight_init});
  out.push_back({prefix + "bias", {dout}, bias_init});
}

void layer_norm_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + "gamma", {d}, InitKind::kOnes});
  out.push_back({prefix + "beta", {d}, InitKind::kZeros});
}

void MhsaConfig::validate() const {
  if (n_heads == 0 || d_model == 0 || d_model % n_heads != 0)
    throw std::invalid_argument("mhsa: n_heads=" + std::to_string(n_heads) +
                                " does not divide d_model=" + std::to_string(d_model));
}

void mhsa_specs(std::vector<ParamSpec>& out, const std::string& prefix, const MhsaConfig& cfg) {
  cfg.validate();
  for (const char* p : {"q.", "k.", "v.", "o."}) linear_specs(out, prefix + p, cfg.d_model, cfg.d_model);
}

void mlp_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d,
               std::size_t hidden_ratio) {
  linear_specs(out, prefix + "fc1.", d, hidden_ratio * d);
  linear_specs(out, prefix + "fc2.", hidden_ratio * d, d);
}

void se_block_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t channels,
                    std::size_t reduction) {
  if (reduction == 0) throw std::invalid_argument("se_block: reduction must be >= 1");
  const std::size_t hidden = std::max<std::size_t>(1, channels / reduction);
  linear_specs(out, prefix + "fc1.", channels, hidden);
  linear_specs(out, prefix + "fc2.", hidden, channels);
}

std::size_t count_specs(const std::vector<ParamSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += numel(s.shape);
  return n;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() == 1) {
    Tensor row = ops::reshape(x, {1, x.dim(0)});
    return ops::reshape(linear(row, weight, bias), {weight.dim(1)});
  }
  return ops::add_bias(ops::matmul(x, weight), bias);
}

Tensor linear(const Tensor& x, const ParameterStore& store, const std::string& prefix) {
  return linear(x, store.get(prefix + "weight"), store.get(prefix + "bias"));
}

Tensor layer_norm(const Tensor& x, const ParameterStore& store, const std::string& prefix) {
  return ops::layer_norm(x, store.get(prefix + "gamma"), store.get(prefix + "beta"));
}

Tensor mhsa(const Tensor& tokens, const MhsaConfig& cfg, const ParameterStore& store,
            const std::string& prefix) {
  cfg.validate();
  if (tokens.rank() != 2 || tokens.dim(1) != cfg.d_model)
    throw ShapeError("mhsa: tokens " + shape_str(tokens.shape()) + " do not have width " +
                     std::to_string(cfg.d_model));
  const Tensor q = linear(tokens, store, prefix + "q.");
  const Tensor k = linear(tokens, store, prefix + "k.");
  const Tensor v = linear(tokens, store, prefix + "v.");
  const std::size_t dh = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> heads;
  heads.reserve(cfg.n_heads);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const Tensor qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = ops::slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = ops::slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor attn = ops::softmax(ops::scale(ops::matmul(qh, ops::transpose(kh)), scale));
    heads.push_back(ops::matmul(attn, vh));
  }
  const Tensor merged = cfg.n_heads == 1 ? heads.front() : ops::concat_cols(heads);
  return linear(merged, store, prefix + "o.");
}

Tensor mlp(const Tensor& tokens, const ParameterStore& store, const std::string& prefix) {
  return linear(ops::gelu(linear(tokens, store, prefix + "fc1.")), store, prefix + "fc2.");
}

Tensor se_block(const Tensor& feat, const ParameterStore& store, const std::string& prefix) {
  const Tensor gate =
      ops::sigmoid(linear(ops::relu(linear(feat, store, prefix + "fc1.")), store, prefix + "fc2."));
  return ops::mul(feat, gate);
}

}  // namespace fmdd
