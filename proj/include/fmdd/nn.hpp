// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fmdd/tensor.hpp"

namespace fmdd {

enum class InitKind {
  kNormal,  // truncated normal(0, 0.02) at +-2 sigma
  kConvFanIn,    // truncated normal(0, sqrt(2 / fan_in)); conv weight [out x in x ...]
  kLinearFanIn,  // truncated normal(0, sqrt(1 / fan_in)); linear weight [in x out]
  kZeros,
  kOnes,
};

inline constexpr double kInitStd = 0.02;

/// Name, shape and init rule of a parameter, known before allocation so that
/// large presets can be counted without materializing them.
struct ParamSpec {
  std::string name;
  Shape shape;
  InitKind init = InitKind::kNormal;
};

struct Parameter {
  std::string name;
  Tensor value;
  InitKind init = InitKind::kNormal;

  // The tensor's requires_grad flag is the single source of truth: frozen
  // parameters do not accumulate gradients at all.
  bool trainable() const { return value.requires_grad(); }
  void set_trainable(bool flag) { value.set_requires_grad(flag); }
};

/// Ordered, name-unique registry of a model's parameters.
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(const std::vector<ParamSpec>& specs);

  /// Throws if the name is already present.
  Parameter& add(const ParamSpec& spec);

  bool contains(std::string_view name) const;
  /// Throws std::out_of_range naming the missing parameter.
  const Tensor& get(std::string_view name) const;
  Parameter& param(std::string_view name);

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }

  /// Sets `trainable` on every parameter whose name starts with `prefix`.
  /// Returns the match count; zero matches throws.
  std::size_t set_trainable(std::string_view prefix, bool flag);

  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Deterministic init: each parameter draws from its own splitmix64 stream
/// keyed by (seed, name), so adding or removing parameters never perturbs
/// the values of the others.
void init_params(ParameterStore& store, std::uint64_t seed);

// ---- Spec builders -------------------------------------------------------

void linear_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t din,
                  std::size_t dout, InitKind weight_init = InitKind::kLinearFanIn,
                  InitKind bias_init = InitKind::kZeros);
void layer_norm_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d);

struct MhsaConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws std::invalid_argument unless n_heads divides d_model.
  void validate() const;
};

void mhsa_specs(std::vector<ParamSpec>& out, const std::string& prefix, const MhsaConfig& cfg);
void mlp_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d,
               std::size_t hidden_ratio);
void se_block_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t channels,
                    std::size_t reduction);

/// Total scalar count of a spec list.
std::size_t count_specs(const std::vector<ParamSpec>& specs);

// ---- Layers --------------------------------------------------------------

/// x [.. x din] (rank 1 or 2) times W [din x dout] plus b [dout].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor linear(const Tensor& x, const ParameterStore& store, const std::string& prefix);

Tensor layer_norm(const Tensor& x, const ParameterStore& store, const std::string& prefix);

/// Full (unmasked) multi-head self-attention over tokens [S x d].
Tensor mhsa(const Tensor& tokens, const MhsaConfig& cfg, const ParameterStore& store,
            const std::string& prefix);

/// linear(d -> r*d), GELU, linear(r*d -> d).
Tensor mlp(const Tensor& tokens, const ParameterStore& store, const std::string& prefix);

/// Squeeze-and-excitation on an already pooled vector [C]:
/// feat * sigmoid(W2 relu(W1 feat)).
Tensor se_block(const Tensor& feat, const ParameterStore& store, const std::string& prefix);

}  // namespace fmdd
