// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "fmdd/backbone.hpp"
#include "fmdd/config.hpp"
#include "fmdd/nn.hpp"
#include "fmdd/tensor.hpp"

namespace fmdd {

// ---- Audio-Visual Adapter -------------------------------------------------

/// down [d x d_b], conv [2d_b x 2d_b x k] (absent when k == 0), up [d_b x d]
/// with zero-initialized weight and bias.
void ava_specs(std::vector<ParamSpec>& out, const std::string& prefix, const AvaConfig& cfg);

/// Adapter branch output [S x d], to be added to the residual stream.
///
/// All tokens go through linear-down and GELU. The T visual and T audio
/// bottleneck tokens are then paired per time step into a [2d_b x T] array
/// and mixed by one ungrouped temporal conv (kernel k, padding k/2). The
/// class token (and any prompts) skip the conv. Everything then passes GELU
/// and linear-up. With k == 0 the conv stage and its second GELU are absent,
/// which reduces the module to a plain bottleneck adapter.
Tensor ava_forward(const TokenSequence& seq, const AvaConfig& cfg, const ParameterStore& store,
                   const std::string& prefix);

// ---- Baseline fusion heads -------------------------------------------------

void concat_fuse_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d,
                       std::size_t n_classes);
/// linear([pooled_v ; pooled_a]) -> [n_classes] logits.
Tensor concat_fuse(const Tensor& pooled_v, const Tensor& pooled_a, const ParameterStore& store,
                   const std::string& prefix);

void se_concat_fuse_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d,
                          std::size_t reduction, std::size_t n_classes);
/// SE block per branch (prefix + "se_v." / "se_a."), then concat_fuse
/// (prefix + "concat.").
Tensor se_concat_fuse(const Tensor& pooled_v, const Tensor& pooled_a, const ParameterStore& store,
                      const std::string& prefix);

// ---- Cross-modal focal loss --------------------------------------------

inline constexpr double kCmflClamp = 1e-7;

/// Mean over the batch of -(1 - w)^gamma * log(p) with w = q * 2pq / (p + q).
/// p and q hold, per sample, the probability each branch assigns to the
/// true class. Throws std::domain_error when a probability is NaN or > 1.
Tensor cmfl_loss(const Tensor& p, const Tensor& q, double gamma);
/// Scalar form of the same formula.
double cmfl_loss_value(double p, double q, double gamma);

// ---- Prompt tuning -------------------------------------------------------

/// [class | prompts | visual | audio]. An undefined `prompts` tensor means
/// zero prompts and returns the sequence unchanged.
TokenSequence prompt_prepend(const TokenSequence& seq, const Tensor& prompts);

}  // namespace fmdd
