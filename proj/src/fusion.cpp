// SPDX-License-Identifier: Apache-2.0
#include "fmdd/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "fmdd/ops.hpp"

namespace fmdd {

void ava_specs(std::vector<ParamSpec>& out, const std::string& prefix, const AvaConfig& cfg) {
  const std::size_t d = cfg.d_model, db = cfg.d_bottleneck;
  linear_specs(out, prefix + "down.", d, db);
  if (cfg.kernel_k > 0) {
    out.push_back({prefix + "conv.weight", {2 * db, 2 * db, cfg.kernel_k}, InitKind::kConvFanIn});
    out.push_back({prefix + "conv.bias", {2 * db}, InitKind::kZeros});
  }
  linear_specs(out, prefix + "up.", db, d, InitKind::kZeros, InitKind::kZeros);
}

Tensor ava_forward(const TokenSequence& seq, const AvaConfig& cfg, const ParameterStore& store,
                   const std::string& prefix) {
  const TokenLayout& layout = seq.layout;
  if (seq.tokens.rank() != 2 || seq.tokens.dim(0) != layout.length() || layout.time_steps == 0)
    throw ShapeError("ava_forward: sequence " + shape_str(seq.tokens.shape()) +
                     " does not hold exactly T=" + std::to_string(layout.time_steps) +
                     " visual and T audio tokens");
  const Tensor bottleneck = ops::gelu(linear(seq.tokens, store, prefix + "down."));
  if (cfg.kernel_k == 0) return linear(bottleneck, store, prefix + "up.");

  const std::size_t db = cfg.d_bottleneck;
  const TokenRange vis = layout.visual(), aud = layout.audio();
  // Row t of `paired` is [v_t ; a_t]; transposed it is a 2d_b-channel signal over time.
  const Tensor paired = ops::concat_cols({ops::slice_rows(bottleneck, vis.begin, vis.end),
                                          ops::slice_rows(bottleneck, aud.begin, aud.end)});
  const Tensor fused = ops::transpose(ops::conv1d(ops::transpose(paired), store.get(prefix + "conv.weight"),
                                                  store.get(prefix + "conv.bias"), cfg.kernel_k / 2));
  const Tensor merged = ops::concat_rows({ops::slice_rows(bottleneck, 0, vis.begin),
                                          ops::slice_cols(fused, 0, db),
                                          ops::slice_cols(fused, db, 2 * db)});
  return linear(ops::gelu(merged), store, prefix + "up.");
}

void concat_fuse_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d,
                       std::size_t n_classes) {
  linear_specs(out, prefix, 2 * d, n_classes);
}

Tensor concat_fuse(const Tensor& pooled_v, const Tensor& pooled_a, const ParameterStore& store,
                   const std::string& prefix) {
  if (pooled_v.rank() != 1 || pooled_v.shape() != pooled_a.shape())
    throw ShapeError("concat_fuse: branch shapes " + shape_str(pooled_v.shape()) + " and " +
                     shape_str(pooled_a.shape()));
  const std::size_t d = pooled_v.dim(0);
  const Tensor joined =
      ops::concat_cols({ops::reshape(pooled_v, {1, d}), ops::reshape(pooled_a, {1, d})});
  const Tensor logits = linear(joined, store, prefix);
  return ops::reshape(logits, {logits.dim(1)});
}

void se_concat_fuse_specs(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d,
                          std::size_t reduction, std::size_t n_classes) {
  se_block_specs(out, prefix + "se_v.", d, reduction);
  se_block_specs(out, prefix + "se_a.", d, reduction);
  concat_fuse_specs(out, prefix + "concat.", d, n_classes);
}

Tensor se_concat_fuse(const Tensor& pooled_v, const Tensor& pooled_a, const ParameterStore& store,
                      const std::string& prefix) {
  return concat_fuse(se_block(pooled_v, store, prefix + "se_v."),
                     se_block(pooled_a, store, prefix + "se_a."), store, prefix + "concat.");
}

namespace {

void check_probabilities(const Tensor& t, const char* name) {
  for (double v : t.data())
    if (std::isnan(v) || v > 1.0 + 1e-12)
      throw std::domain_error(std::string("cmfl_loss: ") + name + " = " + std::to_string(v) +
                              " outside (0, 1]");
}

}  // namespace

Tensor cmfl_loss(const Tensor& p, const Tensor& q, double gamma) {
  if (p.shape() != q.shape())
    throw ShapeError("cmfl_loss: p " + shape_str(p.shape()) + " vs q " + shape_str(q.shape()));
  check_probabilities(p, "p");
  check_probabilities(q, "q");
  const Tensor pc = ops::clamp_min(p, kCmflClamp);
  const Tensor qc = ops::clamp_min(q, kCmflClamp);
  const Tensor harmonic = ops::div(ops::scale(ops::mul(pc, qc), 2.0), ops::add(pc, qc));
  const Tensor w = ops::mul(qc, harmonic);
  // 1 - w can round slightly below zero when p = q = 1.
  const Tensor focus = ops::pow_scalar(ops::clamp_min(ops::add_scalar(ops::scale(w, -1.0), 1.0), 0.0), gamma);
  return ops::scale(ops::mean(ops::mul(focus, ops::log(pc))), -1.0);
}

double cmfl_loss_value(double p, double q, double gamma) {
  NoGradGuard guard;
  return cmfl_loss(Tensor::scalar(p), Tensor::scalar(q), gamma).item();
}

TokenSequence prompt_prepend(const TokenSequence& seq, const Tensor& prompts) {
  if (!prompts.defined()) return seq;
  if (seq.layout.prompt_count != 0) throw std::invalid_argument("prompt_prepend: sequence already has prompts");
  const std::size_t d = seq.tokens.dim(1);
  if (prompts.rank() != 2 || prompts.dim(1) != d)
    throw ShapeError("prompt_prepend: prompts " + shape_str(prompts.shape()) + " vs width " +
                     std::to_string(d));
  const std::size_t s = seq.tokens.dim(0);
  Tensor tokens = ops::concat_rows({ops::slice_rows(seq.tokens, 0, 1), prompts,
                                    ops::slice_rows(seq.tokens, 1, s)});
  TokenLayout layout = seq.layout;
  layout.prompt_count = prompts.dim(0);
  return {tokens, layout};
}

}  // namespace fmdd
