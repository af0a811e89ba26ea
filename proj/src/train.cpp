// SPDX-License-Identifier: Apache-2.0
#include "fmdd/train.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "fmdd/fusion.hpp"
#include "fmdd/ops.hpp"
#include "fmdd/random.hpp"

namespace fmdd {

void TrainConfig::validate() const {
  if (batch_size == 0 || epochs == 0 || step_size == 0)
    throw std::invalid_argument("train config: batch_size, epochs and step_size must be positive");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0) || !(momentum >= 0.0) || !(gamma > 0.0))
    throw std::invalid_argument("train config: lr, weight_decay, momentum must be >= 0 and gamma > 0");
}

void sgd_step(ParameterStore& store, SgdState& state, const SgdHyper& hyper) {
  for (auto& p : store.params()) {
    if (!p.trainable()) continue;
    if (!p.value.has_grad()) throw std::logic_error("sgd_step: trainable parameter " + p.name + " has no gradient");
  }
  for (auto& p : store.params()) {
    if (!p.trainable()) continue;
    auto values = p.value.mutable_data();
    auto grad = p.value.grad();
    auto& v = state.velocity[p.name];
    if (v.size() != values.size()) v.assign(values.size(), 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] + hyper.weight_decay * values[i];
      v[i] = hyper.momentum * v[i] + g;
      values[i] -= hyper.lr * v[i];
    }
  }
  store.zero_grad();
}

double step_lr(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr * std::pow(cfg.gamma, static_cast<double>(epoch / cfg.step_size));
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  return ops::cross_entropy(logits, labels);
}

Tensor batch_loss(const Model& model, const Dataset& data, const std::vector<std::size_t>& batch,
                  const ModalityMask& mask) {
  std::vector<Tensor> logits, aux_v, aux_a;
  std::vector<int> labels;
  for (auto i : batch) {
    ForwardOutput out = model.forward(data.clip(i), data.spectrogram(i), data.effective_mask(i, mask));
    logits.push_back(out.logits);
    if (out.aux_visual.defined()) {
      aux_v.push_back(out.aux_visual);
      aux_a.push_back(out.aux_audio);
    }
    labels.push_back(data.samples[i].label);
  }
  Tensor loss = cross_entropy(ops::stack(logits), labels);
  if (model.config().fusion == FusionMode::kCmfl) {
    const Tensor pv = ops::pick(ops::softmax(ops::stack(aux_v)), labels);
    const Tensor pa = ops::pick(ops::softmax(ops::stack(aux_a)), labels);
    const double g = model.config().cmfl_gamma;
    loss = ops::add(loss, ops::add(cmfl_loss(pv, pa, g), cmfl_loss(pa, pv, g)));
  }
  return loss;
}

TrainHistory train_model(Model& model, const Dataset& data, const std::vector<std::size_t>& indices,
                         const ModalityMask& train_mask, const TrainConfig& cfg) {
  cfg.validate();
  data.check_compatible(model.config());
  if (indices.empty()) throw std::invalid_argument("train_model: no training samples");

  TrainHistory history;
  SgdState state;
  std::vector<std::size_t> order = indices;
  SplitMix64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  Tape::active().clear();
  model.params().zero_grad();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const SgdHyper hyper{step_lr(epoch, cfg), cfg.momentum, cfg.weight_decay};
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor loss = batch_loss(model, data, batch, train_mask);
      total += loss.item();
      ++batches;
      backward(loss);
      sgd_step(model.params(), state, hyper);
    }
    history.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  return history;
}

std::vector<double> predict_scores(const Model& model, const Dataset& data,
                                   const std::vector<std::size_t>& indices, const ModalityMask& mask,
                                   const AuditHook& audit) {
  NoGradGuard no_grad;
  std::vector<double> scores;
  scores.reserve(indices.size());
  for (auto i : indices) {
    const ModalityMask m = data.effective_mask(i, mask);
    if (audit) {
      const auto [clip, spec] = apply_mask(data.clip(i), data.spectrogram(i), m);
      audit(i, clip, spec, m);
    }
    const Tensor logits = model.forward(data.clip(i), data.spectrogram(i), m).logits;
    scores.push_back(ops::softmax(logits)[1]);
  }
  return scores;
}

}  // namespace fmdd
