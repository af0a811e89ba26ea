// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fmdd/data.hpp"
#include "fmdd/model.hpp"
#include "fmdd/nn.hpp"

namespace fmdd {

/// SGD + momentum + coupled weight decay with a StepLR schedule.
struct TrainConfig {
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double momentum = 0.9;
  std::size_t step_size = 20;
  double gamma = 0.1;
  std::size_t epochs = 25;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Momentum buffers keyed by parameter name.
struct SgdState {
  std::unordered_map<std::string, std::vector<double>> velocity;
};

struct SgdHyper {
  double lr = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-5;
};

/// For every trainable parameter: g = grad + wd * p; v = m * v + g;
/// p -= lr * v. Frozen parameters are not touched. All gradients are
/// cleared afterwards. Throws std::logic_error when a trainable parameter
/// has no gradient.
void sgd_step(ParameterStore& store, SgdState& state, const SgdHyper& hyper);

/// base_lr * gamma^floor(epoch / step_size).
double step_lr(std::size_t epoch, const TrainConfig& cfg);

/// Mean softmax cross-entropy over the batch.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

/// Differentiable loss of one batch under the model's fusion mode: joint
/// cross-entropy, plus both cross-modal focal terms in CMFL mode.
Tensor batch_loss(const Model& model, const Dataset& data, const std::vector<std::size_t>& batch,
                  const ModalityMask& mask);

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

/// Trains on `indices` for cfg.epochs. The last incomplete batch is kept.
TrainHistory train_model(Model& model, const Dataset& data, const std::vector<std::size_t>& indices,
                         const ModalityMask& train_mask, const TrainConfig& cfg);

/// Called with each evaluated sample's masked inputs (after zero-blocking).
using AuditHook = std::function<void(std::size_t index, const VisualClip& clip,
                                     const AudioSpectrogram& spec, const ModalityMask& mask)>;

/// Positive-class ("lie") probability per sample, without recording a tape.
std::vector<double> predict_scores(const Model& model, const Dataset& data,
                                   const std::vector<std::size_t>& indices, const ModalityMask& mask,
                                   const AuditHook& audit = {});

}  // namespace fmdd
