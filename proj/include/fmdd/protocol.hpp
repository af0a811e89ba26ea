// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fmdd/config.hpp"
#include "fmdd/data.hpp"
#include "fmdd/metrics.hpp"
#include "fmdd/model.hpp"
#include "fmdd/train.hpp"

namespace fmdd {

enum class ProtocolKind { kIntra, kCross };

std::string to_string(ProtocolKind kind);
ProtocolKind parse_protocol_kind(const std::string& s);

struct ProtocolSpec {
  ProtocolKind kind = ProtocolKind::kIntra;
  std::size_t k = 5;  // folds, intra only
  ModalityMask train_mask = ModalityMask::both();
  std::vector<ModalityMask> test_masks{ModalityMask::both(), ModalityMask::audio_only(),
                                       ModalityMask::vision_only()};
  std::uint64_t seed = 0;

  void validate() const;
};

struct ScenarioResult {
  ModalityMask mask;
  std::vector<Metrics> folds;
  Metrics mean;  // auc averages the folds where it is defined
};

struct EvalReport {
  std::string method;
  ModalityMask train_mask;
  std::vector<ScenarioResult> scenarios;

  const ScenarioResult& scenario(const ModalityMask& mask) const;
};

/// Intra: k-fold within `primary`, a fresh model per fold, every test mask
/// evaluated on the same trained model. Cross: train on all of `primary`,
/// test on all of `secondary`. Folds run on up to FMDD_THREADS threads;
/// results do not depend on the thread count.
EvalReport run_protocol(const ProtocolSpec& spec, const Dataset& primary, const Dataset* secondary,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                        const AuditHook& audit = {});

/// Table name of a fusion method, e.g. "SE-Concat".
std::string method_label(FusionMode mode);

/// "V&A", "V" or "A".
std::string scenario_label(const ModalityMask& mask);

/// Aligned rows: Method, Train, Test, ACC, AUC, F1 (percentages).
std::string format_report_table(const std::vector<EvalReport>& reports);

/// Machine-readable form with per-fold values.
std::string report_json(const std::vector<EvalReport>& reports);

}  // namespace fmdd
