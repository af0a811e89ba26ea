// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fmdd {

inline constexpr double kDecisionThreshold = 0.5;

struct Metrics {
  double acc = 0.0;
  double auc = 0.0;
  double f1 = 0.0;
  // False when the labels hold a single class; `auc` is then NaN.
  bool auc_defined = true;
};

/// ACC and F1 at threshold 0.5 (score >= 0.5 predicts the positive class,
/// label 1); AUC by Mann-Whitney pair counting with ties worth 0.5.
/// Throws std::invalid_argument on empty or length-mismatched input.
Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle, then k contiguous test chunks whose sizes differ by at
/// most one. Throws when k < 2 or k > n.
std::vector<Fold> kfold_split(std::size_t n_samples, std::size_t k, std::uint64_t seed);

}  // namespace fmdd
