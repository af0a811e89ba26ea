// SPDX-License-Identifier: Apache-2.0
#include "fmdd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fmdd/random.hpp"

namespace fmdd {

namespace {

// Rank-sum form of the Mann-Whitney statistic: sort once, give tied scores
// their average rank. Equivalent to counting positive-negative pairs with
// ties worth one half.
double rank_auc(std::span<const double> scores, std::span<const int> labels, std::size_t n_pos,
                std::size_t n_neg) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Twice the rank sum keeps everything in exact integers.
  std::uint64_t twice_rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_avg_rank = (i + 1) + j;  // ranks i+1 .. j
    for (std::size_t m = i; m < j; ++m)
      if (labels[order[m]] == 1) twice_rank_sum += twice_avg_rank;
    i = j;
  }
  // Twice U = twice rank sum - n_pos (n_pos + 1).
  const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_pos) * (n_pos + 1);
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw std::invalid_argument("compute_metrics: empty input");
  if (scores.size() != labels.size())
    throw std::invalid_argument("compute_metrics: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0, n_pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("compute_metrics: labels must be 0 or 1");
    const bool pred = scores[i] >= kDecisionThreshold;
    const bool pos = labels[i] == 1;
    n_pos += pos;
    correct += pred == pos;
    tp += pred && pos;
    fp += pred && !pos;
    fn += !pred && pos;
  }
  const std::size_t n_neg = scores.size() - n_pos;

  Metrics m;
  m.acc = static_cast<double>(correct) / static_cast<double>(scores.size());
  // F1 = 2PR / (P + R) = 2tp / (2tp + fp + fn); zero when there are no
  // true positives.
  m.f1 = tp == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  if (n_pos == 0 || n_neg == 0) {
    m.auc_defined = false;
    m.auc = std::numeric_limits<double>::quiet_NaN();
  } else {
    m.auc = rank_auc(scores, labels, n_pos, n_neg);
  }
  return m;
}

std::vector<Fold> kfold_split(std::size_t n_samples, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (k > n_samples)
    throw std::invalid_argument("kfold_split: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n_samples));
  std::vector<std::size_t> perm(n_samples);
  std::iota(perm.begin(), perm.end(), 0);
  SplitMix64 rng(seed);
  for (std::size_t i = n_samples; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);

  std::vector<Fold> folds(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = n_samples / k + (f < n_samples % k ? 1 : 0);
    folds[f].test.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(start + len));
    for (std::size_t i = 0; i < n_samples; ++i)
      if (i < start || i >= start + len) folds[f].train.push_back(perm[i]);
    start += len;
  }
  return folds;
}

}  // namespace fmdd
