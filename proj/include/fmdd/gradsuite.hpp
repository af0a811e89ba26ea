// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fmdd/config.hpp"
#include "fmdd/gradcheck.hpp"

namespace fmdd {

inline constexpr double kPrimitiveGradTol = 1e-4;
inline constexpr double kModelGradTol = 1e-3;

struct GradSuiteEntry {
  std::string name;
  double tolerance = 0.0;
  GradCheckReport report;  // worst over all trials
};

/// Every differentiable primitive, each at `trials` random points, against a
/// randomly weighted sum so that no output coordinate is trivially ignored.
std::vector<GradSuiteEntry> primitive_grad_suite(std::uint64_t seed, std::size_t trials = 10);

/// Full-model loss on a two-sample synthetic batch, one entry per fusion
/// mode, checked on `coords_per_param` sampled coordinates of every
/// trainable parameter (0 = all coordinates).
std::vector<GradSuiteEntry> model_grad_suite(const ModelConfig& base, std::uint64_t seed,
                                             std::size_t coords_per_param = 4);

}  // namespace fmdd
