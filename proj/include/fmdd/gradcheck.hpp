// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fmdd/tensor.hpp"

namespace fmdd {

struct GradCheckReport {
  double max_rel_error = 0.0;
  // Worst coordinate: which input (for multi-input checks) and flat index.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
  bool passed = true;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares the reverse-mode gradient of scalar `f` at `x` against central
/// differences with step `h` over every coordinate of `x`.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5, double tol = 1e-4);

/// Multi-input variant: `f` closes over `inputs` (which must require grad),
/// whose values are perturbed in place and restored. When
/// `max_coords_per_input` is non-zero, that many coordinates per input are
/// sampled (deterministically from `seed`) instead of all of them.
GradCheckReport grad_check_inputs(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  double h = 1e-5, double tol = 1e-4,
                                  std::size_t max_coords_per_input = 0, std::uint64_t seed = 0);

}  // namespace fmdd
