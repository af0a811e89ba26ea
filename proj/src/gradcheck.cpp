// SPDX-License-Identifier: Apache-2.0
#include "fmdd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fmdd/random.hpp"

namespace fmdd {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h, double tol) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  return grad_check_inputs([&] { return f(probe); }, {probe}, h, tol);
}

GradCheckReport grad_check_inputs(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                  double h, double tol, std::size_t max_coords_per_input,
                                  std::uint64_t seed) {
  for (auto& t : inputs) t.zero_grad();
  Tape::active().clear();
  backward(f());

  GradCheckReport report;
  SplitMix64 rng(seed);
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(t.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_input != 0 && coords.size() > max_coords_per_input) {
      for (std::size_t i = 0; i < max_coords_per_input; ++i)
        std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
      coords.resize(max_coords_per_input);
    }

    auto values = t.mutable_data();
    for (std::size_t i : coords) {
      const double orig = values[i];
      values[i] = orig + h;
      const double up = f().item();
      values[i] = orig - h;
      const double down = f().item();
      values[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[i], numeric);
      ++report.coordinates_checked;
      if (err > report.max_rel_error || report.coordinates_checked == 1) {
        report.max_rel_error = err;
        report.worst_input = k;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  return report;
}

}  // namespace fmdd
