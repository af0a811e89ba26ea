// Shared fixtures for the unit tests.
#pragma once

#include <cmath>
#include <bit>
#include <filesystem>
#include <unistd.h>
#include <string>
#include <vector>

#include "fmdd/random.hpp"
#include "fmdd/tensor.hpp"

namespace fmdd::test {

inline Tensor random_tensor(SplitMix64& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = false) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(requires_grad);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  return true;
}

/// Unique path under the system temp directory, removed on destruction.
class TempPath {
 public:
  explicit TempPath(const std::string& stem) {
    static int counter = 0;
    path_ = (std::filesystem::temp_directory_path() /
             ("fmdd_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + stem))
                .string();
  }
  ~TempPath() { std::filesystem::remove(path_); }
  const std::string& str() const { return path_; }

 private:
  std::string path_;
};

}  // namespace fmdd::test
