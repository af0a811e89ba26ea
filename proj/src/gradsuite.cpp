// SPDX-License-Identifier: Apache-2.0
#include "fmdd/gradsuite.hpp"

#include <algorithm>
#include <functional>
#include <utility>

#include "fmdd/data.hpp"
#include "fmdd/model.hpp"
#include "fmdd/ops.hpp"
#include "fmdd/random.hpp"
#include "fmdd/train.hpp"

namespace fmdd {

namespace {

struct Problem {
  std::vector<Tensor> inputs;
  std::function<Tensor()> loss;
};

// Values in [lo, hi].
Tensor uniform_tensor(SplitMix64& rng, Shape shape, double lo, double hi, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(grad);
  return t;
}

// Values with |x| in [0.2, 1.2] and random sign, away from kinks at 0.
Tensor signed_tensor(SplitMix64& rng, Shape shape) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = (rng.bit() ? 1.0 : -1.0) * (0.2 + rng.uniform());
  Tensor t(std::move(shape), std::move(v));
  t.set_requires_grad(true);
  return t;
}

// sum(y * r) for a fixed random r.
Tensor weighted_sum(const Tensor& y, const Tensor& r) { return ops::sum(ops::mul(y, r)); }

using Builder = std::function<Problem(SplitMix64&)>;

// Unary op applied to one input of `shape` drawn by `draw`.
Builder unary(std::function<Tensor(const Tensor&)> op, Shape shape,
              std::function<Tensor(SplitMix64&, Shape)> draw) {
  return [=](SplitMix64& rng) {
    Tensor x = draw(rng, shape);
    Tensor r = uniform_tensor(rng, op(x).shape(), -1, 1, false);
    Tape::active().clear();
    return Problem{{x}, [=] { return weighted_sum(op(x), r); }};
  };
}

Tensor draw_any(SplitMix64& rng, Shape s) { return uniform_tensor(rng, std::move(s), -1, 1); }
Tensor draw_positive(SplitMix64& rng, Shape s) { return uniform_tensor(rng, std::move(s), 0.5, 2.0); }
Tensor draw_signed(SplitMix64& rng, Shape s) { return signed_tensor(rng, std::move(s)); }

std::vector<std::pair<std::string, Builder>> primitive_builders() {
  std::vector<std::pair<std::string, Builder>> b;
  auto binary = [](std::function<Tensor(const Tensor&, const Tensor&)> op, Shape sa, Shape sb,
                   bool positive_b = false) -> Builder {
    return [=](SplitMix64& rng) {
      Tensor x = draw_any(rng, sa);
      Tensor y = positive_b ? draw_positive(rng, sb) : draw_any(rng, sb);
      Tensor r = uniform_tensor(rng, op(x, y).shape(), -1, 1, false);
      Tape::active().clear();
      return Problem{{x, y}, [=] { return weighted_sum(op(x, y), r); }};
    };
  };
  b.emplace_back("matmul", binary(ops::matmul, {3, 4}, {4, 2}));
  b.emplace_back("add", binary(ops::add, {3, 4}, {3, 4}));
  b.emplace_back("sub", binary(ops::sub, {3, 4}, {3, 4}));
  b.emplace_back("mul", binary(ops::mul, {3, 4}, {3, 4}));
  b.emplace_back("div", binary(ops::div, {3, 4}, {3, 4}, true));
  b.emplace_back("add_bias", binary(ops::add_bias, {3, 4}, {4}));
  b.emplace_back("transpose", unary(ops::transpose, {3, 5}, draw_any));
  b.emplace_back("scale", unary([](const Tensor& x) { return ops::scale(x, -1.7); }, {6}, draw_any));
  b.emplace_back("add_scalar", unary([](const Tensor& x) { return ops::add_scalar(x, 0.3); }, {6}, draw_any));
  b.emplace_back("pow_scalar", unary([](const Tensor& x) { return ops::pow_scalar(x, 2.5); }, {6}, draw_positive));
  b.emplace_back("clamp_min", unary([](const Tensor& x) { return ops::clamp_min(x, 0.0); }, {8}, draw_signed));
  b.emplace_back("log", unary(ops::log, {6}, draw_positive));
  b.emplace_back("gelu", unary(ops::gelu, {3, 4}, [](SplitMix64& rng, Shape s) {
                   return uniform_tensor(rng, std::move(s), -3, 3);
                 }));
  b.emplace_back("relu", unary(ops::relu, {8}, draw_signed));
  b.emplace_back("sigmoid", unary(ops::sigmoid, {8}, draw_any));
  b.emplace_back("softmax", unary(ops::softmax, {3, 4}, draw_any));
  b.emplace_back("sum", unary(ops::sum, {3, 4}, draw_any));
  b.emplace_back("mean", unary(ops::mean, {3, 4}, draw_any));
  b.emplace_back("mean_rows", unary(ops::mean_rows, {3, 4}, draw_any));
  b.emplace_back("global_avg_pool", unary(ops::global_avg_pool, {2, 3, 4}, draw_any));
  b.emplace_back("reshape", unary([](const Tensor& x) { return ops::reshape(x, {4, 3}); }, {3, 4}, draw_any));
  b.emplace_back("slice_rows", unary([](const Tensor& x) { return ops::slice_rows(x, 1, 3); }, {4, 3}, draw_any));
  b.emplace_back("select", unary([](const Tensor& x) { return ops::select(x, 2); }, {4, 3}, draw_any));
  b.emplace_back("slice_cols", unary([](const Tensor& x) { return ops::slice_cols(x, 1, 4); }, {3, 5}, draw_any));
  b.emplace_back("concat_rows", binary([](const Tensor& x, const Tensor& y) { return ops::concat_rows({x, y}); },
                                       {2, 3}, {4, 3}));
  b.emplace_back("concat_cols", binary([](const Tensor& x, const Tensor& y) { return ops::concat_cols({x, y}); },
                                       {3, 2}, {3, 4}));
  b.emplace_back("stack", binary([](const Tensor& x, const Tensor& y) { return ops::stack({x, y}); }, {2, 3},
                                 {2, 3}));
  b.emplace_back("layer_norm", [](SplitMix64& rng) {
    Tensor x = draw_any(rng, {3, 6});
    Tensor g = uniform_tensor(rng, {6}, 0.5, 1.5);
    Tensor be = draw_any(rng, {6});
    Tensor r = uniform_tensor(rng, {3, 6}, -1, 1, false);
    return Problem{{x, g, be}, [=] { return weighted_sum(ops::layer_norm(x, g, be), r); }};
  });
  b.emplace_back("conv1d", [](SplitMix64& rng) {
    Tensor x = draw_any(rng, {3, 7});
    Tensor w = draw_any(rng, {4, 3, 3});
    Tensor bias = draw_any(rng, {4});
    Tensor r = uniform_tensor(rng, {4, 7}, -1, 1, false);
    return Problem{{x, w, bias}, [=] { return weighted_sum(ops::conv1d(x, w, bias, 1), r); }};
  });
  b.emplace_back("conv2d", [](SplitMix64& rng) {
    Tensor x = draw_any(rng, {2, 6, 5});
    Tensor w = draw_any(rng, {3, 2, 3, 3});
    Tensor bias = draw_any(rng, {3});
    const Tensor probe = ops::conv2d(x, w, bias, 2, 1);
    Tensor r = uniform_tensor(rng, probe.shape(), -1, 1, false);
    Tape::active().clear();
    return Problem{{x, w, bias}, [=] { return weighted_sum(ops::conv2d(x, w, bias, 2, 1), r); }};
  });
  b.emplace_back("cross_entropy", [](SplitMix64& rng) {
    Tensor x = uniform_tensor(rng, {4, 2}, -2, 2);
    std::vector<int> labels(4);
    for (auto& l : labels) l = rng.bit();
    return Problem{{x}, [=] { return ops::cross_entropy(x, labels); }};
  });
  b.emplace_back("pick", [](SplitMix64& rng) {
    Tensor x = draw_any(rng, {4, 3});
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng.below(3));
    Tensor r = uniform_tensor(rng, {4}, -1, 1, false);
    return Problem{{x}, [=] { return weighted_sum(ops::pick(x, labels), r); }};
  });
  return b;
}

void merge(GradCheckReport& acc, const GradCheckReport& r) {
  if (r.max_rel_error >= acc.max_rel_error) {
    const std::size_t coords = acc.coordinates_checked;
    const bool passed = acc.passed;
    acc = r;
    acc.coordinates_checked = coords;
    acc.passed = passed;
  }
  acc.coordinates_checked += r.coordinates_checked;
  acc.passed = acc.passed && r.passed;
}

}  // namespace

std::vector<GradSuiteEntry> primitive_grad_suite(std::uint64_t seed, std::size_t trials) {
  std::vector<GradSuiteEntry> out;
  for (const auto& [name, build] : primitive_builders()) {
    SplitMix64 rng(seed ^ fnv1a(name));
    GradSuiteEntry e{name, kPrimitiveGradTol, {}};
    for (std::size_t t = 0; t < trials; ++t) {
      Problem p = build(rng);
      Tape::active().clear();
      merge(e.report, grad_check_inputs(p.loss, p.inputs, 1e-5, kPrimitiveGradTol));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<GradSuiteEntry> model_grad_suite(const ModelConfig& base, std::uint64_t seed,
                                             std::size_t coords_per_param) {
  std::vector<GradSuiteEntry> out;
  for (FusionMode mode :
       {FusionMode::kAva, FusionMode::kConcat, FusionMode::kSeConcat, FusionMode::kCmfl, FusionMode::kPrompt}) {
    const ModelConfig cfg = with_fusion(base, mode);
    Model model(cfg, seed);
    // Adapters start with a zero up-projection, which hides every gradient
    // upstream of it. Perturb it so the whole adapter path is exercised.
    SplitMix64 rng(seed ^ 0xA5A5A5A5ULL);
    for (auto& p : model.params().params())
      if (p.name.find(".up.") != std::string::npos)
        for (auto& v : p.value.mutable_data()) v = 0.1 * rng.normal();

    SynthSpec spec = SynthSpec::for_config(cfg);
    spec.n_samples = 2;
    spec.seed = seed;
    Dataset data = gen_synthetic(spec);
    data.samples[0].label = 0;
    data.samples[1].label = 1;

    std::vector<Tensor> inputs;
    for (auto& p : model.params().params())
      if (p.trainable()) inputs.push_back(p.value);
    auto loss = [&] { return batch_loss(model, data, {0, 1}, ModalityMask::both()); };
    Tape::active().clear();
    GradSuiteEntry e{"model/" + to_string(mode), kModelGradTol, {}};
    e.report = grad_check_inputs(loss, inputs, 1e-5, kModelGradTol, coords_per_param, seed);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace fmdd
