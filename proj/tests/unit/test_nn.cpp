#include <doctest.h>

#include <cmath>

#include "fmdd/gradcheck.hpp"
#include "fmdd/model.hpp"
#include "fmdd/nn.hpp"
#include "fmdd/ops.hpp"
#include "fmdd/train.hpp"
#include "helpers.hpp"

using namespace fmdd;
using fmdd::test::random_tensor;

namespace {

ParameterStore make_store(const std::vector<ParamSpec>& specs, std::uint64_t seed) {
  ParameterStore s(specs);
  init_params(s, seed);
  return s;
}

void fill(ParameterStore& s, const std::string& name, double v) {
  for (auto& x : s.param(name).value.mutable_data()) x = v;
}

std::vector<Tensor> all_values(ParameterStore& s) {
  std::vector<Tensor> v;
  for (auto& p : s.params()) v.push_back(p.value);
  return v;
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  std::vector<Tensor> rows;
  for (auto i : perm) rows.push_back(ops::slice_rows(x, i, i + 1));
  return ops::concat_rows(rows);
}

}  // namespace

TEST_SUITE("nn") {
  TEST_CASE("linear identity and affine shift") {
    Tensor x({1, 2}, std::vector<double>{1, 2});
    Tensor eye({2, 2}, std::vector<double>{1, 0, 0, 1});
    auto y0 = linear(x, eye, Tensor({2}));
    CHECK(y0[0] == 1.0);
    CHECK(y0[1] == 2.0);
    auto y = linear(x, eye, Tensor({2}, 1.0));
    CHECK(y[0] == 2.0);
    CHECK(y[1] == 3.0);
    auto v = linear(Tensor({2}, std::vector<double>{1, 2}), eye, Tensor({2}, 1.0));
    CHECK(v.shape() == Shape{2});
  }

  TEST_CASE("linear gradcheck") {
    SplitMix64 rng(1);
    Tensor x = random_tensor(rng, {3, 4}, -1, 1, true), w = random_tensor(rng, {4, 5}, -1, 1, true),
           b = random_tensor(rng, {5}, -1, 1, true);
    auto r = grad_check_inputs([&] { return ops::sum(linear(x, w, b)); }, {x, w, b}, 1e-5, 1e-6);
    CHECK(r.max_rel_error < 1e-6);
  }

  TEST_CASE("linear rejects mismatched shapes") {
    CHECK_THROWS_AS(linear(Tensor({2, 3}), Tensor({4, 2}), Tensor({2})), ShapeError);
  }

  TEST_CASE("mhsa with a single token reduces to the value/output projections") {
    std::vector<ParamSpec> specs;
    const MhsaConfig cfg{8, 2};
    mhsa_specs(specs, "a.", cfg);
    auto s = make_store(specs, 3);
    for (const char* n : {"a.q.bias", "a.k.bias", "a.v.bias", "a.o.bias"}) {
      SplitMix64 rng(fnv1a(n));
      for (auto& v : s.param(n).value.mutable_data()) v = rng.uniform() - 0.5;
    }
    SplitMix64 rng(4);
    Tensor x = random_tensor(rng, {1, 8});
    auto y = mhsa(x, cfg, s, "a.");
    auto expect = linear(linear(x, s, "a.v."), s, "a.o.");
    CHECK(fmdd::test::max_abs_diff(y.data(), expect.data()) < 1e-14);
  }

  TEST_CASE("mhsa is permutation equivariant") {
    std::vector<ParamSpec> specs;
    const MhsaConfig cfg{8, 2};
    mhsa_specs(specs, "a.", cfg);
    auto s = make_store(specs, 5);
    SplitMix64 rng(6);
    Tensor x = random_tensor(rng, {5, 8}, -2, 2);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    auto lhs = mhsa(permute_rows(x, perm), cfg, s, "a.");
    auto rhs = permute_rows(mhsa(x, cfg, s, "a."), perm);
    CHECK(fmdd::test::max_abs_diff(lhs.data(), rhs.data()) < 1e-12);
  }

  TEST_CASE("mhsa gradcheck S=3 d=8 h=2") {
    std::vector<ParamSpec> specs;
    const MhsaConfig cfg{8, 2};
    mhsa_specs(specs, "a.", cfg);
    auto s = make_store(specs, 7);
    for (auto& p : s.params()) p.set_trainable(true);
    SplitMix64 rng(8);
    Tensor x = random_tensor(rng, {3, 8}, -1, 1, true);
    Tensor r = random_tensor(rng, {3, 8});
    auto inputs = all_values(s);
    inputs.push_back(x);
    auto rep = grad_check_inputs([&] { return ops::sum(ops::mul(mhsa(x, cfg, s, "a."), r)); }, inputs);
    CHECK(rep.max_rel_error < 1e-4);
  }

  TEST_CASE("mhsa config validation") {
    CHECK_THROWS_AS((MhsaConfig{10, 3}.validate()), std::invalid_argument);
    CHECK_NOTHROW((MhsaConfig{12, 3}.validate()));
  }

  TEST_CASE("mlp zero weights give zero output and keep shape") {
    std::vector<ParamSpec> specs;
    mlp_specs(specs, "m.", 6, 2);
    ParameterStore s(specs);
    SplitMix64 rng(9);
    auto y = mlp(random_tensor(rng, {4, 6}), s, "m.");
    CHECK(y.shape() == Shape{4, 6});
    for (double v : y.data()) CHECK(v == 0.0);
    init_params(s, 1);
    for (std::size_t S : {1, 3, 7}) CHECK(mlp(random_tensor(rng, {S, 6}), s, "m.").shape() == Shape{S, 6});
  }

  TEST_CASE("mlp gradcheck d=6 r=2") {
    std::vector<ParamSpec> specs;
    mlp_specs(specs, "m.", 6, 2);
    auto s = make_store(specs, 10);
    for (auto& p : s.params()) p.set_trainable(true);
    SplitMix64 rng(11);
    Tensor x = random_tensor(rng, {3, 6}, -1, 1, true);
    auto inputs = all_values(s);
    inputs.push_back(x);
    auto rep = grad_check_inputs([&] { return ops::sum(mlp(x, s, "m.")); }, inputs);
    CHECK(rep.max_rel_error < 1e-4);
  }

  TEST_CASE("se_block gates") {
    std::vector<ParamSpec> specs;
    se_block_specs(specs, "se.", 8, 4);
    ParameterStore s(specs);
    CHECK(s.get("se.fc1.weight").shape() == Shape{8, 2});
    SplitMix64 rng(12);
    Tensor f = random_tensor(rng, {8});
    auto half = se_block(f, s, "se.");
    for (std::size_t i = 0; i < 8; ++i) CHECK(half[i] == doctest::Approx(f[i] / 2).epsilon(1e-15));
    fill(s, "se.fc2.bias", 50.0);
    auto open = se_block(f, s, "se.");
    for (std::size_t i = 0; i < 8; ++i) CHECK(open[i] == doctest::Approx(f[i]).epsilon(1e-12));
  }

  TEST_CASE("se_block gradcheck C=8 r=4") {
    std::vector<ParamSpec> specs;
    se_block_specs(specs, "se.", 8, 4);
    auto s = make_store(specs, 13);
    for (auto& p : s.params()) p.set_trainable(true);
    // Move fc1 pre-activations away from the relu kink.
    fill(s, "se.fc1.bias", 0.3);
    SplitMix64 rng(14);
    Tensor f = random_tensor(rng, {8}, -1, 1, true);
    auto inputs = all_values(s);
    inputs.push_back(f);
    auto rep = grad_check_inputs([&] { return ops::sum(se_block(f, s, "se.")); }, inputs);
    CHECK(rep.max_rel_error < 1e-4);
  }

  TEST_CASE("layers stay finite for large inputs") {
    std::vector<ParamSpec> specs;
    const MhsaConfig cfg{8, 2};
    mhsa_specs(specs, "a.", cfg);
    mlp_specs(specs, "m.", 8, 4);
    layer_norm_specs(specs, "ln.", 8);
    se_block_specs(specs, "se.", 8, 4);
    auto s = make_store(specs, 15);
    SplitMix64 rng(16);
    Tensor x = random_tensor(rng, {4, 8}, -1e3, 1e3);
    for (const Tensor& y : {mhsa(x, cfg, s, "a."), mlp(x, s, "m."), layer_norm(x, s, "ln."),
                            se_block(ops::select(x, 0), s, "se.")})
      for (double v : y.data()) CHECK(std::isfinite(v));
  }
}

TEST_SUITE("parameters") {
  TEST_CASE("init is deterministic per seed") {
    const auto specs = model_param_specs(make_preset("test"));
    auto a = make_store(specs, 42), b = make_store(specs, 42), c = make_store(specs, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params().size(); ++i) {
      CHECK(fmdd::test::bitwise_equal(a.params()[i].value.data(), b.params()[i].value.data()));
      any_diff = any_diff || !fmdd::test::bitwise_equal(a.params()[i].value.data(), c.params()[i].value.data());
    }
    CHECK(any_diff);
  }

  TEST_CASE("init rules") {
    auto s = make_store(model_param_specs(make_preset("test")), 1);
    for (const auto& p : s.params()) {
      const auto& name = p.name;
      INFO(name);
      auto v = p.value.data();
      if (name.ends_with("gamma")) {
        for (double x : v) CHECK(x == 1.0);
      } else if (name.ends_with("bias") || name.ends_with("beta") || name.find(".up.") != std::string::npos) {
        for (double x : v) CHECK(x == 0.0);
      } else {
        double bound = 2 * kInitStd;
        if (p.init == InitKind::kConvFanIn) bound = 2 * std::sqrt(2.0 / (p.value.size() / p.value.dim(0)));
        if (p.init == InitKind::kLinearFanIn) bound = 2 * std::sqrt(1.0 / p.value.dim(0));
        for (double x : v) CHECK(std::abs(x) <= bound);
      }
    }
  }

  TEST_CASE("store rejects duplicates and unknown names") {
    ParameterStore s;
    s.add({"a.weight", {2, 2}, InitKind::kNormal});
    CHECK_THROWS(s.add({"a.weight", {2, 2}, InitKind::kNormal}));
    CHECK_THROWS_AS(s.get("missing"), std::out_of_range);
  }

  TEST_CASE("set_trainable by prefix") {
    ModelConfig cfg = make_preset("paper");
    cfg.n_layers = 8;
    // Count-only check on the large preset.
    std::size_t encoder = 0;
    for (const auto& sp : model_param_specs(cfg))
      if (sp.name.starts_with("encoder.")) ++encoder;
    CHECK(encoder == 8 * 16);

    auto s = make_store(model_param_specs(with_fusion(make_preset("test"), FusionMode::kAva)), 2);
    CHECK(s.set_trainable("encoder.", false) == 2 * 16);
    for (const auto& p : s.params()) {
      if (p.name.starts_with("encoder.")) CHECK_FALSE(p.trainable());
      if (p.name.starts_with("ava.")) CHECK(p.trainable());
    }
    CHECK_THROWS(s.set_trainable("encodr.", false));
  }

  TEST_CASE("optimizer never touches frozen parameters") {
    std::vector<ParamSpec> specs;
    linear_specs(specs, "a.", 3, 2);
    linear_specs(specs, "b.", 3, 2);
    auto s = make_store(specs, 3);
    s.set_trainable("a.", false);
    s.set_trainable("b.", true);
    const auto frozen_before = std::vector<double>(s.get("a.weight").data().begin(), s.get("a.weight").data().end());
    SplitMix64 rng(4);
    Tensor x = random_tensor(rng, {2, 3});
    SgdState st;
    for (int step = 0; step < 3; ++step) {
      Tape::active().clear();
      backward(ops::sum(ops::add(linear(x, s, "a."), linear(x, s, "b."))));
      sgd_step(s, st, {0.1, 0.9, 1e-3});
    }
    CHECK(fmdd::test::bitwise_equal(frozen_before, s.get("a.weight").data()));
  }
}
