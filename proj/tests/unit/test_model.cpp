#include <doctest.h>

#include "fmdd/data.hpp"
#include "fmdd/gradsuite.hpp"
#include "fmdd/model.hpp"
#include "fmdd/ops.hpp"
#include "fmdd/train.hpp"
#include "helpers.hpp"

using namespace fmdd;
using fmdd::test::bitwise_equal;
using fmdd::test::random_tensor;

namespace {

const FusionMode kAllModes[] = {FusionMode::kAva, FusionMode::kConcat, FusionMode::kSeConcat,
                                FusionMode::kCmfl, FusionMode::kPrompt};

struct Inputs {
  VisualClip clip;
  AudioSpectrogram spec;
};

Inputs random_inputs(SplitMix64& rng, const ModelConfig& cfg) {
  const auto& f = cfg.frame_dims;
  const auto& s = cfg.spec_dims;
  return {{random_tensor(rng, {cfg.time_steps, f[0], f[1], f[2]})}, {random_tensor(rng, {s[0], s[1], s[2]})}};
}

ModelConfig test_cfg(FusionMode mode = FusionMode::kAva) { return with_fusion(make_preset("test"), mode); }

// Closed-form per-layer parameter counts.
std::size_t conv2d_count(std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; }
std::size_t conv1d_count(std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k + cout; }
std::size_t linear_count(std::size_t din, std::size_t dout) { return din * dout + dout; }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("test preset gives two logits in every mode") {
    SplitMix64 rng(1);
    for (FusionMode mode : kAllModes) {
      Model m(test_cfg(mode), 2);
      auto in = random_inputs(rng, m.config());
      auto out = m.forward(in.clip, in.spec);
      CHECK(out.logits.shape() == Shape{2});
      CHECK(out.aux_visual.defined() == (mode == FusionMode::kCmfl));
    }
  }

  TEST_CASE("masked modality input does not affect the logits") {
    SplitMix64 rng(3);
    for (FusionMode mode : kAllModes) {
      Model m(test_cfg(mode), 4);
      auto a = random_inputs(rng, m.config()), b = random_inputs(rng, m.config());
      auto no_v1 = m.forward(a.clip, a.spec, ModalityMask::audio_only());
      auto no_v2 = m.forward(b.clip, a.spec, ModalityMask::audio_only());
      CHECK(bitwise_equal(no_v1.logits.data(), no_v2.logits.data()));
      auto no_a1 = m.forward(a.clip, a.spec, ModalityMask::vision_only());
      auto no_a2 = m.forward(a.clip, b.spec, ModalityMask::vision_only());
      CHECK(bitwise_equal(no_a1.logits.data(), no_a2.logits.data()));
      auto both = m.forward(a.clip, b.spec);
      CHECK_FALSE(bitwise_equal(both.logits.data(), no_a1.logits.data()));
    }
  }

  TEST_CASE("forward rejects bad dims and a fully blocked input") {
    Model m(test_cfg(), 1);
    SplitMix64 rng(2);
    auto in = random_inputs(rng, m.config());
    CHECK_THROWS_AS(m.forward(in.clip, in.spec, ModalityMask{false, false}), std::invalid_argument);
    CHECK_THROWS_AS(m.forward({random_tensor(rng, {3, 1, 16, 16})}, in.spec), ShapeError);
  }

  TEST_CASE("forward is deterministic") {
    SplitMix64 rng(5);
    for (FusionMode mode : kAllModes) {
      Model a(test_cfg(mode), 9), b(test_cfg(mode), 9);
      auto in = random_inputs(rng, a.config());
      CHECK(bitwise_equal(a.forward(in.clip, in.spec).logits.data(), b.forward(in.clip, in.spec).logits.data()));
      CHECK(bitwise_equal(a.forward(in.clip, in.spec).logits.data(), a.forward(in.clip, in.spec).logits.data()));
    }
  }
}

TEST_SUITE("apply_mask") {
  TEST_CASE("zero-blocks only the absent modality") {
    SplitMix64 rng(1);
    auto in = random_inputs(rng, test_cfg());
    auto [c, s] = apply_mask(in.clip, in.spec, ModalityMask::audio_only());
    for (double v : c.frames.data()) CHECK(v == 0.0);
    CHECK(c.frames.shape() == in.clip.frames.shape());
    CHECK(bitwise_equal(s.image.data(), in.spec.image.data()));
  }

  TEST_CASE("identity when both are present") {
    SplitMix64 rng(2);
    auto in = random_inputs(rng, test_cfg());
    auto [c, s] = apply_mask(in.clip, in.spec, ModalityMask::both());
    CHECK(bitwise_equal(c.frames.data(), in.clip.frames.data()));
    CHECK(bitwise_equal(s.image.data(), in.spec.image.data()));
  }

  TEST_CASE("idempotent") {
    SplitMix64 rng(3);
    auto in = random_inputs(rng, test_cfg());
    for (auto mask : {ModalityMask::vision_only(), ModalityMask::audio_only(), ModalityMask::both()}) {
      auto [c1, s1] = apply_mask(in.clip, in.spec, mask);
      auto [c2, s2] = apply_mask(c1, s1, mask);
      CHECK(bitwise_equal(c1.frames.data(), c2.frames.data()));
      CHECK(bitwise_equal(s1.image.data(), s2.image.data()));
    }
  }

  TEST_CASE("both masked is an error") {
    SplitMix64 rng(4);
    auto in = random_inputs(rng, test_cfg());
    CHECK_THROWS_AS(apply_mask(in.clip, in.spec, ModalityMask{false, false}), std::invalid_argument);
  }
}

TEST_SUITE("encoder block") {
  TEST_CASE("empty layer set equals the plain block") {
    ModelConfig with = test_cfg();
    with.ava.layer_set = {1};
    Model adapted(with, 3);
    for (auto& p : adapted.params().params())
      if (p.name.starts_with("ava."))
        for (auto& v : p.value.mutable_data()) v = 0.3;
    Model plain(test_cfg(FusionMode::kConcat), 3);
    SplitMix64 rng(4);
    TokenSequence seq{random_tensor(rng, {9, 32}), TokenLayout{4, 0}};
    // Layer 0 carries no adapter; encoder weights share init streams.
    CHECK(bitwise_equal(adapted.encoder_block(seq, 0).data(), plain.encoder_block(seq, 0).data()));
    CHECK_FALSE(bitwise_equal(adapted.encoder_block(seq, 1).data(), plain.encoder_block(seq, 1).data()));
  }

  TEST_CASE("zero-init adapters leave the block unchanged, every placement") {
    SplitMix64 rng(5);
    TokenSequence seq{random_tensor(rng, {9, 32}), TokenLayout{4, 0}};
    for (AvaPlacement pl : {AvaPlacement{true, false}, AvaPlacement{false, true}, AvaPlacement{true, true}})
      for (FfnNormOrder order : {FfnNormOrder::kAsPaper, FfnNormOrder::kPreNorm}) {
        ModelConfig a = test_cfg(), b = test_cfg(FusionMode::kConcat);
        a.ava.placement = pl;
        a.ffn_norm = b.ffn_norm = order;
        Model ma(a, 6), mb(b, 6);
        for (std::size_t j = 0; j < 2; ++j) {
          auto ya = ma.encoder_block(seq, j);
          CHECK(ya.shape() == Shape{9, 32});
          CHECK(bitwise_equal(ya.data(), mb.encoder_block(seq, j).data()));
        }
      }
  }

  TEST_CASE("zero-init AVA model matches the adapter-free model bitwise") {
    ModelConfig plain = test_cfg();
    plain.ava.layer_set.clear();
    Model with(test_cfg(), 11), without(plain, 11);
    SplitMix64 rng(12);
    for (int i = 0; i < 10; ++i) {
      auto in = random_inputs(rng, with.config());
      CHECK(bitwise_equal(with.forward(in.clip, in.spec).logits.data(),
                          without.forward(in.clip, in.spec).logits.data()));
    }
  }

  TEST_CASE("the two ffn orders differ") {
    ModelConfig a = test_cfg(), b = test_cfg();
    b.ffn_norm = FfnNormOrder::kPreNorm;
    Model ma(a, 7), mb(b, 7);
    SplitMix64 rng(8);
    TokenSequence seq{random_tensor(rng, {9, 32}), TokenLayout{4, 0}};
    CHECK_FALSE(bitwise_equal(ma.encoder_block(seq, 0).data(), mb.encoder_block(seq, 0).data()));
  }
}

TEST_SUITE("parameter counts") {
  TEST_CASE("test preset totals match closed-form sums") {
    const std::size_t d = 32, db = 8, k = 5;
    std::size_t extractor = 0, cin = 1;
    for (std::size_t c : {4, 8, 16, 16}) {
      extractor += conv2d_count(cin, c, 3);
      cin = c;
    }
    const std::size_t backbone = 2 * extractor + conv1d_count(16, d, 3) + (16 * 16 * 3 + 16) +
                                 conv1d_count(16, d, 3) + d + 9 * d;
    const std::size_t block = 4 * d + 4 * linear_count(d, d) + linear_count(d, 4 * d) + linear_count(4 * d, d);
    const std::size_t encoder = 2 * block;
    const std::size_t ava = linear_count(d, db) + conv1d_count(2 * db, 2 * db, k) + linear_count(db, d);

    auto counts = [](FusionMode mode) { return count_parameters(Model(test_cfg(mode), 0).params()); };
    const std::size_t head = linear_count(d, 2);

    auto c = counts(FusionMode::kAva);
    CHECK(c.total == backbone + encoder + 4 * ava + head);
    CHECK(c.frozen == encoder);
    CHECK(c.trainable == backbone + 4 * ava + head);

    CHECK(counts(FusionMode::kConcat).total == backbone + encoder + linear_count(2 * d, 2));
    const std::size_t se = linear_count(d, d / 4) + linear_count(d / 4, d);
    CHECK(counts(FusionMode::kSeConcat).total == backbone + encoder + 2 * se + linear_count(2 * d, 2));
    CHECK(counts(FusionMode::kCmfl).total == backbone + encoder + 3 * head);
    CHECK(counts(FusionMode::kPrompt).total == backbone + encoder + 5 * d + head);
  }

  TEST_CASE("freezing the encoder moves exactly its total") {
    Model m(test_cfg(), 0);
    const auto frozen = count_parameters(m.params());
    m.params().set_trainable(kEncoderPrefix, true);
    const auto open = count_parameters(m.params());
    CHECK(open.trainable - frozen.trainable == frozen.frozen);
    CHECK(open.frozen == 0);
    CHECK(open.total == frozen.total);
  }

  TEST_CASE("adapters are trainable after construction") {
    Model m(test_cfg(), 0);
    std::size_t n = 0;
    for (const auto& p : m.params().params())
      if (p.name.starts_with(kAvaPrefix)) {
        CHECK(p.trainable());
        ++n;
      }
    CHECK(n == 2 * 2 * 6);
  }
}

TEST_SUITE("model training") {
  TEST_CASE("overfit one batch in every mode") {
    for (FusionMode mode : kAllModes) {
      INFO(to_string(mode));
      Model m(test_cfg(mode), 21);
      SynthSpec spec = SynthSpec::for_config(m.config());
      spec.n_samples = 4;
      spec.seed = 22;
      const Dataset d = gen_synthetic(spec);
      const std::vector<std::size_t> batch{0, 1, 2, 3};

      std::vector<std::vector<double>> frozen;
      for (const auto& p : m.params().params())
        if (!p.trainable()) frozen.emplace_back(p.value.data().begin(), p.value.data().end());

      SgdState st;
      double first = 0, last = 0;
      for (int step = 0; step <= 50; ++step) {
        Tape::active().clear();
        Tensor loss = batch_loss(m, d, batch, ModalityMask::both());
        if (step == 0) first = loss.item();
        last = loss.item();
        if (step == 50) break;
        backward(loss);
        sgd_step(m.params(), st, {1e-2, 0.9, 0.0});
      }
      Tape::active().clear();
      CHECK(last < first);

      std::size_t i = 0;
      for (const auto& p : m.params().params())
        if (!p.trainable()) CHECK(bitwise_equal(frozen[i++], p.value.data()));
    }
  }

  TEST_CASE("full-model gradcheck in every mode") {
    for (const auto& e : model_grad_suite(make_preset("test"), 5, 3)) {
      INFO(e.name);
      CHECK(e.report.max_rel_error < kModelGradTol);
      CHECK(e.report.coordinates_checked > 0);
    }
  }
}
