#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "fmdd/data.hpp"
#include "fmdd/gradcheck.hpp"
#include "fmdd/metrics.hpp"
#include "fmdd/ops.hpp"
#include "fmdd/protocol.hpp"
#include "fmdd/train.hpp"
#include "helpers.hpp"

using namespace fmdd;
using fmdd::test::bitwise_equal;

namespace {

// O(n^2) pair count with ties worth one half.
double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        den += 1;
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return num / den;
}

Dataset small_data(std::size_t n, std::uint64_t seed) {
  SynthSpec spec;
  spec.n_samples = n;
  spec.seed = seed;
  return gen_synthetic(spec);
}

ParameterStore single_param(double value) {
  ParameterStore s;
  s.add({"p", {1}, InitKind::kZeros});
  s.param("p").value.mutable_data()[0] = value;
  s.param("p").set_trainable(true);
  return s;
}

void set_grad(ParameterStore& s, double g) {
  Tape::active().clear();
  backward(ops::scale(ops::sum(s.get("p")), g));
}

}  // namespace

TEST_SUITE("sgd") {
  TEST_CASE("worked update") {
    auto s = single_param(1.0);
    set_grad(s, 0.5);
    SgdState st;
    sgd_step(s, st, {0.1, 0.9, 0.0});
    CHECK(st.velocity.at("p")[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.get("p")[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK_FALSE(s.get("p").has_grad());
    set_grad(s, 0.5);
    sgd_step(s, st, {0.1, 0.9, 0.0});
    CHECK(st.velocity.at("p")[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(s.get("p")[0] == doctest::Approx(0.855).epsilon(1e-15));
  }

  TEST_CASE("zero learning rate leaves parameters unchanged") {
    auto s = single_param(0.7);
    set_grad(s, 3.0);
    SgdState st;
    sgd_step(s, st, {0.0, 0.9, 5e-5});
    CHECK(s.get("p")[0] == 0.7);
  }

  TEST_CASE("weight decay alone shrinks the norm") {
    auto s = single_param(-2.0);
    set_grad(s, 0.0);
    SgdState st;
    sgd_step(s, st, {0.1, 0.9, 0.01});
    CHECK(std::abs(s.get("p")[0]) < 2.0);
  }

  TEST_CASE("frozen parameter with a gradient is not updated") {
    auto s = single_param(1.0);
    set_grad(s, 1.0);
    s.param("p").set_trainable(false);
    SgdState st;
    sgd_step(s, st, {0.1, 0.9, 0.1});
    CHECK(s.get("p")[0] == 1.0);
  }

  TEST_CASE("missing gradient is an error") {
    auto s = single_param(1.0);
    SgdState st;
    CHECK_THROWS_AS(sgd_step(s, st, {0.1, 0.9, 0.0}), std::logic_error);
  }
}

TEST_SUITE("schedule") {
  TEST_CASE("step lr with the default config") {
    const TrainConfig cfg;
    for (std::size_t e = 0; e < 20; ++e) CHECK(step_lr(e, cfg) == doctest::Approx(1e-4).epsilon(1e-12));
    for (std::size_t e = 20; e < 25; ++e) CHECK(step_lr(e, cfg) == doctest::Approx(1e-5).epsilon(1e-12));
    CHECK(step_lr(40, cfg) == doctest::Approx(1e-6).epsilon(1e-12));
  }

  TEST_CASE("train config defaults and validation") {
    const TrainConfig cfg;
    CHECK(cfg.batch_size == 8);
    CHECK(cfg.lr == 1e-4);
    CHECK(cfg.weight_decay == 5e-5);
    CHECK(cfg.momentum == 0.9);
    CHECK(cfg.step_size == 20);
    CHECK(cfg.gamma == 0.1);
    CHECK(cfg.epochs == 25);
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  }
}

TEST_SUITE("cross entropy") {
  TEST_CASE("uniform logits give ln 2") {
    for (int label : {0, 1})
      CHECK(cross_entropy(Tensor({1, 2}), {label}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }

  TEST_CASE("confident and correct is near zero") {
    CHECK(cross_entropy(Tensor({1, 2}, std::vector<double>{20, -20}), {0}).item() < 1e-15);
  }

  TEST_CASE("gradient is softmax minus one-hot") {
    Tensor logits({2, 2}, std::vector<double>{0.3, -1.2, 2.0, 0.5});
    logits.set_requires_grad(true);
    const std::vector<int> labels{1, 0};
    Tape::active().clear();
    backward(cross_entropy(logits, labels));
    for (std::size_t b = 0; b < 2; ++b) {
      const double z0 = logits[2 * b], z1 = logits[2 * b + 1];
      const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
      const double expect1 = (p1 - (labels[b] == 1)) / 2;
      CHECK(logits.grad()[2 * b + 1] == doctest::Approx(expect1).epsilon(1e-12));
      CHECK(logits.grad()[2 * b] == doctest::Approx(-expect1).epsilon(1e-12));
    }
    Tape::active().clear();
    auto r = grad_check_inputs([&] { return cross_entropy(logits, labels); }, {logits});
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("perfect separation") {
    const std::vector<double> s{0.9, 0.8, 0.3, 0.2};
    const std::vector<int> y{1, 1, 0, 0};
    auto m = compute_metrics(s, y);
    CHECK(m.acc == 1.0);
    CHECK(m.auc == 1.0);
    CHECK(m.f1 == 1.0);
  }

  TEST_CASE("auc 0.75 example") {
    const std::vector<double> s{0.9, 0.6, 0.4, 0.2};
    const std::vector<int> y{1, 0, 1, 0};
    CHECK(compute_metrics(s, y).auc == 0.75);
  }

  TEST_CASE("f1 0.5 with one tp one fp one fn") {
    const std::vector<double> s{0.9, 0.7, 0.1, 0.2};
    const std::vector<int> y{1, 0, 1, 0};
    auto m = compute_metrics(s, y);
    CHECK(m.f1 == 0.5);
    CHECK(m.acc == 0.5);
  }

  TEST_CASE("threshold is inclusive at one half") {
    const std::vector<double> s{0.5};
    const std::vector<int> y{1};
    CHECK(compute_metrics(s, y).acc == 1.0);
  }

  TEST_CASE("f1 is zero when nothing is predicted positive") {
    const std::vector<double> s{0.1, 0.2};
    const std::vector<int> y{1, 0};
    CHECK(compute_metrics(s, y).f1 == 0.0);
  }

  TEST_CASE("agrees with the pair-count oracle exactly") {
    SplitMix64 rng(99);
    for (int inst = 0; inst < 100; ++inst) {
      const std::size_t n = 2 + rng.below(49);
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = std::round(rng.uniform() * 20) / 20;  // coarse grid forces ties
        y[i] = rng.uniform() < 0.5;
      }
      y[0] = 0;
      y[1] = 1;
      CHECK(compute_metrics(s, y).auc == brute_auc(s, y));
    }
  }

  TEST_CASE("auc is invariant under increasing transforms") {
    SplitMix64 rng(5);
    std::vector<double> s(30), t(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = rng.uniform();
      t[i] = std::exp(3 * s[i]) - 7;
      y[i] = i % 3 == 0;
    }
    CHECK(compute_metrics(s, y).auc == compute_metrics(t, y).auc);
  }

  TEST_CASE("single class flags auc") {
    const std::vector<double> s{0.2, 0.8};
    const std::vector<int> y{1, 1};
    auto m = compute_metrics(s, y);
    CHECK_FALSE(m.auc_defined);
    CHECK(std::isnan(m.auc));
    CHECK(m.acc == 0.5);
  }

  TEST_CASE("empty and mismatched inputs are errors") {
    CHECK_THROWS_AS(compute_metrics({}, {}), std::invalid_argument);
    const std::vector<double> s{0.2};
    const std::vector<int> y{1, 0};
    CHECK_THROWS_AS(compute_metrics(s, y), std::invalid_argument);
  }
}

TEST_SUITE("kfold") {
  TEST_CASE("n=10 k=5") {
    auto folds = kfold_split(10, 5, 1);
    REQUIRE(folds.size() == 5);
    for (const auto& f : folds) {
      CHECK(f.test.size() == 2);
      CHECK(f.train.size() == 8);
    }
  }

  TEST_CASE("partition and balance properties") {
    for (std::size_t n : {7, 13, 50})
      for (std::size_t k : {2, 3, 5}) {
        auto folds = kfold_split(n, k, n * 31 + k);
        std::set<std::size_t> seen;
        std::size_t lo = n, hi = 0;
        for (const auto& f : folds) {
          lo = std::min(lo, f.test.size());
          hi = std::max(hi, f.test.size());
          for (auto i : f.test) CHECK(seen.insert(i).second);
          std::set<std::size_t> train(f.train.begin(), f.train.end());
          CHECK(train.size() + f.test.size() == n);
          for (auto i : f.test) CHECK(train.count(i) == 0);
        }
        CHECK(seen.size() == n);
        CHECK(hi - lo <= 1);
      }
  }

  TEST_CASE("deterministic per seed") {
    auto a = kfold_split(20, 4, 3), b = kfold_split(20, 4, 3), c = kfold_split(20, 4, 4);
    bool differ = false;
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(a[i].test == b[i].test);
      differ = differ || a[i].test != c[i].test;
    }
    CHECK(differ);
  }

  TEST_CASE("invalid k") {
    CHECK_THROWS_AS(kfold_split(3, 4, 0), std::invalid_argument);
    CHECK_THROWS_AS(kfold_split(3, 1, 0), std::invalid_argument);
  }
}

TEST_SUITE("protocol") {
  TrainConfig quick_train() {
    TrainConfig tc;
    tc.epochs = 2;
    tc.lr = 1e-3;
    tc.seed = 4;
    return tc;
  }

  TEST_CASE("reproducible end to end") {
    const Dataset d = small_data(12, 1);
    ProtocolSpec spec;
    spec.k = 2;
    spec.seed = 7;
    const auto cfg = with_fusion(make_preset("test"), FusionMode::kAva);
    auto a = run_protocol(spec, d, nullptr, cfg, quick_train());
    auto b = run_protocol(spec, d, nullptr, cfg, quick_train());
    CHECK(report_json({a}) == report_json({b}));
    REQUIRE(a.scenarios.size() == 3);
    for (const auto& sc : a.scenarios) {
      CHECK(sc.folds.size() == 2);
      for (double v : {sc.mean.acc, sc.mean.f1}) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }

  TEST_CASE("audit hook sees zero-blocked inputs for every test sample") {
    const Dataset d = small_data(10, 2);
    ProtocolSpec spec;
    spec.k = 2;
    std::size_t seen_v_blocked = 0, total = 0;
    AuditHook audit = [&](std::size_t, const VisualClip& clip, const AudioSpectrogram& sp, const ModalityMask& m) {
      ++total;
      const bool clip_zero = std::ranges::all_of(clip.frames.data(), [](double v) { return v == 0.0; });
      const bool spec_zero = std::ranges::all_of(sp.image.data(), [](double v) { return v == 0.0; });
      CHECK(clip_zero == !m.vision);
      CHECK(spec_zero == !m.audio);
      seen_v_blocked += !m.vision;
    };
    run_protocol(spec, d, nullptr, with_fusion(make_preset("test"), FusionMode::kConcat), quick_train(), audit);
    CHECK(total == 3 * 10);
    CHECK(seen_v_blocked == 10);
  }

  TEST_CASE("cross protocol trains on one set and tests on the other") {
    const Dataset a = small_data(8, 3), b = small_data(6, 4);
    ProtocolSpec spec;
    spec.kind = ProtocolKind::kCross;
    spec.test_masks = {ModalityMask::both()};
    std::size_t total = 0;
    auto r = run_protocol(spec, a, &b, with_fusion(make_preset("test"), FusionMode::kAva), quick_train(),
                          [&](std::size_t, const VisualClip&, const AudioSpectrogram&, const ModalityMask&) { ++total; });
    CHECK(total == 6);
    CHECK(r.scenarios.size() == 1);
    CHECK_THROWS_AS(run_protocol(spec, a, nullptr, make_preset("test"), quick_train()), std::invalid_argument);
  }

  TEST_CASE("constant model scores the majority fraction in every scenario") {
    ModelConfig cfg = with_fusion(make_preset("test"), FusionMode::kAva);
    Model m(cfg, 1);
    for (auto& v : m.params().param("head.weight").value.mutable_data()) v = 0.0;
    auto bias = m.params().param("head.bias").value.mutable_data();
    bias[0] = 0.0;
    bias[1] = 1.0;
    const Dataset d = small_data(40, 5);
    std::vector<std::size_t> idx(d.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto labels = d.labels();
    const double pos = static_cast<double>(std::ranges::count(labels, 1)) / labels.size();
    for (auto mask : {ModalityMask::both(), ModalityMask::vision_only(), ModalityMask::audio_only()})
      CHECK(compute_metrics(predict_scores(m, d, idx, mask), labels).acc == doctest::Approx(pos).epsilon(1e-15));
  }

  TEST_CASE("training never touches the frozen encoder") {
    for (FusionMode mode : {FusionMode::kAva, FusionMode::kCmfl, FusionMode::kPrompt}) {
      Model m(with_fusion(make_preset("test"), mode), 3);
      const Model ref(with_fusion(make_preset("test"), mode), 3);
      const Dataset d = small_data(9, 6);
      std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7, 8};
      TrainConfig tc = quick_train();
      tc.epochs = 1;
      train_model(m, d, idx, ModalityMask::both(), tc);
      bool changed = false;
      for (std::size_t i = 0; i < m.params().params().size(); ++i) {
        const auto& p = m.params().params()[i];
        const bool same = bitwise_equal(p.value.data(), ref.params().params()[i].value.data());
        if (p.name.starts_with(kEncoderPrefix)) CHECK(same);
        if (p.name.starts_with("head.") && p.name.ends_with("weight")) changed = changed || !same;
      }
      CHECK(changed);
    }
  }

  TEST_CASE("report table and json") {
    EvalReport r;
    r.method = "AVA";
    r.train_mask = ModalityMask::both();
    ScenarioResult sc;
    sc.mask = ModalityMask::audio_only();
    sc.mean = {0.5, 0.75, 0.25, true};
    sc.folds = {sc.mean};
    r.scenarios = {sc};
    const std::string t = format_report_table({r});
    CHECK(t.find("Method") != std::string::npos);
    CHECK(t.find("50.00") != std::string::npos);
    CHECK(t.find("75.00") != std::string::npos);
    CHECK(t.find("V&A") != std::string::npos);
    const std::string j = report_json({r});
    CHECK(j.find("\"AVA\"") != std::string::npos);
    CHECK(scenario_label(ModalityMask::vision_only()) == "V");
  }
}
