// SPDX-License-Identifier: Apache-2.0
#include "fmdd/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fmdd/checkpoint.hpp"
#include "fmdd/data.hpp"
#include "fmdd/gradsuite.hpp"
#include "fmdd/metrics.hpp"
#include "fmdd/model.hpp"
#include "fmdd/protocol.hpp"
#include "fmdd/train.hpp"

namespace fmdd {

namespace {

struct ModelFlags {
  std::string preset = "test";
  std::string fusion = "ava";
  std::size_t kernel = 5;
  std::string placement = "mhsa+ffn";
  int layers = -1;  // adapters on the first `layers` blocks; -1 = all
  std::string ffn_norm = "as-paper";
};

void add_model_flags(CLI::App* app, ModelFlags& f, bool with_fusion_flag = true) {
  app->add_option("--preset", f.preset, "Model preset")->check(CLI::IsMember({"test", "paper"}));
  if (with_fusion_flag)
    app->add_option("--fusion", f.fusion, "Fusion method")
        ->check(CLI::IsMember({"ava", "concat", "se-concat", "cmfl", "prompt"}));
  app->add_option("--kernel", f.kernel, "Adapter temporal kernel (0 disables the conv)");
  app->add_option("--placement", f.placement, "Adapter placement")
      ->check(CLI::IsMember({"mhsa+ffn", "mhsa", "ffn"}));
  app->add_option("--layers", f.layers, "Adapters on the first L encoder blocks (default: all)");
  app->add_option("--ffn-norm", f.ffn_norm, "Feed-forward branch order")
      ->check(CLI::IsMember({"as-paper", "pre-norm"}));
}

AvaPlacement parse_placement(const std::string& s) {
  if (s == "mhsa+ffn") return {true, true};
  if (s == "mhsa") return {true, false};
  if (s == "ffn") return {false, true};
  throw std::invalid_argument("unknown placement '" + s + "'");
}

ModelConfig build_model_config(const ModelFlags& f, const std::string& fusion) {
  ModelConfig cfg = with_fusion(make_preset(f.preset), parse_fusion_mode(fusion));
  cfg.ffn_norm = f.ffn_norm == "pre-norm" ? FfnNormOrder::kPreNorm : FfnNormOrder::kAsPaper;
  if (cfg.fusion == FusionMode::kAva) {
    cfg.ava.kernel_k = f.kernel;
    cfg.ava.placement = parse_placement(f.placement);
    if (f.layers >= 0) {
      if (static_cast<std::size_t>(f.layers) > cfg.n_layers)
        throw std::invalid_argument("--layers exceeds the encoder depth " + std::to_string(cfg.n_layers));
      cfg.ava.layer_set.clear();
      for (int j = 0; j < f.layers; ++j) cfg.ava.layer_set.push_back(static_cast<std::size_t>(j));
    }
  }
  cfg.validate();
  return cfg;
}

void add_train_flags(CLI::App* app, TrainConfig& tc) {
  app->add_option("--epochs", tc.epochs, "Training epochs");
  app->add_option("--batch-size", tc.batch_size, "Mini-batch size");
  app->add_option("--lr", tc.lr, "Base learning rate");
  app->add_option("--weight-decay", tc.weight_decay, "Weight decay");
  app->add_option("--momentum", tc.momentum, "SGD momentum");
  app->add_option("--step-size", tc.step_size, "StepLR step size (epochs)");
  app->add_option("--gamma", tc.gamma, "StepLR decay factor");
}

std::vector<std::size_t> all_indices(const Dataset& d) {
  std::vector<std::size_t> v(d.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

std::string fmt(double v, bool defined = true) {
  if (!defined || std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

struct AblationRow {
  std::string axis;
  std::string setting;
  Metrics metrics;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Flexible-modal audio-visual deception detection"};
  app.name("fmdd");
  app.require_subcommand(1);

  // gen-data
  SynthSpec synth;
  std::string gen_mode, gen_preset = "test", gen_out;
  bool gen_shift = false;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic planted-signal dataset");
  gen->add_option("--mode", gen_mode, "Signal construction")
      ->required()
      ->check(CLI::IsMember({"xor", "redundant", "complementary"}));
  gen->add_option("--n", synth.n_samples, "Number of samples")->required();
  gen->add_option("--preset", gen_preset, "Dims taken from this preset")->check(CLI::IsMember({"test", "paper"}));
  gen->add_option("--seed", synth.seed, "Generator seed");
  gen->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma");
  gen->add_option("--amplitude", synth.amplitude, "Planted pattern amplitude");
  gen->add_flag("--domain-shift", gen_shift, "Apply brightness offset and noise rescale");
  gen->add_option("--out", gen_out, "Output dataset file")->required();

  // train
  ModelFlags train_model_flags;
  TrainConfig train_cfg;
  std::string train_data, train_out, train_scenario = "va";
  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--data", train_data, "Dataset file")->required();
  add_model_flags(train, train_model_flags);
  add_train_flags(train, train_cfg);
  train->add_option("--seed", train_cfg.seed, "Init and shuffle seed");
  train->add_option("--train-scenario", train_scenario, "Modalities seen in training")
      ->check(CLI::IsMember({"va", "v", "a"}));
  train->add_option("--out", train_out, "Output checkpoint")->required();

  // eval
  std::string eval_ckpt, eval_data, eval_scenario = "va";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset file")->required();
  eval->add_option("--scenario", eval_scenario, "Test modalities")->check(CLI::IsMember({"va", "v", "a"}));

  // protocol
  ModelFlags proto_model_flags;
  TrainConfig proto_train;
  ProtocolSpec proto;
  std::string proto_kind = "intra", proto_data, proto_data2, proto_scenario = "va", proto_json;
  std::vector<std::string> proto_fusions{"ava"};
  auto* protocol = app.add_subcommand("protocol", "Run an intra-dataset k-fold or cross-dataset protocol");
  protocol->add_option("--kind", proto_kind, "intra or cross")->check(CLI::IsMember({"intra", "cross"}));
  protocol->add_option("--k", proto.k, "Fold count (intra)");
  protocol->add_option("--data", proto_data, "Dataset file (training set for cross)")->required();
  protocol->add_option("--data2", proto_data2, "Test dataset file (cross)");
  add_model_flags(protocol, proto_model_flags, false);
  protocol->add_option("--fusion", proto_fusions, "Fusion methods, comma separated")
      ->delimiter(',')
      ->check(CLI::IsMember({"ava", "concat", "se-concat", "cmfl", "prompt"}));
  add_train_flags(protocol, proto_train);
  protocol->add_option("--seed", proto.seed, "Fold, init and shuffle seed");
  protocol->add_option("--train-scenario", proto_scenario, "Modalities seen in training")
      ->check(CLI::IsMember({"va", "v", "a"}));
  protocol->add_option("--json", proto_json, "Also write the report as JSON");

  // ablate
  ModelFlags abl_model_flags;
  TrainConfig abl_train;
  std::string abl_axis, abl_data, abl_mode = "xor", abl_json;
  std::size_t abl_n = 128, abl_k = 2;
  std::uint64_t abl_seed = 0;
  auto* ablate = app.add_subcommand("ablate", "Sweep adapter depth, kernel size or placement");
  ablate->add_option("--axis", abl_axis, "Swept axis")->required()->check(CLI::IsMember({"layers", "kernel", "position"}));
  ablate->add_option("--data", abl_data, "Dataset file (default: generated)");
  ablate->add_option("--mode", abl_mode, "Signal mode of generated data")
      ->check(CLI::IsMember({"xor", "redundant", "complementary"}));
  ablate->add_option("--n", abl_n, "Size of generated data");
  ablate->add_option("--k", abl_k, "Fold count");
  ablate->add_option("--preset", abl_model_flags.preset, "Model preset")->check(CLI::IsMember({"test", "paper"}));
  add_train_flags(ablate, abl_train);
  ablate->add_option("--seed", abl_seed, "Seed");
  ablate->add_option("--json", abl_json, "Also write the rows as JSON");

  // gradcheck
  std::string gc_preset = "test";
  std::uint64_t gc_seed = 0;
  std::size_t gc_coords = 4;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--preset", gc_preset, "Model preset")->check(CLI::IsMember({"test"}));
  gradcheck->add_option("--seed", gc_seed, "Seed");
  gradcheck->add_option("--coords", gc_coords, "Sampled coordinates per parameter (0 = all)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const SynthSpec dims = SynthSpec::for_config(make_preset(gen_preset));
      synth.time_steps = dims.time_steps;
      synth.frame_dims = dims.frame_dims;
      synth.spec_dims = dims.spec_dims;
      synth.mode = parse_signal_mode(gen_mode);
      if (gen_shift) synth.domain_shift = DomainShift{};
      const Dataset d = gen_synthetic(synth);
      write_dataset(gen_out, d);
      out << "wrote " << d.size() << " " << gen_mode << " samples to " << gen_out << "\n";
      return kExitOk;
    }

    if (train->parsed()) {
      const Dataset data = read_dataset(train_data);
      const ModelConfig cfg = build_model_config(train_model_flags, train_model_flags.fusion);
      Model model(cfg, train_cfg.seed);
      const ParamCounts pc = count_parameters(model.params());
      out << "model " << to_string(cfg.fusion) << " preset " << cfg.preset << ": " << pc.trainable
          << " trainable / " << pc.total << " parameters\n";
      const TrainHistory h =
          train_model(model, data, all_indices(data), ModalityMask::parse(train_scenario), train_cfg);
      for (std::size_t e = 0; e < h.epoch_loss.size(); ++e)
        out << "epoch " << e + 1 << " lr " << step_lr(e, train_cfg) << " loss " << fmt(h.epoch_loss[e]) << "\n";
      save_checkpoint(model, train_out);
      out << "saved " << train_out << "\n";
      return kExitOk;
    }

    if (eval->parsed()) {
      const Model model = load_checkpoint(eval_ckpt);
      const Dataset data = read_dataset(eval_data);
      data.check_compatible(model.config());
      const ModalityMask mask = ModalityMask::parse(eval_scenario);
      const auto scores = predict_scores(model, data, all_indices(data), mask);
      const Metrics m = compute_metrics(scores, data.labels());
      out << "scenario " << scenario_label(mask) << "  ACC " << fmt(m.acc) << "  AUC " << fmt(m.auc, m.auc_defined)
          << "  F1 " << fmt(m.f1) << "\n";
      return kExitOk;
    }

    if (protocol->parsed()) {
      proto.kind = parse_protocol_kind(proto_kind);
      proto.train_mask = ModalityMask::parse(proto_scenario);
      proto_train.seed = proto.seed;
      const Dataset primary = read_dataset(proto_data);
      Dataset secondary;
      if (proto.kind == ProtocolKind::kCross) {
        if (proto_data2.empty()) throw CLI::RequiredError("--data2 (required for --kind cross)");
        secondary = read_dataset(proto_data2);
      }
      std::vector<EvalReport> reports;
      for (const auto& fusion : proto_fusions) {
        const ModelConfig cfg = build_model_config(proto_model_flags, fusion);
        reports.push_back(run_protocol(proto, primary, proto.kind == ProtocolKind::kCross ? &secondary : nullptr,
                                       cfg, proto_train));
      }
      out << format_report_table(reports);
      if (!proto_json.empty()) write_text(proto_json, report_json(reports) + "\n");
      return kExitOk;
    }

    if (ablate->parsed()) {
      abl_train.seed = abl_seed;
      Dataset data;
      if (!abl_data.empty()) {
        data = read_dataset(abl_data);
      } else {
        SynthSpec s = SynthSpec::for_config(make_preset(abl_model_flags.preset));
        s.n_samples = abl_n;
        s.mode = parse_signal_mode(abl_mode);
        s.seed = abl_seed;
        data = gen_synthetic(s);
      }
      ProtocolSpec spec;
      spec.k = abl_k;
      spec.seed = abl_seed;
      spec.test_masks = {ModalityMask::both()};

      std::vector<std::pair<std::string, ModelFlags>> settings;
      const std::size_t depth = make_preset(abl_model_flags.preset).n_layers;
      if (abl_axis == "layers") {
        for (std::size_t s = 0; s <= depth; ++s) {
          ModelFlags f = abl_model_flags;
          f.layers = static_cast<int>(s);
          settings.emplace_back(std::to_string(s), f);
        }
      } else if (abl_axis == "kernel") {
        for (std::size_t k : {0, 1, 3, 5, 7, 9}) {
          ModelFlags f = abl_model_flags;
          f.kernel = k;
          settings.emplace_back(std::to_string(k), f);
        }
      } else {
        for (const char* p : {"mhsa", "ffn", "mhsa+ffn"}) {
          ModelFlags f = abl_model_flags;
          f.placement = p;
          settings.emplace_back(p, f);
        }
      }

      std::vector<AblationRow> rows;
      out << "axis      setting     ACC     AUC      F1\n";
      for (const auto& [name, flags] : settings) {
        const ModelConfig cfg = build_model_config(flags, "ava");
        const EvalReport r = run_protocol(spec, data, nullptr, cfg, abl_train);
        const Metrics& m = r.scenarios.front().mean;
        rows.push_back({abl_axis, name, m});
        char line[128];
        std::snprintf(line, sizeof line, "%-9s %-8s %7s %7s %7s\n", abl_axis.c_str(), name.c_str(),
                      fmt(m.acc).c_str(), fmt(m.auc, m.auc_defined).c_str(), fmt(m.f1).c_str());
        out << line << std::flush;
      }
      if (!abl_json.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& row : rows) {
          nlohmann::json jr{{"axis", row.axis}, {"setting", row.setting}, {"acc", row.metrics.acc},
                            {"f1", row.metrics.f1}};
          jr["auc"] = row.metrics.auc_defined ? nlohmann::json(row.metrics.auc) : nlohmann::json(nullptr);
          j.push_back(std::move(jr));
        }
        write_text(abl_json, j.dump(2) + "\n");
      }
      return kExitOk;
    }

    if (gradcheck->parsed()) {
      bool ok = true;
      auto print = [&](const GradSuiteEntry& e) {
        char line[160];
        std::snprintf(line, sizeof line, "%-20s max rel err %.3e  tol %.0e  coords %5zu  %s\n", e.name.c_str(),
                      e.report.max_rel_error, e.tolerance, e.report.coordinates_checked,
                      e.report.passed ? "ok" : "FAIL");
        out << line;
        ok = ok && e.report.passed;
      };
      for (const auto& e : primitive_grad_suite(gc_seed)) print(e);
      for (const auto& e : model_grad_suite(make_preset(gc_preset), gc_seed, gc_coords)) print(e);
      out << (ok ? "all gradients match\n" : "gradient mismatch\n");
      return ok ? kExitOk : kExitRuntime;
    }
  } catch (const CLI::Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace fmdd
