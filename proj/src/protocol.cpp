// SPDX-License-Identifier: Apache-2.0
#include "fmdd/protocol.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace fmdd {

std::string to_string(ProtocolKind kind) { return kind == ProtocolKind::kIntra ? "intra" : "cross"; }

ProtocolKind parse_protocol_kind(const std::string& s) {
  if (s == "intra") return ProtocolKind::kIntra;
  if (s == "cross") return ProtocolKind::kCross;
  throw std::invalid_argument("unknown protocol kind '" + s + "' (expected intra|cross)");
}

void ProtocolSpec::validate() const {
  if (kind == ProtocolKind::kIntra && k < 2) throw std::invalid_argument("protocol: k must be >= 2");
  if (test_masks.empty()) throw std::invalid_argument("protocol: no test scenarios");
  train_mask.validate();
  for (const auto& m : test_masks) m.validate();
}

const ScenarioResult& EvalReport::scenario(const ModalityMask& mask) const {
  for (const auto& s : scenarios)
    if (s.mask == mask) return s;
  throw std::out_of_range("report has no scenario " + mask.name());
}

std::string method_label(FusionMode mode) {
  switch (mode) {
    case FusionMode::kAva: return "AVA";
    case FusionMode::kConcat: return "Concat";
    case FusionMode::kSeConcat: return "SE-Concat";
    case FusionMode::kCmfl: return "CMFL";
    case FusionMode::kPrompt: return "Prompt";
  }
  return "?";
}

std::string scenario_label(const ModalityMask& mask) {
  if (mask.vision && mask.audio) return "V&A";
  return mask.vision ? "V" : "A";
}

namespace {

struct FoldJob {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  const Dataset* test_data = nullptr;
};

std::size_t thread_budget(std::size_t jobs) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("FMDD_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) n = static_cast<std::size_t>(v);
  }
  return std::min(n, jobs);
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Metrics mean_metrics(const std::vector<Metrics>& folds) {
  Metrics m;
  std::size_t auc_count = 0;
  double auc_sum = 0.0;
  for (const auto& f : folds) {
    m.acc += f.acc;
    m.f1 += f.f1;
    if (f.auc_defined) {
      auc_sum += f.auc;
      ++auc_count;
    }
  }
  const double n = static_cast<double>(folds.size());
  m.acc /= n;
  m.f1 /= n;
  m.auc_defined = auc_count > 0;
  m.auc = m.auc_defined ? auc_sum / static_cast<double>(auc_count) : std::numeric_limits<double>::quiet_NaN();
  return m;
}

}  // namespace

EvalReport run_protocol(const ProtocolSpec& spec, const Dataset& primary, const Dataset* secondary,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, const AuditHook& audit) {
  spec.validate();
  train_cfg.validate();
  model_cfg.validate();
  primary.check_compatible(model_cfg);

  std::vector<FoldJob> jobs;
  if (spec.kind == ProtocolKind::kIntra) {
    for (auto& f : kfold_split(primary.size(), spec.k, spec.seed))
      jobs.push_back({std::move(f.train), std::move(f.test), &primary});
  } else {
    if (secondary == nullptr) throw std::invalid_argument("cross protocol needs a second dataset");
    secondary->check_compatible(model_cfg);
    jobs.push_back({iota_indices(primary.size()), iota_indices(secondary->size()), secondary});
  }

  // results[fold][scenario]
  std::vector<std::vector<Metrics>> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::mutex audit_mutex;
  AuditHook locked_audit;
  if (audit)
    locked_audit = [&](std::size_t i, const VisualClip& c, const AudioSpectrogram& s, const ModalityMask& m) {
      std::lock_guard<std::mutex> lock(audit_mutex);
      audit(i, c, s, m);
    };

  auto run_fold = [&](std::size_t f) {
    try {
      const FoldJob& job = jobs[f];
      const std::uint64_t fold_seed = spec.seed * 1000003ULL + f;
      Model model(model_cfg, fold_seed);
      TrainConfig tc = train_cfg;
      tc.seed = train_cfg.seed ^ fold_seed;
      train_model(model, primary, job.train, spec.train_mask, tc);
      std::vector<int> labels;
      for (auto i : job.test) labels.push_back(job.test_data->samples[i].label);
      for (const auto& mask : spec.test_masks) {
        const auto scores = predict_scores(model, *job.test_data, job.test, mask, locked_audit);
        results[f].push_back(compute_metrics(scores, labels));
      }
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };

  const std::size_t n_threads = thread_budget(jobs.size());
  if (n_threads <= 1) {
    for (std::size_t f = 0; f < jobs.size(); ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t f; (f = next.fetch_add(1)) < jobs.size();) run_fold(f);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalReport report;
  report.method = method_label(model_cfg.fusion);
  report.train_mask = spec.train_mask;
  for (std::size_t s = 0; s < spec.test_masks.size(); ++s) {
    ScenarioResult r;
    r.mask = spec.test_masks[s];
    for (const auto& fold : results) r.folds.push_back(fold[s]);
    r.mean = mean_metrics(r.folds);
    report.scenarios.push_back(std::move(r));
  }
  return report;
}

namespace {

std::string percent(double v, bool defined = true) {
  if (!defined || std::isnan(v)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::vector<std::array<std::string, 6>> rows{{"Method", "Train", "Test", "ACC", "AUC", "F1"}};
  for (const auto& r : reports)
    for (const auto& s : r.scenarios)
      rows.push_back({r.method, scenario_label(r.train_mask), scenario_label(s.mask), percent(s.mean.acc),
                      percent(s.mean.auc, s.mean.auc_defined), percent(s.mean.f1)});
  std::array<std::size_t, 6> width{};
  for (const auto& row : rows)
    for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < 6; ++c) {
      if (c > 0) out << "  ";
      if (c < 3)
        out << row[c] << std::string(width[c] - row[c].size(), ' ');
      else
        out << std::string(width[c] - row[c].size(), ' ') << row[c];
    }
    out << '\n';
  }
  return out.str();
}

std::string report_json(const std::vector<EvalReport>& reports) {
  auto metric_json = [](const Metrics& m) {
    nlohmann::json j{{"acc", m.acc}, {"f1", m.f1}};
    j["auc"] = m.auc_defined ? nlohmann::json(m.auc) : nlohmann::json(nullptr);
    return j;
  };
  nlohmann::json root = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json jr{{"method", r.method}, {"train", scenario_label(r.train_mask)}};
    jr["scenarios"] = nlohmann::json::array();
    for (const auto& s : r.scenarios) {
      nlohmann::json js{{"test", scenario_label(s.mask)}, {"mean", metric_json(s.mean)}};
      js["folds"] = nlohmann::json::array();
      for (const auto& f : s.folds) js["folds"].push_back(metric_json(f));
      jr["scenarios"].push_back(std::move(js));
    }
    root.push_back(std::move(jr));
  }
  return root.dump(2);
}

}  // namespace fmdd
