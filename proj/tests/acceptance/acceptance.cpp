// Copyright 2026 The EchoQA Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acceptance runner: one PASS/FAIL line per criterion.
//
//   echoqa_acceptance [criterion...]     (default: all)
//   echoqa_acceptance --list

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "echoqa/data/dataset.hpp"
#include "echoqa/metrics/quality.hpp"
#include "echoqa/model/train.hpp"
#include "echoqa/nn/ops.hpp"
#include "echoqa/phantom/phantom.hpp"
#include "echoqa/rubric/rubric.hpp"
#include "support/gradient_cases.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace echoqa;
using nlohmann::json;

namespace {

// Tolerances and budgets.
constexpr double kGradientTolerance = 1e-4;
constexpr double kGradientBudgetS = 120.0;
constexpr double kFloatOracleTolerance = 1e-10;
constexpr double kOracleBudgetS = 60.0;
constexpr std::size_t kOverfitClips = 32;
constexpr double kOverfitMae = 0.05;
constexpr double kOverfitBudgetS = 15.0 * 60.0;
constexpr std::size_t kGeneralClips = 200;
constexpr double kGeneralMae = 0.10;
constexpr double kGeneralSpearman = 0.8;
constexpr double kGeneralBudgetS = 60.0 * 60.0;
constexpr double kIsolationRatio = 3.0;
constexpr std::size_t kCvClips = 100;
constexpr std::size_t kCvFolds = 5;
constexpr std::size_t kCvEpochs = 12;
constexpr double kCvBudgetS = 90.0 * 60.0;
constexpr double kLatencyMsPerFrame = 250.0;

constexpr std::uint64_t kDataSeed = 20240601;
constexpr std::uint64_t kModelSeed = 11;

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string sci(double v) { return fmt("%.2e", v); }
std::string fix(double v) { return fmt("%.4f", v); }
std::string secs(double v) { return fmt("%.1f s", v); }

std::string per_attribute(const std::array<double, 4>& v) {
  std::string s;
  for (auto a : kAttributes) s += (s.empty() ? "" : " ") + std::string(attribute_key(a)) + "=" + fix(v[index_of(a)]);
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("echoqa_acceptance_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---- gradient --------------------------------------------------------------

Outcome gradient() {
  Timer t;
  const std::vector<std::pair<std::string, std::function<double(std::uint64_t)>>> cases{
      {"conv", gradcases::conv},       {"batchnorm", gradcases::batchnorm}, {"maxpool", gradcases::maxpool},
      {"dense", gradcases::dense},     {"lstm", gradcases::lstm},           {"sigmoid_head", gradcases::sigmoid_head},
      {"four_stream_loss", gradcases::full_model}};
  double worst = 0.0;
  std::string worst_case;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const double e = cases[i].second(mix_seed(kDataSeed, i));
    if (!(e <= worst)) {
      worst = e;
      worst_case = cases[i].first;
    }
  }
  const double s = t.seconds();
  return {worst <= kGradientTolerance && s < kGradientBudgetS,
          "worst relative error " + sci(worst) + " (" + worst_case + ") vs " + sci(kGradientTolerance) + "; " +
              std::to_string(cases.size()) + " cases x " + std::to_string(gradcases::kTrials) + " trials; " +
              secs(s)};
}

// ---- oracle ----------------------------------------------------------------

Outcome oracles() {
  Timer t;
  Rng rng(mix_seed(kDataSeed, 1));
  std::vector<std::string> failures;
  double worst_float = 0.0;
  auto note_float = [&](const std::string& what, double got, double want) {
    const double e = std::fabs(got - want);
    worst_float = std::max(worst_float, e);
    if (!(e <= kFloatOracleTolerance)) failures.push_back(what);
  };

  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), k = 1 + rng.below(4), ks = 1 + rng.below(5);
    const nn::ConvGeometry g{1 + rng.below(3), rng.below(3)};
    const std::size_t h = ks + rng.below(8), w = ks + rng.below(8);
    const auto x = oracle::random_integer_tensor<double>({n, c, h, w}, rng, -4, 4);
    const auto wt = oracle::random_integer_tensor<double>({k, c, ks, ks}, rng, -3, 3);
    const auto b = oracle::random_integer_tensor<double>({k}, rng, -5, 5);
    if (!(nn::kernels::conv2d(x, wt, b, g) == oracle::conv2d(x, wt, b, g.stride, g.pad))) {
      failures.push_back("conv2d trial " + std::to_string(trial));
    }
    const std::size_t window = 2 + rng.below(2), stride = 1 + rng.below(2);
    const auto p = oracle::random_integer_tensor<double>({n, c, window + rng.below(6), window + rng.below(6)}, rng, -9, 9);
    if (!(nn::kernels::maxpool2d(p, window, stride, nullptr) == oracle::maxpool(p, window, stride))) {
      failures.push_back("maxpool trial " + std::to_string(trial));
    }
  }

  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t w = 8 + rng.below(120), h = 8 + rng.below(120);
    std::vector<float> px(w * h);
    for (auto& v : px) v = static_cast<float>(rng.uniform());
    const Frame f(w, h, px);
    note_float("rms_contrast", metrics::rms_contrast(f), oracle::rms_contrast(f));

    const std::size_t bands = 1 + rng.below(6);
    const auto profile = metrics::depth_gain_profile(f, bands);
    for (std::size_t i = 0; i < bands; ++i) {
      std::vector<double> band;
      for (std::size_t y = i * h / bands; y < (i + 1) * h / bands; ++y) {
        for (std::size_t x = 0; x < w; ++x) band.push_back(f.at(x, y));
      }
      note_float("band variance", profile.band_variances[i], oracle::sample_variance(band));
    }

    const std::size_t m = 2 + rng.below(50);
    std::vector<double> truth(m), pred(m);
    std::vector<metrics::ScorePair> pairs;
    for (std::size_t i = 0; i < m; ++i) {
      truth[i] = rng.uniform();
      pred[i] = rng.uniform();
      pairs.push_back({truth[i], pred[i]});
    }
    const double error = oracle::mean_abs_diff(truth, pred);
    note_float("class_error", metrics::class_error(pairs), error);
    note_float("accuracy", metrics::model_accuracy(pairs), (1.0 - error) * 100.0);

    std::vector<double> diffs;
    for (std::size_t i = 0; i < m; ++i) diffs.push_back(std::fabs(truth[i] - pred[i]));
    const auto d = metrics::interobserver_disparity(truth, pred);
    note_float("disparity mean", d.mean, error);
    note_float("disparity std", d.std, std::sqrt(oracle::sample_variance(diffs)));
  }
  const double s = t.seconds();
  std::string detail = failures.empty() ? "conv2d, maxpool exact over 25 trials; rms_contrast, band variance, "
                                          "class_error, accuracy, disparity worst |diff| " +
                                              sci(worst_float)
                                        : "mismatch: " + failures.front() + " (" + std::to_string(failures.size()) +
                                              " total)";
  return {failures.empty() && s < kOracleBudgetS, detail + "; " + secs(s)};
}

// ---- rubric ----------------------------------------------------------------

Outcome rubric_fidelity() {
  const auto& r = rubric::Rubric::standard();
  std::vector<std::string> failures;
  for (auto a : kAttributes) {
    const double poor = r.composite_score(a, r.column(a, rubric::Column::poor));
    const double average = r.composite_score(a, r.column(a, rubric::Column::average));
    const double optimum = r.composite_score(a, r.column(a, rubric::Column::optimum));
    const double want_average = a == Attribute::OnAxis ? 6.5 : 6.0;
    if (poor != 4.0) failures.push_back(std::string(attribute_key(a)) + " poor " + fix(poor));
    if (average != want_average) failures.push_back(std::string(attribute_key(a)) + " average " + fix(average));
    if (optimum != 9.0) failures.push_back(std::string(attribute_key(a)) + " optimum " + fix(optimum));
  }
  const std::vector<std::pair<double, QualityBand>> bands{
      {0.0, QualityBand::unsuitable},
      {std::nextafter(4.4, 0.0), QualityBand::unsuitable},
      {4.4, QualityBand::poor},
      {4.5, QualityBand::poor},
      {std::nextafter(4.5, 9.0), QualityBand::average},
      {6.9, QualityBand::average},
      {std::nextafter(6.9, 9.0), QualityBand::optimum},
      {9.0, QualityBand::optimum}};
  for (const auto& [raw, band] : bands) {
    if (rubric::quality_band(raw) != band) failures.push_back("band at " + fmt("%.17g", raw));
  }
  return {failures.empty(), failures.empty() ? "column sums poor 4.0 x4, average 6.5/6.0/6.0/6.0, optimum 9.0 x4; "
                                               "band edges 4.4/4.5/6.9 exact"
                                             : "mismatch: " + failures.front()};
}

// ---- overfit ---------------------------------------------------------------

Outcome overfit() {
  Timer t;
  const auto clips = phantom::generate_dataset(kOverfitClips, kDataSeed);
  model::MultiStreamModel<float> net(model::ModelConfig::standard(), kModelSeed);
  model::TrainConfig cfg;
  cfg.seed = kModelSeed;
  cfg.patience = cfg.max_epochs;  // run to convergence
  const auto result = model::train(net, clips, clips, cfg);
  const auto report = model::evaluate(net, clips);
  std::array<double, 4> mae{};
  bool ok = result.epochs.size() <= 50;
  for (auto a : kAttributes) {
    mae[index_of(a)] = report.attributes[index_of(a)].mae;
    ok = ok && mae[index_of(a)] < kOverfitMae;
  }
  const double s = t.seconds();
  return {ok && s < kOverfitBudgetS, "train MAE " + per_attribute(mae) + " (limit < " + fix(kOverfitMae) + "), " +
                                         std::to_string(result.epochs.size()) + " epochs; " + secs(s)};
}

// ---- generalization and the trained-model invariants ------------------------

struct GeneralizationOutcome {
  Outcome generalization;
  Outcome isolation;
};

geometry::Foreshortening other_foreshortening(geometry::Foreshortening f) {
  return f == geometry::Foreshortening::zero ? geometry::Foreshortening::severe : geometry::Foreshortening::zero;
}

GeneralizationOutcome generalization() {
  Timer t;
  const auto clips = phantom::generate_dataset(kGeneralClips, mix_seed(kDataSeed, 2));
  std::vector<std::string> ids;
  for (const auto& c : clips) ids.push_back(c.clip_id);
  const auto assignment = data::split_dataset(ids, mix_seed(kDataSeed, 3));
  std::vector<phantom::CineClip> train_set, val_set, test_set;
  for (const auto& c : clips) {
    switch (assignment.at(c.clip_id)) {
      case data::Split::train: train_set.push_back(c); break;
      case data::Split::val: val_set.push_back(c); break;
      case data::Split::test: test_set.push_back(c); break;
    }
  }
  model::MultiStreamModel<float> net(model::ModelConfig::standard(), kModelSeed);
  model::TrainConfig cfg;
  cfg.seed = kModelSeed;
  const auto result = model::train(net, train_set, val_set, cfg);
  const auto report = model::evaluate(net, test_set);
  const double s = t.seconds();

  std::array<double, 4> mae{}, rho{};
  bool ok = true;
  for (auto a : kAttributes) {
    const auto& r = report.attributes[index_of(a)];
    mae[index_of(a)] = r.mae;
    rho[index_of(a)] = r.spearman.value_or(std::nan(""));
    ok = ok && r.mae <= kGeneralMae && r.spearman && *r.spearman > kGeneralSpearman;
  }
  GeneralizationOutcome out;
  out.generalization = {ok && s < kGeneralBudgetS,
                        std::to_string(train_set.size()) + "/" + std::to_string(val_set.size()) + "/" +
                            std::to_string(test_set.size()) + " clips, " + std::to_string(result.epochs.size()) +
                            " epochs; held-out MAE " + per_attribute(mae) + " (limit " + fix(kGeneralMae) +
                            "); Spearman " + per_attribute(rho) + " (limit > " + fix(kGeneralSpearman) + "); " +
                            secs(s)};

  // Re-render each held-out clip with only the foreshortening changed.
  std::vector<phantom::CineClip> changed;
  for (const auto& c : test_set) {
    auto p = *c.params;
    p.foreshorten_level = other_foreshortening(p.foreshorten_level);
    changed.push_back(phantom::generate_clip(p, c.clip_id + "_fs"));
  }
  const auto before = model::predict(net, test_set);
  const auto after = model::predict(net, changed);
  double d_fs = 0.0, d_dg = 0.0;
  for (std::size_t i = 0; i < before.size(); ++i) {
    d_fs += std::fabs(after[i][index_of(Attribute::Foreshorten)] - before[i][index_of(Attribute::Foreshorten)]);
    d_dg += std::fabs(after[i][index_of(Attribute::DepthGain)] - before[i][index_of(Attribute::DepthGain)]);
  }
  d_fs /= double(before.size());
  d_dg /= double(before.size());
  const double ratio = d_fs / std::max(d_dg, 1e-12);
  out.isolation = {ratio >= kIsolationRatio, "mean |dForeshorten| " + fix(d_fs) + ", mean |dDepthGain| " + fix(d_dg) +
                                                 ", ratio " + fmt("%.2f", ratio) + " (limit >= " +
                                                 fmt("%.1f", kIsolationRatio) + ")"};
  return out;
}

// ---- cross-validation ------------------------------------------------------

Outcome cross_validation() {
  Timer t;
  const auto clips = phantom::generate_dataset(kCvClips, mix_seed(kDataSeed, 4));
  model::TrainConfig cfg;
  cfg.seed = kModelSeed;
  cfg.folds = kCvFolds;
  cfg.max_epochs = kCvEpochs;
  const auto report = model::cross_validate(clips, model::ModelConfig::standard(), cfg);

  std::map<std::string, int> seen;
  for (const auto& f : report.folds) {
    for (const auto& id : f.validation_ids) ++seen[id];
  }
  bool once = seen.size() == clips.size();
  for (const auto& c : clips) once = once && seen[c.clip_id] == 1;

  double worst = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    double sum = 0.0;
    for (const auto& f : report.folds) sum += f.report.attributes[k].mae;
    worst = std::max(worst, std::fabs(report.mean_mae[k] - sum / double(report.folds.size())));
  }
  double acc = 0.0;
  for (const auto& f : report.folds) acc += f.report.average_accuracy;
  worst = std::max(worst, std::fabs(report.mean_accuracy - acc / double(report.folds.size())));

  const double s = t.seconds();
  const bool ok = report.folds.size() == kCvFolds && once && worst <= 1e-12 && s < kCvBudgetS;
  return {ok, std::to_string(report.folds.size()) + " folds over " + std::to_string(clips.size()) + " clips, " +
                  (once ? "each validated once" : "validation coverage wrong") + ", aggregate vs fold mean |diff| " +
                  sci(worst) + "; mean MAE " + per_attribute(report.mean_mae) + "; " + secs(s)};
}

// ---- determinism -----------------------------------------------------------

struct PipelineOutput {
  std::string manifest;
  std::string checkpoint;
  std::string report;
};

PipelineOutput run_pipeline(const fs::path& root) {
  const auto clips = phantom::generate_dataset(10, mix_seed(kDataSeed, 5));
  data::save_dataset(clips, root);
  data::assign_splits(root, mix_seed(kDataSeed, 6));
  const auto ds = data::load_dataset(root);
  model::MultiStreamModel<float> net(model::ModelConfig::standard(), kModelSeed);
  model::TrainConfig cfg;
  cfg.seed = kModelSeed;
  cfg.max_epochs = 1;
  const auto result = model::train(net, ds.subset(data::Split::train), ds.subset(data::Split::val), cfg);
  model::save_model(root / "model.ckpt", net, {{"train_config", cfg.to_json()}, {"best_epoch", result.best_epoch}});
  const auto report = model::evaluate(net, ds.subset(data::Split::test));
  return {slurp(root / data::kManifestName), slurp(root / "model.ckpt"), report.to_json().dump()};
}

Outcome determinism() {
  TempDir a("det_a"), b("det_b");
  const auto first = run_pipeline(a.path);
  const auto second = run_pipeline(b.path);
  const bool manifest = first.manifest == second.manifest;
  const bool checkpoint = first.checkpoint == second.checkpoint;
  const bool report = first.report == second.report;
  auto word = [](bool same) { return same ? "identical" : "DIFFERENT"; };
  return {manifest && checkpoint && report, std::string("manifests ") + word(manifest) + ", checkpoints " +
                                                word(checkpoint) + " (" + std::to_string(first.checkpoint.size()) +
                                                " bytes), eval reports " + word(report)};
}

// ---- latency ---------------------------------------------------------------

Outcome latency() {
  model::MultiStreamModel<float> net(model::ModelConfig::standard(), kModelSeed);
  std::vector<phantom::CineClip> clips;
  for (std::uint64_t i = 0; i < 2; ++i) {
    phantom::PhantomParams p;
    p.seed = i;
    clips.push_back(phantom::generate_clip(p, "bench"));
  }
  const auto stats = model::benchmark_inference(net, clips, 3, 1);
  const auto j = stats.to_json();
  std::vector<std::string> keys;
  for (const auto& [k, v] : j.items()) keys.push_back(k);
  const std::vector<std::string> expected{"batch_size",         "clips", "format", "frames", "frames_per_second",
                                          "median_ms_per_frame", "p95_ms_per_frame", "repetitions", "version"};
  const bool format = keys == expected && j.at("format") == "echoqa-bench" && j.at("version") == 1;
  return {format && stats.median_ms_per_frame < kLatencyMsPerFrame,
          "median " + fmt("%.2f", stats.median_ms_per_frame) + " ms/frame, p95 " + fmt("%.2f", stats.p95_ms_per_frame) +
              " ms/frame (limit < " + fmt("%.0f", kLatencyMsPerFrame) + "); report format " +
              (format ? "stable" : "CHANGED")};
}

void print(const std::string& name, const Outcome& o) {
  std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Keep large activation buffers in the heap between training steps.
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);
#endif
  const std::vector<std::string> all{"gradient", "oracle",          "rubric",      "overfit",
                                     "generalization", "cross_validation", "determinism", "latency"};
  std::vector<std::string> selected(argv + 1, argv + argc);
  if (selected.size() == 1 && selected[0] == "--list") {
    for (const auto& n : all) std::cout << n << '\n';
    return 0;
  }
  if (selected.empty()) selected = all;

  bool ok = true;
  for (const auto& name : selected) {
    try {
      if (name == "gradient") {
        const auto o = gradient();
        print(name, o);
        ok = ok && o.pass;
      } else if (name == "oracle") {
        const auto o = oracles();
        print(name, o);
        ok = ok && o.pass;
      } else if (name == "rubric") {
        const auto o = rubric_fidelity();
        print(name, o);
        ok = ok && o.pass;
      } else if (name == "overfit") {
        const auto o = overfit();
        print(name, o);
        ok = ok && o.pass;
      } else if (name == "generalization") {
        const auto o = generalization();
        print(name, o.generalization);
        print("stream_isolation", o.isolation);
        ok = ok && o.generalization.pass && o.isolation.pass;
      } else if (name == "cross_validation") {
        const auto o = cross_validation();
        print(name, o);
        ok = ok && o.pass;
      } else if (name == "determinism") {
        const auto o = determinism();
        print(name, o);
        ok = ok && o.pass;
      } else if (name == "latency") {
        const auto o = latency();
        print(name, o);
        ok = ok && o.pass;
      } else {
        std::cerr << "unknown criterion '" << name << "'; use --list\n";
        return 2;
      }
    } catch (const std::exception& e) {
      print(name, {false, std::string("error: ") + e.what()});
      ok = false;
    }
  }
  return ok ? 0 : 1;
}
