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

#include "echoqa/model/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace echoqa::model {

using nlohmann::json;
using phantom::CineClip;
using ClipRefs = std::vector<const CineClip*>;

namespace {

ClipRefs refs(const std::vector<CineClip>& clips) {
  ClipRefs out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(&c);
  return out;
}

json per_attribute(const std::array<double, 4>& v) {
  json j = json::object();
  for (auto a : kAttributes) j[std::string(attribute_key(a))] = v[index_of(a)];
  return j;
}

double mean4(const std::array<double, 4>& v) { return (v[0] + v[1] + v[2] + v[3]) / 4.0; }

std::array<double, 4> mae(const ClipRefs& clips, const std::vector<std::array<double, 4>>& pred) {
  std::array<double, 4> out{};
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto truth = clips[i]->labels.normalized();
    for (std::size_t k = 0; k < 4; ++k) out[k] += std::abs(pred[i][k] - truth[k]);
  }
  for (auto& v : out) v /= static_cast<double>(clips.size());
  return out;
}

TrainResult train_refs(MultiStreamModel<float>& model, const ClipRefs& train_set, const ClipRefs& val_set,
                       const TrainConfig& config, std::ostream* log, const json& context) {
  config.validate();
  if (train_set.empty()) throw ValidationError("training set is empty");
  if (val_set.empty()) throw ValidationError("validation set is empty");

  nn::Adam<float> opt(model.parameters(), config.adam());
  const std::vector<float> weights(config.loss_weights.begin(), config.loss_weights.end());
  const bool augmenting = config.augmentation.max_translation_fraction > 0 || config.augmentation.max_rotation_deg > 0 ||
                          config.augmentation.horizontal_flip || config.augmentation.vertical_flip;

  TrainResult result;
  result.best_val_mae = std::numeric_limits<double>::infinity();
  std::optional<nn::Checkpoint> best;
  std::size_t stale = 0;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = opt.lr_for_epoch(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng order_rng(mix_seed(config.seed, 3 * epoch));
    Rng dropout_rng(mix_seed(config.seed, 3 * epoch + 1));
    Rng augment_rng(mix_seed(config.seed, 3 * epoch + 2));
    shuffle(order, order_rng);

    std::array<double, 4> sums{};
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, order.size() - start);
      ClipRefs batch;
      std::vector<CineClip> augmented;
      if (augmenting) augmented.reserve(b);
      for (std::size_t i = 0; i < b; ++i) {
        const CineClip* clip = train_set[order[start + i]];
        if (augmenting) {
          CineClip copy;
          copy.clip_id = clip->clip_id;
          const auto draw = data::draw_augmentation(config.augmentation, clip->frames.front().width(),
                                                    clip->frames.front().height(), augment_rng);
          for (const auto& f : clip->frames) copy.frames.push_back(data::augment(f, draw));
          copy.labels = clip->labels;
          augmented.push_back(std::move(copy));
          clip = &augmented.back();
        }
        batch.push_back(clip);
      }

      nn::Tape<float> tape;
      auto outputs = model.forward(tape.constant(make_input<float>(batch, model.config())), b, nn::Mode::train,
                                   &dropout_rng);
      std::vector<nn::Var<float>> terms;
      for (auto a : kAttributes) {
        nn::Tensor<float> target({b, 1});
        for (std::size_t i = 0; i < b; ++i) target[i] = static_cast<float>(batch[i]->labels[a].normalized);
        auto term = nn::l1_loss(outputs[index_of(a)], target);
        const double v = term.value()[0];
        if (!std::isfinite(v)) throw TrainingDiverged(epoch, a);
        sums[index_of(a)] += v * static_cast<double>(b);
        terms.push_back(term);
      }
      auto loss = nn::weighted_sum(terms, weights);
      opt.zero_grad();
      tape.backward(loss);
      opt.step(entry.lr);
    }
    for (std::size_t k = 0; k < 4; ++k) entry.train_mae[k] = sums[k] / static_cast<double>(train_set.size());

    entry.val_mae = mae(val_set, predict(model, val_set, config.batch_size));
    for (auto a : kAttributes) {
      if (!std::isfinite(entry.val_mae[index_of(a)])) throw TrainingDiverged(epoch, a);
    }
    entry.val_mean = mean4(entry.val_mae);
    entry.improved = entry.val_mean < result.best_val_mae;
    if (entry.improved) {
      result.best_val_mae = entry.val_mean;
      result.best_epoch = epoch;
      best = model.to_checkpoint();
      stale = 0;
    } else {
      ++stale;
    }
    result.epochs.push_back(entry);
    if (log) {
      json line = context;
      line.update(entry.to_json());
      *log << line.dump() << '\n' << std::flush;
    }
    if (stale >= config.patience) {
      result.stopped_early = epoch + 1 < config.max_epochs;
      break;
    }
  }
  if (best) model.load_weights(*best);
  return result;
}

}  // namespace

// ---- config ----------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigurationError("base_lr must be positive");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigurationError("momentum must lie in (0,1)");
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigurationError("decay must lie in (0,1]");
  if (decay_interval == 0) throw ConfigurationError("decay interval must be positive");
  if (batch_size != 8 && batch_size != 12) {
    throw ConfigurationError("batch size must be 8 or 12, got " + std::to_string(batch_size));
  }
  if (max_epochs == 0) throw ConfigurationError("max_epochs must be positive");
  if (patience == 0) throw ConfigurationError("patience must be positive");
  if (folds < 2) throw ConfigurationError("folds must be at least 2");
  double total = 0.0;
  for (double w : loss_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigurationError("loss weights must be finite and non-negative");
    total += w;
  }
  if (total <= 0.0) throw ConfigurationError("at least one loss weight must be positive");
  augmentation.validate();
}

nn::AdamConfig TrainConfig::adam() const {
  nn::AdamConfig c;
  c.base_lr = base_lr;
  c.beta1 = momentum;
  c.decay = decay;
  c.decay_interval = decay_interval;
  return c;
}

json TrainConfig::to_json() const {
  return {{"base_lr", base_lr},
          {"momentum", momentum},
          {"decay", decay},
          {"decay_interval", decay_interval},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"folds", folds},
          {"seed", seed},
          {"loss_weights", loss_weights},
          {"augmentation",
           {{"max_translation_fraction", augmentation.max_translation_fraction},
            {"max_rotation_deg", augmentation.max_rotation_deg},
            {"horizontal_flip", augmentation.horizontal_flip},
            {"vertical_flip", augmentation.vertical_flip}}}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  try {
    c.base_lr = j.value("base_lr", c.base_lr);
    c.momentum = j.value("momentum", c.momentum);
    c.decay = j.value("decay", c.decay);
    c.decay_interval = j.value("decay_interval", c.decay_interval);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.patience = j.value("patience", c.patience);
    c.folds = j.value("folds", c.folds);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss_weights")) c.loss_weights = j.at("loss_weights").get<std::array<double, 4>>();
    if (j.contains("augmentation")) {
      const auto& a = j.at("augmentation");
      c.augmentation.max_translation_fraction = a.value("max_translation_fraction", 0.0);
      c.augmentation.max_rotation_deg = a.value("max_rotation_deg", 0.0);
      c.augmentation.horizontal_flip = a.value("horizontal_flip", false);
      c.augmentation.vertical_flip = a.value("vertical_flip", false);
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("malformed training config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, Attribute stream)
    : std::runtime_error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + " in the " +
                         std::string(attribute_key(stream)) + " stream"),
      epoch_(epoch),
      stream_(stream) {}

json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"lr", lr},
          {"train_mae", per_attribute(train_mae)},
          {"val_mae", per_attribute(val_mae)},
          {"val_mean", val_mean},
          {"improved", improved}};
}

json TrainResult::to_json() const {
  json e = json::array();
  for (const auto& x : epochs) e.push_back(x.to_json());
  return {{"epochs", e}, {"best_epoch", best_epoch}, {"best_val_mae", best_val_mae}, {"stopped_early", stopped_early}};
}

// ---- training and inference -----------------------------------------------

TrainResult train(MultiStreamModel<float>& model, const std::vector<CineClip>& train_set,
                  const std::vector<CineClip>& val_set, const TrainConfig& config, std::ostream* log) {
  return train_refs(model, refs(train_set), refs(val_set), config, log, json::object());
}

std::vector<std::array<double, 4>> predict(MultiStreamModel<float>& model, const ClipRefs& clips, std::size_t batch_size) {
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  std::vector<std::array<double, 4>> out;
  out.reserve(clips.size());
  for (std::size_t start = 0; start < clips.size(); start += batch_size) {
    const std::size_t b = std::min(batch_size, clips.size() - start);
    const ClipRefs batch(clips.begin() + static_cast<long>(start), clips.begin() + static_cast<long>(start + b));
    nn::Tape<float> tape(false);
    auto outputs = model.forward(tape.constant(make_input<float>(batch, model.config())), b, nn::Mode::infer);
    for (std::size_t i = 0; i < b; ++i) {
      std::array<double, 4> row{};
      for (std::size_t k = 0; k < 4; ++k) row[k] = outputs[k].value()[i];
      out.push_back(row);
    }
  }
  return out;
}

std::vector<std::array<double, 4>> predict(MultiStreamModel<float>& model, const std::vector<CineClip>& clips,
                                           std::size_t batch_size) {
  return predict(model, refs(clips), batch_size);
}

rubric::AttributeScores forward_score(MultiStreamModel<float>& model, const CineClip& clip) {
  return rubric::AttributeScores::from_normalized(predict(model, ClipRefs{&clip}, 1).front());
}

// ---- evaluation ------------------------------------------------------------

EvalReport evaluate_predictions(const std::vector<std::array<double, 4>>& truth,
                                const std::vector<std::array<double, 4>>& predicted,
                                const std::vector<std::optional<phantom::QualityLevels>>& levels) {
  if (truth.empty()) throw ValidationError("evaluation needs at least one clip");
  if (truth.size() != predicted.size()) throw ValidationError("evaluation: truth and prediction counts differ");
  if (!levels.empty() && levels.size() != truth.size()) throw ValidationError("evaluation: level count differs");
  const bool ranked = !levels.empty() && std::all_of(levels.begin(), levels.end(), [](const auto& l) { return l.has_value(); });

  EvalReport r;
  r.clips = truth.size();
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<metrics::ScorePair> pairs;
    std::vector<double> errors, pred, level;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      pairs.push_back({truth[i][k], predicted[i][k]});
      errors.push_back(predicted[i][k] - truth[i][k]);
      pred.push_back(predicted[i][k]);
      if (ranked) level.push_back((*levels[i])[k]);
    }
    auto& a = r.attributes[k];
    a.mae = metrics::class_error(pairs);
    a.accuracy = metrics::model_accuracy(pairs);
    a.errors = metrics::box_summary(errors);
    if (ranked && truth.size() >= 2) a.spearman = metrics::spearman(level, pred);
    r.average_accuracy += a.accuracy / 4.0;
  }
  return r;
}

EvalReport evaluate(MultiStreamModel<float>& model, const std::vector<CineClip>& clips) {
  if (clips.empty()) throw ValidationError("evaluation needs at least one clip");
  std::vector<std::array<double, 4>> truth;
  std::vector<std::optional<phantom::QualityLevels>> levels;
  for (const auto& c : clips) {
    truth.push_back(c.labels.normalized());
    levels.push_back(c.levels);
  }
  return evaluate_predictions(truth, predict(model, clips), levels);
}

namespace {

json box_json(const metrics::BoxSummary& b) {
  return {{"min", b.min},
          {"q1", b.q1},
          {"median", b.median},
          {"q3", b.q3},
          {"max", b.max},
          {"whisker_low", b.whisker_low},
          {"whisker_high", b.whisker_high},
          {"outliers", b.outliers}};
}

metrics::BoxSummary box_from(const json& j) {
  metrics::BoxSummary b;
  b.min = j.at("min");
  b.q1 = j.at("q1");
  b.median = j.at("median");
  b.q3 = j.at("q3");
  b.max = j.at("max");
  b.whisker_low = j.at("whisker_low");
  b.whisker_high = j.at("whisker_high");
  b.outliers = j.at("outliers").get<std::size_t>();
  return b;
}

}  // namespace

json EvalReport::to_json() const {
  json columns = json::array();
  json attrs = json::object();
  for (auto a : kAttributes) {
    const auto& r = attributes[index_of(a)];
    columns.push_back(attribute_label(a));
    json entry = {{"label", attribute_label(a)},
                  {"mae", r.mae},
                  {"accuracy", r.accuracy},
                  {"error_distribution", box_json(r.errors)}};
    if (r.spearman) entry["spearman"] = *r.spearman;
    attrs[std::string(attribute_key(a))] = entry;
  }
  columns.push_back("Average Accuracy");
  return {{"format", "echoqa-eval"},      {"version", kVersion},      {"clips", clips},
          {"columns", columns},           {"attributes", attrs},      {"average_accuracy", average_accuracy}};
}

EvalReport EvalReport::from_json(const json& j) {
  try {
    if (j.at("format") != "echoqa-eval") throw IoError("not an evaluation report");
    if (j.at("version").get<int>() != kVersion) {
      throw IoError("unsupported evaluation report version " + j.at("version").dump());
    }
    EvalReport r;
    r.clips = j.at("clips");
    r.average_accuracy = j.at("average_accuracy");
    for (auto a : kAttributes) {
      const auto& e = j.at("attributes").at(std::string(attribute_key(a)));
      auto& out = r.attributes[index_of(a)];
      out.mae = e.at("mae");
      out.accuracy = e.at("accuracy");
      out.errors = box_from(e.at("error_distribution"));
      if (e.contains("spearman")) out.spearman = e.at("spearman").get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed evaluation report: ") + e.what());
  }
}

// ---- cross-validation ------------------------------------------------------

std::vector<std::size_t> fold_assignment(const std::vector<std::string>& clip_ids, std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigurationError("folds must be at least 2");
  const std::size_t n = clip_ids.size();
  if (n < 5 * folds) {
    throw ValidationError(std::to_string(folds) + "-fold cross-validation needs at least " + std::to_string(5 * folds) +
                          " clips, got " + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return clip_ids[a] < clip_ids[b]; });
  for (std::size_t i = 1; i < n; ++i) {
    if (clip_ids[idx[i]] == clip_ids[idx[i - 1]]) throw ValidationError("duplicate clip id " + clip_ids[idx[i]]);
  }
  Rng rng(mix_seed(seed, 2000));
  shuffle(idx, rng);
  std::vector<std::size_t> fold(n);
  for (std::size_t p = 0; p < n; ++p) fold[idx[p]] = p * folds / n;
  return fold;
}

json CrossValidationReport::to_json() const {
  json f = json::array();
  for (const auto& r : folds) {
    f.push_back({{"fold", r.fold},
                 {"validation_ids", r.validation_ids},
                 {"report", r.report.to_json()},
                 {"best_epoch", r.training.best_epoch},
                 {"epochs_run", r.training.epochs.size()}});
  }
  return {{"format", "echoqa-cv"},
          {"folds", f},
          {"mean_mae", per_attribute(mean_mae)},
          {"std_mae", per_attribute(std_mae)},
          {"mean_accuracy", mean_accuracy}};
}

CrossValidationReport cross_validate(const std::vector<CineClip>& clips, const ModelConfig& model_config,
                                     const TrainConfig& config, std::ostream* log) {
  config.validate();
  std::vector<std::string> ids;
  for (const auto& c : clips) ids.push_back(c.clip_id);
  const auto fold_of = fold_assignment(ids, config.folds, config.seed);

  CrossValidationReport out;
  for (std::size_t f = 0; f < config.folds; ++f) {
    ClipRefs train_set, val_set;
    FoldReport report;
    report.fold = f;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (fold_of[i] == f) {
        val_set.push_back(&clips[i]);
        report.validation_ids.push_back(clips[i].clip_id);
      } else {
        train_set.push_back(&clips[i]);
      }
    }
    MultiStreamModel<float> model(model_config, mix_seed(config.seed, 3000 + f));
    TrainConfig fold_config = config;
    fold_config.seed = mix_seed(config.seed, 4000 + f);
    report.training = train_refs(model, train_set, val_set, fold_config, log, json{{"fold", f}});

    std::vector<std::array<double, 4>> truth;
    std::vector<std::optional<phantom::QualityLevels>> levels;
    for (const auto* c : val_set) {
      truth.push_back(c->labels.normalized());
      levels.push_back(c->levels);
    }
    report.report = evaluate_predictions(truth, predict(model, val_set), levels);
    out.folds.push_back(std::move(report));
  }

  const double k = static_cast<double>(out.folds.size());
  for (std::size_t a = 0; a < 4; ++a) {
    double sum = 0.0;
    for (const auto& f : out.folds) sum += f.report.attributes[a].mae;
    out.mean_mae[a] = sum / k;
    double ss = 0.0;
    for (const auto& f : out.folds) ss += std::pow(f.report.attributes[a].mae - out.mean_mae[a], 2);
    out.std_mae[a] = std::sqrt(ss / (k - 1.0));
  }
  for (const auto& f : out.folds) out.mean_accuracy += f.report.average_accuracy / k;
  return out;
}

// ---- latency ---------------------------------------------------------------

json LatencyStats::to_json() const {
  return {{"format", "echoqa-bench"},
          {"version", 1},
          {"clips", clips},
          {"frames", frames},
          {"repetitions", repetitions},
          {"batch_size", batch_size},
          {"median_ms_per_frame", median_ms_per_frame},
          {"p95_ms_per_frame", p95_ms_per_frame},
          {"frames_per_second", frames_per_second}};
}

LatencyStats benchmark_inference(MultiStreamModel<float>& model, const std::vector<CineClip>& clips,
                                 std::size_t repetitions, std::size_t batch_size) {
  if (repetitions == 0) throw ValidationError("repetitions must be at least 1");
  if (clips.empty()) throw ValidationError("benchmark needs at least one clip");
  if (batch_size == 0) throw ValidationError("batch size must be positive");
  const auto all = refs(clips);
  LatencyStats s;
  s.clips = clips.size();
  s.frames = clips.size() * model.config().sequence_length;
  s.repetitions = repetitions;
  s.batch_size = batch_size;
  predict(model, all, batch_size);  // warm-up
  std::vector<double> per_frame;
  for (std::size_t r = 0; r < repetitions; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    predict(model, all, batch_size);
    const std::chrono::duration<double, std::milli> dt = std::chrono::steady_clock::now() - t0;
    per_frame.push_back(dt.count() / static_cast<double>(s.frames));
  }
  s.median_ms_per_frame = metrics::quantile(per_frame, 0.5);
  s.p95_ms_per_frame = metrics::quantile(per_frame, 0.95);
  s.frames_per_second = 1000.0 / s.median_ms_per_frame;
  return s;
}

}  // namespace echoqa::model
