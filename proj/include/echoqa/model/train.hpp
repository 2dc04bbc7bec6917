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

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "echoqa/data/dataset.hpp"
#include "echoqa/metrics/quality.hpp"
#include "echoqa/model/model.hpp"
#include "echoqa/nn/optim.hpp"

namespace echoqa::model {

struct TrainConfig {
  double base_lr = 1e-3;  // desk-scale default; see README
  double momentum = 0.95;  // ADAM beta1
  double decay = 0.1;
  std::size_t decay_interval = 15;  // epochs
  std::size_t batch_size = 8;       // 8 or 12
  std::size_t max_epochs = 50;
  std::size_t patience = 8;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::array<double, 4> loss_weights{1.0, 1.0, 1.0, 1.0};
  /// Off by default: rotating a frame changes its true on-axis score.
  data::AugmentationSpec augmentation = data::AugmentationSpec::none();

  void validate() const;
  nn::AdamConfig adam() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Loss became NaN or infinite; the message names the epoch and stream.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, Attribute stream);
  std::size_t epoch() const { return epoch_; }
  Attribute stream() const { return stream_; }

 private:
  std::size_t epoch_;
  Attribute stream_;
};

struct EpochLog {
  std::size_t epoch = 0;  // 0-based
  double lr = 0.0;
  std::array<double, 4> train_mae{};  // running mean over the epoch's batches, train mode
  std::array<double, 4> val_mae{};    // inference mode after the epoch
  double val_mean = 0.0;
  bool improved = false;

  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
  bool stopped_early = false;

  nlohmann::json to_json() const;
};

/// Trains all four streams together on the summed weighted MAE and restores
/// the weights of the epoch with the lowest mean validation MAE. Each epoch
/// is written to `log` as one JSON line when given.
TrainResult train(MultiStreamModel<float>& model, const std::vector<phantom::CineClip>& train_set,
                  const std::vector<phantom::CineClip>& val_set, const TrainConfig& config,
                  std::ostream* log = nullptr);

/// Normalised scores in inference mode, batched; order follows `clips`.
std::vector<std::array<double, 4>> predict(MultiStreamModel<float>& model, const std::vector<const phantom::CineClip*>& clips,
                                           std::size_t batch_size = 8);
std::vector<std::array<double, 4>> predict(MultiStreamModel<float>& model, const std::vector<phantom::CineClip>& clips,
                                           std::size_t batch_size = 8);

rubric::AttributeScores forward_score(MultiStreamModel<float>& model, const phantom::CineClip& clip);

// ---- evaluation ------------------------------------------------------------

struct AttributeReport {
  double mae = 0.0;
  double accuracy = 0.0;  // percent
  metrics::BoxSummary errors;  // predicted - ground truth
  std::optional<double> spearman;  // predicted score vs injected quality level
};

struct EvalReport {
  static constexpr int kVersion = 1;

  std::size_t clips = 0;
  std::array<AttributeReport, 4> attributes;
  double average_accuracy = 0.0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

EvalReport evaluate_predictions(const std::vector<std::array<double, 4>>& truth,
                                const std::vector<std::array<double, 4>>& predicted,
                                const std::vector<std::optional<phantom::QualityLevels>>& levels = {});

EvalReport evaluate(MultiStreamModel<float>& model, const std::vector<phantom::CineClip>& clips);

// ---- cross-validation ------------------------------------------------------

/// Fold index per clip: ids are sorted, shuffled by seed and cut into k
/// contiguous runs whose sizes differ by at most one.
std::vector<std::size_t> fold_assignment(const std::vector<std::string>& clip_ids, std::size_t folds, std::uint64_t seed);

struct FoldReport {
  std::size_t fold = 0;
  std::vector<std::string> validation_ids;
  EvalReport report;
  TrainResult training;
};

struct CrossValidationReport {
  std::vector<FoldReport> folds;
  std::array<double, 4> mean_mae{};
  std::array<double, 4> std_mae{};  // sample standard deviation across folds
  double mean_accuracy = 0.0;

  nlohmann::json to_json() const;
};

/// One model per fold; the held-out fold drives early stopping and is scored.
CrossValidationReport cross_validate(const std::vector<phantom::CineClip>& clips, const ModelConfig& model_config,
                                     const TrainConfig& config, std::ostream* log = nullptr);

// ---- latency ---------------------------------------------------------------

struct LatencyStats {
  std::size_t clips = 0;
  std::size_t frames = 0;  // per repetition
  std::size_t repetitions = 0;
  std::size_t batch_size = 1;
  double median_ms_per_frame = 0.0;
  double p95_ms_per_frame = 0.0;
  double frames_per_second = 0.0;  // at the median

  nlohmann::json to_json() const;
};

/// Times inference over every clip per repetition after one warm-up pass.
LatencyStats benchmark_inference(MultiStreamModel<float>& model, const std::vector<phantom::CineClip>& clips,
                                 std::size_t repetitions, std::size_t batch_size = 1);

}  // namespace echoqa::model
