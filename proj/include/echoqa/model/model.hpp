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
#include <vector>

#include <json.hpp>

#include "echoqa/nn/checkpoint.hpp"
#include "echoqa/nn/layers.hpp"
#include "echoqa/phantom/phantom.hpp"
#include "echoqa/types.hpp"

namespace echoqa::model {

struct ConvSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  bool batch_norm = true;
  bool pool = true;  // 2x2 max pool, stride 2
};

struct StreamConfig {
  Attribute attribute = Attribute::OnAxis;
  std::vector<ConvSpec> convs;
};

/// Conv depth each stream must have: four, except three for clarity.
std::size_t required_conv_depth(Attribute a);

struct ModelConfig {
  std::size_t input_channels = 3;
  std::size_t input_height = 227;
  std::size_t input_width = 227;
  std::size_t sequence_length = 20;
  std::array<StreamConfig, 4> streams;
  std::size_t lstm_layers = 2;
  std::size_t lstm_hidden = 128;
  double dropout = 0.32;
  double head_bias = 1.1;  // initial sigmoid input, about logit(0.75)

  /// Desk-scale default: a strided 5x5 stem followed by 3x3 blocks.
  static ModelConfig standard();
  /// 8x8 single-channel, 2-frame configuration for gradient checks.
  static ModelConfig tiny();

  /// Spatial size after each stream's conv stack; throws ConfigurationError if it collapses.
  std::array<std::size_t, 4> flat_features() const;
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig& a, const ModelConfig& b) { return a.to_json() == b.to_json(); }
};

/// One attribute's network: conv blocks, flatten, stacked LSTM over the
/// frame sequence, dropout on the last hidden state, dense head, sigmoid.
template <typename T>
class Stream {
 public:
  Stream(const ModelConfig& config, const StreamConfig& stream, Rng& rng);

  /// x: [batch*steps, C, H, W] with frame index b*steps + t. Returns [batch, 1].
  nn::Var<T> forward(nn::Var<T> x, std::size_t batch, std::size_t steps, nn::Mode mode, Rng* dropout_rng);

  std::vector<nn::Parameter<T>*> parameters();
  Attribute attribute() const { return attribute_; }

  std::vector<nn::Conv2dLayer<T>> convs;
  std::vector<std::optional<nn::BatchNormLayer<T>>> norms;
  std::vector<bool> pools;
  std::vector<nn::LstmLayer<T>> lstms;
  nn::DenseLayer<T> head;

 private:
  Attribute attribute_;
  double dropout_;
};

template <typename T>
class MultiStreamModel {
 public:
  MultiStreamModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }

  /// Per-attribute scores, each [batch, 1], in kAttributes order.
  std::array<nn::Var<T>, 4> forward(nn::Var<T> input, std::size_t batch, nn::Mode mode, Rng* dropout_rng = nullptr);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<nn::Parameter<T>*> stream_parameters(Attribute a);
  Stream<T>& stream(Attribute a) { return streams_[index_of(a)]; }
  std::size_t parameter_count();

  /// Weights and batch-norm running statistics as float32.
  nn::Checkpoint to_checkpoint(nlohmann::json metadata = nlohmann::json::object());
  void load_weights(const nn::Checkpoint& ckpt);

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<Stream<T>> streams_;
};

/// Replicates grayscale frames into an [clips*frames, C, H, W] tensor.
/// Clips must already have the model's frame count and input size.
template <typename T>
nn::Tensor<T> make_input(const std::vector<const phantom::CineClip*>& clips, const ModelConfig& config);

/// Rebuilds a model from a checkpoint written by to_checkpoint().
MultiStreamModel<float> load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, MultiStreamModel<float>& model,
                nlohmann::json metadata = nlohmann::json::object());

}  // namespace echoqa::model
