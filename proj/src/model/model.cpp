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

#include "echoqa/model/model.hpp"

#include <cmath>
#include <string>

namespace echoqa::model {

using nlohmann::json;
using nn::Mode;
using nn::Tensor;
using nn::Var;

std::size_t required_conv_depth(Attribute a) { return a == Attribute::LVClarity ? 3 : 4; }

ModelConfig ModelConfig::standard() {
  ModelConfig c;
  for (auto a : kAttributes) {
    auto& s = c.streams[index_of(a)];
    s.attribute = a;
    s.convs = {{8, 5, 4, 2, true, true}, {16, 3, 1, 1, true, true}, {16, 3, 1, 1, true, true}};
    if (required_conv_depth(a) == 4) s.convs.push_back({16, 3, 1, 1, true, false});
  }
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.input_channels = 1;
  c.input_height = c.input_width = 8;
  c.sequence_length = 2;
  c.lstm_hidden = 3;
  for (auto a : kAttributes) {
    auto& s = c.streams[index_of(a)];
    s.attribute = a;
    s.convs = {{2, 3, 1, 1, true, true}, {2, 3, 1, 1, true, true}, {2, 3, 1, 1, true, false}};
    if (required_conv_depth(a) == 4) s.convs.push_back({2, 3, 1, 1, true, false});
  }
  return c;
}

std::array<std::size_t, 4> ModelConfig::flat_features() const {
  std::array<std::size_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    std::size_t h = input_height, w = input_width, c = input_channels;
    for (const auto& cv : streams[i].convs) {
      if (cv.kernel == 0 || cv.stride == 0 || cv.out_channels == 0) {
        throw ConfigurationError("conv kernel, stride and channels must be positive");
      }
      if (h + 2 * cv.pad < cv.kernel || w + 2 * cv.pad < cv.kernel) {
        throw ConfigurationError(std::string(attribute_key(streams[i].attribute)) +
                                 " stream: conv stack reduces the spatial size below 1");
      }
      h = nn::conv_output_size(h, cv.kernel, cv.stride, cv.pad);
      w = nn::conv_output_size(w, cv.kernel, cv.stride, cv.pad);
      if (cv.pool) {
        h /= 2;
        w /= 2;
      }
      if (h == 0 || w == 0) {
        throw ConfigurationError(std::string(attribute_key(streams[i].attribute)) +
                                 " stream: conv stack reduces the spatial size below 1");
      }
      c = cv.out_channels;
    }
    out[i] = c * h * w;
  }
  return out;
}

void ModelConfig::validate() const {
  if (input_channels == 0 || input_height == 0 || input_width == 0) throw ConfigurationError("input dims must be positive");
  if (sequence_length == 0) throw ConfigurationError("sequence length must be positive");
  if (lstm_layers == 0 || lstm_hidden == 0) throw ConfigurationError("LSTM layers and hidden size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigurationError("dropout must lie in [0,1)");
  if (!std::isfinite(head_bias)) throw ConfigurationError("head bias must be finite");
  for (auto a : kAttributes) {
    const auto& s = streams[index_of(a)];
    if (s.attribute != a) throw ConfigurationError("streams must be listed in attribute order");
    if (s.convs.size() != required_conv_depth(a)) {
      throw ConfigurationError(std::string(attribute_key(a)) + " stream needs " + std::to_string(required_conv_depth(a)) +
                               " conv layers, got " + std::to_string(s.convs.size()));
    }
  }
  flat_features();
}

json ModelConfig::to_json() const {
  json streams_j = json::array();
  for (const auto& s : streams) {
    json convs = json::array();
    for (const auto& c : s.convs) {
      convs.push_back({{"out_channels", c.out_channels}, {"kernel", c.kernel}, {"stride", c.stride},
                       {"pad", c.pad}, {"batch_norm", c.batch_norm}, {"pool", c.pool}});
    }
    streams_j.push_back({{"attribute", attribute_key(s.attribute)}, {"convs", convs}});
  }
  return {{"input", {input_channels, input_height, input_width}},
          {"sequence_length", sequence_length},
          {"streams", streams_j},
          {"lstm_layers", lstm_layers},
          {"lstm_hidden", lstm_hidden},
          {"dropout", dropout},
          {"head_bias", head_bias}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  try {
    const auto in = j.at("input");
    c.input_channels = in.at(0).get<std::size_t>();
    c.input_height = in.at(1).get<std::size_t>();
    c.input_width = in.at(2).get<std::size_t>();
    c.sequence_length = j.at("sequence_length").get<std::size_t>();
    c.lstm_layers = j.at("lstm_layers").get<std::size_t>();
    c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.head_bias = j.value("head_bias", 0.0);
    const auto& sj = j.at("streams");
    if (sj.size() != 4) throw ConfigurationError("model config needs exactly four streams");
    for (std::size_t i = 0; i < 4; ++i) {
      c.streams[i].attribute = parse_attribute(sj[i].at("attribute").get<std::string>());
      for (const auto& cv : sj[i].at("convs")) {
        c.streams[i].convs.push_back({cv.at("out_channels").get<std::size_t>(), cv.at("kernel").get<std::size_t>(),
                                      cv.at("stride").get<std::size_t>(), cv.at("pad").get<std::size_t>(),
                                      cv.at("batch_norm").get<bool>(), cv.at("pool").get<bool>()});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("malformed model config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigurationError(std::string("malformed model config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---- stream ----------------------------------------------------------------

template <typename T>
Stream<T>::Stream(const ModelConfig& config, const StreamConfig& stream, Rng& rng)
    : attribute_(stream.attribute), dropout_(config.dropout) {
  const std::string prefix(attribute_key(stream.attribute));
  std::size_t in = config.input_channels;
  for (std::size_t i = 0; i < stream.convs.size(); ++i) {
    const auto& cv = stream.convs[i];
    const std::string name = prefix + ".conv" + std::to_string(i);
    convs.emplace_back(name, in, cv.out_channels, cv.kernel, nn::ConvGeometry{cv.stride, cv.pad}, rng);
    if (cv.batch_norm) {
      nn::BatchNormLayer<T> bn(prefix + ".bn" + std::to_string(i), cv.out_channels);
      // Identity statistics so an untrained model can still run inference.
      bn.stats.running_mean = Tensor<T>(nn::Shape{cv.out_channels});
      bn.stats.running_var = Tensor<T>(nn::Shape{cv.out_channels}, T(1));
      norms.emplace_back(std::move(bn));
    } else {
      norms.emplace_back(std::nullopt);
    }
    pools.push_back(cv.pool);
    in = cv.out_channels;
  }
  std::size_t features = config.flat_features()[index_of(stream.attribute)];
  for (std::size_t l = 0; l < config.lstm_layers; ++l) {
    lstms.emplace_back(prefix + ".lstm" + std::to_string(l), features, config.lstm_hidden, rng);
    features = config.lstm_hidden;
  }
  head = nn::DenseLayer<T>(prefix + ".head", features, 1, rng);
  head.bias.value[0] = static_cast<T>(config.head_bias);
}

template <typename T>
Var<T> Stream<T>::forward(Var<T> x, std::size_t batch, std::size_t steps, Mode mode, Rng* dropout_rng) {
  Var<T> h = x;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    h = convs[i].forward(h);
    if (norms[i]) h = norms[i]->forward(h, mode);
    h = nn::relu(h);
    if (pools[i]) h = nn::maxpool2d(h, 2, 2);
  }
  const auto& s = h.shape();
  h = nn::reshape(h, {s[0], s[1] * s[2] * s[3]});
  std::vector<Var<T>> seq;
  seq.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) seq.push_back(nn::sequence_step(h, batch, steps, t));
  for (auto& lstm : lstms) seq = lstm.forward(seq);
  Var<T> last = seq.back();
  if (mode == Mode::train && dropout_rng && dropout_ > 0.0) {
    // Inverted dropout: kept units are rescaled so inference needs no change.
    Tensor<T> mask(last.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - dropout_));
    for (auto& m : mask.data()) m = dropout_rng->uniform() < dropout_ ? T(0) : keep_scale;
    last = nn::apply_mask(last, mask);
  }
  return nn::sigmoid(head.forward(last));
}

template <typename T>
std::vector<nn::Parameter<T>*> Stream<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  auto append = [&](std::vector<nn::Parameter<T>*> ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  for (std::size_t i = 0; i < convs.size(); ++i) {
    append(convs[i].parameters());
    if (norms[i]) append(norms[i]->parameters());
  }
  for (auto& l : lstms) append(l.parameters());
  append(head.parameters());
  return out;
}

// ---- model -----------------------------------------------------------------

template <typename T>
MultiStreamModel<T>::MultiStreamModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  config_.validate();
  streams_.reserve(4);
  for (auto a : kAttributes) {
    // Streams draw from independent generators so each can be rebuilt alone.
    Rng rng(mix_seed(seed, 100 + index_of(a)));
    streams_.emplace_back(config_, config_.streams[index_of(a)], rng);
  }
}

template <typename T>
std::array<Var<T>, 4> MultiStreamModel<T>::forward(Var<T> input, std::size_t batch, Mode mode, Rng* dropout_rng) {
  const auto& s = input.shape();
  if (s.size() != 4 || s[0] != batch * config_.sequence_length || s[1] != config_.input_channels ||
      s[2] != config_.input_height || s[3] != config_.input_width) {
    throw ValidationError("model input must be [" + std::to_string(batch * config_.sequence_length) + "," +
                          std::to_string(config_.input_channels) + "," + std::to_string(config_.input_height) + "," +
                          std::to_string(config_.input_width) + "], got " + nn::shape_str(s));
  }
  std::array<Var<T>, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = streams_[i].forward(input, batch, config_.sequence_length, mode, dropout_rng);
  }
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> MultiStreamModel<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  for (auto& s : streams_) {
    auto ps = s.parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

template <typename T>
std::vector<nn::Parameter<T>*> MultiStreamModel<T>::stream_parameters(Attribute a) {
  return streams_[index_of(a)].parameters();
}

template <typename T>
std::size_t MultiStreamModel<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

namespace {

template <typename T>
std::vector<float> to_float(const Tensor<T>& t) {
  return std::vector<float>(t.data().begin(), t.data().end());
}

template <typename T>
void assign(Tensor<T>& dst, const nn::NamedArray& src) {
  if (src.shape != dst.shape()) {
    throw IoError("checkpoint tensor '" + src.name + "' has shape " + nn::shape_str(src.shape) + ", model expects " +
                  nn::shape_str(dst.shape()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src.data[i]);
}

}  // namespace

template <typename T>
nn::Checkpoint MultiStreamModel<T>::to_checkpoint(json metadata) {
  nn::Checkpoint ck;
  ck.metadata = std::move(metadata);
  ck.metadata["model_config"] = config_.to_json();
  ck.metadata["seed"] = seed_;
  for (auto* p : parameters()) ck.arrays.push_back({p->name, p->value.shape(), to_float(p->value)});
  for (auto& s : streams_) {
    for (auto& n : s.norms) {
      if (!n) continue;
      const std::string base = n->gamma.name.substr(0, n->gamma.name.rfind('.'));
      ck.arrays.push_back({base + ".running_mean", n->stats.running_mean.shape(), to_float(n->stats.running_mean)});
      ck.arrays.push_back({base + ".running_var", n->stats.running_var.shape(), to_float(n->stats.running_var)});
    }
  }
  return ck;
}

template <typename T>
void MultiStreamModel<T>::load_weights(const nn::Checkpoint& ck) {
  if (ck.metadata.contains("model_config") && ModelConfig::from_json(ck.metadata.at("model_config")) != config_) {
    throw IoError("checkpoint was written for a different model configuration");
  }
  for (auto* p : parameters()) assign(p->value, ck.find(p->name));
  for (auto& s : streams_) {
    for (auto& n : s.norms) {
      if (!n) continue;
      const std::string base = n->gamma.name.substr(0, n->gamma.name.rfind('.'));
      n->stats.ready = true;
      assign(n->stats.running_mean, ck.find(base + ".running_mean"));
      assign(n->stats.running_var, ck.find(base + ".running_var"));
    }
  }
}

template <typename T>
Tensor<T> make_input(const std::vector<const phantom::CineClip*>& clips, const ModelConfig& config) {
  const std::size_t hw = config.input_height * config.input_width;
  Tensor<T> x({clips.size() * config.sequence_length, config.input_channels, config.input_height, config.input_width});
  T* out = x.raw();
  for (const auto* clip : clips) {
    if (clip->frames.size() != config.sequence_length) {
      throw ValidationError("clip " + clip->clip_id + " has " + std::to_string(clip->frames.size()) +
                            " frames, model expects " + std::to_string(config.sequence_length));
    }
    for (const auto& f : clip->frames) {
      if (f.width() != config.input_width || f.height() != config.input_height) {
        throw ValidationError("clip " + clip->clip_id + " frame size " + std::to_string(f.width()) + "x" +
                              std::to_string(f.height()) + " does not match the model input");
      }
      for (std::size_t c = 0; c < config.input_channels; ++c) {
        std::copy(f.pixels().begin(), f.pixels().end(), out);
        out += hw;
      }
    }
  }
  return x;
}

MultiStreamModel<float> load_model(const std::filesystem::path& path) {
  const auto ck = nn::load_checkpoint(path);
  if (!ck.metadata.contains("model_config")) throw IoError(path.string() + " carries no model configuration");
  MultiStreamModel<float> m(ModelConfig::from_json(ck.metadata.at("model_config")),
                            ck.metadata.value("seed", std::uint64_t{0}));
  m.load_weights(ck);
  return m;
}

void save_model(const std::filesystem::path& path, MultiStreamModel<float>& model, json metadata) {
  nn::save_checkpoint(path, model.to_checkpoint(std::move(metadata)));
}

template class Stream<float>;
template class Stream<double>;
template class MultiStreamModel<float>;
template class MultiStreamModel<double>;
template Tensor<float> make_input<float>(const std::vector<const phantom::CineClip*>&, const ModelConfig&);
template Tensor<double> make_input<double>(const std::vector<const phantom::CineClip*>&, const ModelConfig&);

}  // namespace echoqa::model
