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

#include <string>
#include <vector>

#include "echoqa/nn/ops.hpp"
#include "echoqa/rng.hpp"

namespace echoqa::nn {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// 2D convolution with He-uniform initialised kernels.
template <typename T>
struct Conv2dLayer {
  Parameter<T> weight;  // [out, in, k, k]
  Parameter<T> bias;    // [out]
  ConvGeometry geometry;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
              ConvGeometry g, Rng& rng)
      : weight(name + ".weight",
               uniform_tensor<T>({out, in, kernel, kernel}, std::sqrt(6.0 / double(in * kernel * kernel)), rng)),
        bias(name + ".bias", Tensor<T>(Shape{out})),
        geometry(g) {}

  Var<T> forward(Var<T> x) {
    auto& tape = x.tape();
    return conv2d(x, tape.parameter(weight), tape.parameter(bias), geometry);
  }
  std::vector<Parameter<T>*> parameters() { return {&weight, &bias}; }
};

template <typename T>
struct BatchNormLayer {
  Parameter<T> gamma;
  Parameter<T> beta;
  BatchNormStats<T> stats;
  T eps = T(1e-5);

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, std::size_t channels, T momentum = T(0.9))
      : gamma(name + ".gamma", Tensor<T>(Shape{channels}, T(1))),
        beta(name + ".beta", Tensor<T>(Shape{channels})) {
    stats.momentum = momentum;
  }

  Var<T> forward(Var<T> x, Mode mode) {
    auto& tape = x.tape();
    return batchnorm(x, tape.parameter(gamma), tape.parameter(beta), stats, mode, eps);
  }
  std::vector<Parameter<T>*> parameters() { return {&gamma, &beta}; }
};

/// Affine map y = W x + b over the rows of a [N, in] input.
template <typename T>
struct DenseLayer {
  Parameter<T> weight;  // [out, in]
  Parameter<T> bias;    // [out]

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
      : weight(name + ".weight", uniform_tensor<T>({out, in}, 1.0 / std::sqrt(double(in)), rng)),
        bias(name + ".bias", Tensor<T>(Shape{out})) {}

  Var<T> forward(Var<T> x) {
    auto& tape = x.tape();
    return linear(x, tape.parameter(weight), tape.parameter(bias));
  }
  std::vector<Parameter<T>*> parameters() { return {&weight, &bias}; }
};

template <typename T>
struct LstmState {
  Var<T> h;
  Var<T> c;
};

/// One LSTM cell update.
///
/// weight is [4H, in+H] acting on [x_t, h_prev]; gate blocks are ordered
/// input, forget, candidate, output.
///   c_t = f * c_prev + i * g,  h_t = o * tanh(c_t)
template <typename T>
LstmState<T> lstm_step(Var<T> x, Var<T> h_prev, Var<T> c_prev, Var<T> weight, Var<T> bias) {
  const std::size_t hidden = h_prev.shape().back();
  if (c_prev.shape() != h_prev.shape() || weight.shape()[0] != 4 * hidden ||
      bias.value().size() != 4 * hidden) {
    throw ConfigurationError("lstm_step: inconsistent hidden sizes");
  }
  auto z = linear(concat_cols(x, h_prev), weight, bias);
  auto i = sigmoid(slice_cols(z, 0, hidden));
  auto f = sigmoid(slice_cols(z, hidden, hidden));
  auto g = tanh(slice_cols(z, 2 * hidden, hidden));
  auto o = sigmoid(slice_cols(z, 3 * hidden, hidden));
  auto c = add(mul(f, c_prev), mul(i, g));
  auto h = mul(o, tanh(c));
  return {h, c};
}

template <typename T>
struct LstmLayer {
  Parameter<T> weight;  // [4H, in+H]
  Parameter<T> bias;    // [4H]
  std::size_t input_size = 0;
  std::size_t hidden = 0;

  LstmLayer() = default;
  LstmLayer(const std::string& name, std::size_t in, std::size_t hidden_size, Rng& rng)
      : weight(name + ".weight",
               uniform_tensor<T>({4 * hidden_size, in + hidden_size}, 1.0 / std::sqrt(double(hidden_size)), rng)),
        bias(name + ".bias", Tensor<T>(Shape{4 * hidden_size})),
        input_size(in),
        hidden(hidden_size) {
    // Forget-gate bias starts at 1 so early training keeps cell memory.
    for (std::size_t j = hidden; j < 2 * hidden; ++j) bias.value[j] = T(1);
  }

  /// Runs the layer over inputs[t] ([B, in] each) from zero state; returns h_t per step.
  std::vector<Var<T>> forward(const std::vector<Var<T>>& inputs) {
    auto& tape = inputs.front().tape();
    const std::size_t batch = inputs.front().shape()[0];
    auto w = tape.parameter(weight);
    auto b = tape.parameter(bias);
    LstmState<T> state{tape.constant(Tensor<T>(Shape{batch, hidden})),
                       tape.constant(Tensor<T>(Shape{batch, hidden}))};
    std::vector<Var<T>> outputs;
    outputs.reserve(inputs.size());
    for (const auto& x : inputs) {
      state = lstm_step(x, state.h, state.c, w, b);
      outputs.push_back(state.h);
    }
    return outputs;
  }
  std::vector<Parameter<T>*> parameters() { return {&weight, &bias}; }
};

}  // namespace echoqa::nn
