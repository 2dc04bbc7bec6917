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

#include <cstddef>
#include <cstdint>
#include <vector>

#include "echoqa/nn/tape.hpp"

namespace echoqa::nn {

enum class Mode { train, infer };

/// Geometry of a 2D convolution over NCHW input.
struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

/// Output spatial size: floor((in + 2*pad - kernel) / stride) + 1.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t pad);

template <typename T>
T sigmoid_scalar(T x) {
  // Branch on sign so exp() never overflows.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

namespace kernels {

/// im2col + GEMM convolution. x: [N,C,H,W] (or [C,H,W]), w: [K,C,kh,kw], b: [K].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, ConvGeometry g);

/// Direct nested-loop convolution; the checkable reference for conv2d().
template <typename T>
Tensor<T> conv2d_reference(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           ConvGeometry g);

/// Accumulates input, weight and bias gradients for dy = d(loss)/d(conv2d(x,w,b)).
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, ConvGeometry g,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

/// Max pooling; argmax receives the flat input index chosen for every output
/// cell (first maximum in row-major window order).
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t window, std::size_t stride,
                    std::vector<std::size_t>* argmax);

}  // namespace kernels

/// Running statistics of a batch-normalization layer.
template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool ready = false;  // until set, the next training update copies the batch statistics
  T momentum = T(0.9);
};

// Differentiable ops. Every result lives on the tape of its first argument.

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, ConvGeometry g);
template <typename T>
Var<T> maxpool2d(Var<T> x, std::size_t window = 2, std::size_t stride = 2);
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& stats, Mode mode,
                 T eps = T(1e-5));
template <typename T>
Var<T> relu(Var<T> x);
template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh(Var<T> x);
/// y = x * w^T + b, x: [N,in], w: [out,in], b: [out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, T factor);
/// Columns [begin, begin+count) of a 2D tensor.
template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);
template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
/// Rows {b*steps + t : b < batch} of a [batch*steps, F] tensor.
template <typename T>
Var<T> sequence_step(Var<T> x, std::size_t batch, std::size_t steps, std::size_t t);
/// Elementwise multiply by a fixed mask (inverted dropout scaling baked in).
template <typename T>
Var<T> apply_mask(Var<T> x, const Tensor<T>& mask);
/// Mean absolute error against a constant target of the same size.
template <typename T>
Var<T> l1_loss(Var<T> pred, const Tensor<T>& target);
template <typename T>
Var<T> sum(Var<T> x);
/// Weighted sum of scalar nodes.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights);

}  // namespace echoqa::nn
