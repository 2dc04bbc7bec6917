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

#include <cmath>
#include <cstddef>
#include <vector>

#include "echoqa/nn/tensor.hpp"

namespace echoqa::nn {

/// Step-decay schedule: base_lr * decay^floor(epoch / interval).
inline double lr_schedule(double base_lr, std::size_t epoch, double decay = 0.1,
                          std::size_t interval = 15) {
  if (interval == 0) throw ConfigurationError("lr_schedule interval must be positive");
  return base_lr * std::pow(decay, static_cast<double>(epoch / interval));
}

struct AdamConfig {
  double base_lr = 2e-4;
  double beta1 = 0.95;  // "momentum"
  double beta2 = 0.999;
  double eps = 1e-8;
  double decay = 0.1;
  std::size_t decay_interval = 15;  // epochs
};

template <typename T>
struct OptimizerState {
  AdamConfig config;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
  std::size_t step = 0;
};

/// ADAM with bias correction over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig config) : params_(std::move(params)) {
    state_.config = config;
    for (auto* p : params_) {
      state_.first_moment.emplace_back(p->value.shape());
      state_.second_moment.emplace_back(p->value.shape());
    }
  }

  /// Applies one update with the given learning rate using each parameter's grad.
  void step(double lr) {
    const auto& c = state_.config;
    ++state_.step;
    const double t = static_cast<double>(state_.step);
    const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
    const T corr1 = static_cast<T>(1.0 - std::pow(c.beta1, t));
    const T corr2 = static_cast<T>(1.0 - std::pow(c.beta2, t));
    const T rate = static_cast<T>(lr), eps = static_cast<T>(c.eps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = state_.first_moment[k];
      auto& v = state_.second_moment[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const T g = p.grad[i];
        m[i] = b1 * m[i] + (T(1) - b1) * g;
        v[i] = b2 * v[i] + (T(1) - b2) * g * g;
        const T mhat = m[i] / corr1;
        const T vhat = v[i] / corr2;
        p.value[i] -= rate * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  double lr_for_epoch(std::size_t epoch) const {
    const auto& c = state_.config;
    return lr_schedule(c.base_lr, epoch, c.decay, c.decay_interval);
  }

  const OptimizerState<T>& state() const { return state_; }
  OptimizerState<T>& state() { return state_; }

 private:
  std::vector<Parameter<T>*> params_;
  OptimizerState<T> state_;
};

}  // namespace echoqa::nn
