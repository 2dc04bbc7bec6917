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
#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "echoqa/nn/tensor.hpp"

namespace echoqa::nn {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records a forward computation so that backward() can replay it in reverse.
///
/// Nodes are appended in evaluation order, so reverse insertion order is a
/// valid topological order for the backward sweep. A tape is single-use: after
/// backward() it must be reset() before the next forward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  /// A leaf whose gradient is kept on the tape (inputs under test).
  Var<T> variable(Tensor<T> value) { return push(std::move(value), record_, nullptr); }

  Var<T> parameter(Parameter<T>& p) {
    auto v = push(p.value, record_, nullptr);
    nodes_[v.id()].param = &p;
    return v;
  }

  /// Appends an op result. The backward closure is dropped when no input
  /// needs a gradient or the tape is not recording.
  Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (const auto& in : inputs) needs = needs || nodes_[in.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  Var<T> emit(Tensor<T> value, const std::vector<std::size_t>& input_ids, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (auto id : input_ids) needs = needs || nodes_[id].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.has_value(); }

  /// Gradient slot of a node, allocated as zeros on first access.
  Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (!n.grad) n.grad.emplace(n.value.shape());
    return *n.grad;
  }

  /// Gradient of a leaf after backward(); zeros if nothing reached it.
  const Tensor<T>& gradient(Var<T> v) { return grad(v.id()); }

  void backward(Var<T> loss) {
    if (!record_) throw StateError("backward on a tape that is not recording");
    if (done_) throw StateError("backward called twice without a new forward pass");
    if (loss.value().size() != 1) throw ConfigurationError("backward requires a scalar loss");
    grad(loss.id())[0] = T(1);
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (!n.grad || !n.requires_grad) continue;
      if (n.backward) n.backward(*this, id);
      if (n.param) {
        auto& pg = n.param->grad;
        const auto& g = *n.grad;
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      }
    }
    done_ = true;
  }

  void reset() {
    nodes_.clear();
    done_ = false;
  }

 private:
  struct Node {
    Tensor<T> value;
    std::optional<Tensor<T>> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), std::nullopt, std::move(fn), nullptr, requires_grad});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;
  bool record_;
  bool done_ = false;
};

}  // namespace echoqa::nn
