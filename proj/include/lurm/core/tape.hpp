// Copyright 2026 The LURM Authors.
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

#include "lurm/core/tensor.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace lurm {

template <typename Scalar>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; only valid until the
/// owning tape is reset.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, Index id) : tape_(tape), id_(id) {}

  const Mat<Scalar>& value() const { return tape_->value(id_); }
  const Mat<Scalar>& grad() const { return tape_->grad(id_); }
  Scalar scalar() const {
    if (value().size() != 1) {
      throw ShapeError("Var::scalar on " + shape_string(rows(), cols()));
    }
    return value()(0, 0);
  }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index id() const { return id_; }
  Tape<Scalar>& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  Index id_ = -1;
};

/// Linear record of a computation. Nodes are appended in evaluation order, so
/// a reverse sweep over indices is a valid topological order for backprop.
/// The tape is reset explicitly between optimizer steps.
template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<Scalar> constant(Matrix value) { return push(std::move(value), false, nullptr); }

  /// Tracked leaf; backward accumulates into `p.grad`.
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    if (!grad_enabled_) return constant(p.value);
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    Parameter<Scalar>* target = &p;
    return push(p.value, true, [target](Tape&, const Matrix& g) { target->grad += g; });
  }

  Var<Scalar> record(Matrix value, bool requires_grad, Backward backward) {
    const bool tracked = grad_enabled_ && requires_grad;
    return push(std::move(value), tracked, tracked ? std::move(backward) : Backward{});
  }

  const Matrix& value(Index id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(Index id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool requires_grad(Index id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <typename Derived>
  void accumulate(Index id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Reverse sweep from a scalar root.
  void backward(const Var<Scalar>& root) {
    if (root.value().size() != 1) {
      throw ShapeError("Tape::backward: root must be scalar, got " +
                       shape_string(root.rows(), root.cols()));
    }
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!requires_grad(root.id())) return;
    nodes_[static_cast<std::size_t>(root.id())].grad = Matrix::Ones(1, 1);
    for (Index id = root.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  void reset() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<Scalar> push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
    return Var<Scalar>(this, static_cast<Index>(nodes_.size()) - 1);
  }

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

}  // namespace lurm
