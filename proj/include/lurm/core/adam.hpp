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

#include <cmath>
#include <vector>

namespace lurm {

/// Adam with bias correction. Gradients are read from Parameter::grad and
/// cleared after each step.
template <typename Scalar>
class Adam {
 public:
  struct Options {
    Scalar lr = Scalar(1e-3);
    Scalar beta1 = Scalar(0.9);
    Scalar beta2 = Scalar(0.999);
    Scalar eps = Scalar(1e-8);
  };

  Adam(std::vector<Parameter<Scalar>*> params, Options opts) : params_(std::move(params)), opts_(opts) {
    for (auto* p : params_) {
      m_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const Scalar c1 = Scalar(1) - std::pow(opts_.beta1, static_cast<Scalar>(t_));
    const Scalar c2 = Scalar(1) - std::pow(opts_.beta2, static_cast<Scalar>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      m_[k] = opts_.beta1 * m_[k] + (Scalar(1) - opts_.beta1) * p.grad;
      v_[k] = opts_.beta2 * v_[k] + (Scalar(1) - opts_.beta2) * p.grad.cwiseProduct(p.grad);
      p.value.array() -= opts_.lr * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + opts_.eps);
    }
    zero_grad();
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  long steps() const { return t_; }

 private:
  std::vector<Parameter<Scalar>*> params_;
  Options opts_;
  std::vector<Mat<Scalar>> m_;
  std::vector<Mat<Scalar>> v_;
  long t_ = 0;
};

}  // namespace lurm
