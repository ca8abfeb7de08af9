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

#include "lurm/core/tape.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lurm {

template <typename Scalar>
struct GradCheckResult {
  Scalar max_relative_error = 0;
  std::string worst_parameter;
};

/// Compares reverse-mode gradients against central differences.
///
/// `build` records a scalar loss on the given tape from the current values of
/// `params`. For every parameter tensor the error is
/// ||autodiff - fd|| / (||fd|| + 1e-8) with L2 norms over the tensor; the
/// maximum over tensors is returned.
template <typename Scalar>
GradCheckResult<Scalar> grad_check(const std::function<Var<Scalar>(Tape<Scalar>&)>& build,
                                   const std::vector<Parameter<Scalar>*>& params, Scalar eps) {
  auto evaluate = [&build]() {
    Tape<Scalar> tape(false);
    const Scalar f = build(tape).scalar();
    if (!std::isfinite(f)) throw std::domain_error("grad_check: non-finite function value");
    return f;
  };

  for (auto* p : params) p->zero_grad();
  {
    Tape<Scalar> tape;
    Var<Scalar> loss = build(tape);
    if (!std::isfinite(loss.scalar())) throw std::domain_error("grad_check: non-finite function value");
    tape.backward(loss);
  }

  GradCheckResult<Scalar> result;
  for (auto* p : params) {
    Mat<Scalar> fd(p->value.rows(), p->value.cols());
    for (Index i = 0; i < p->value.size(); ++i) {
      Scalar& x = p->value.data()[i];
      const Scalar saved = x;
      x = saved + eps;
      const Scalar fp = evaluate();
      x = saved - eps;
      const Scalar fm = evaluate();
      x = saved;
      fd.data()[i] = (fp - fm) / (Scalar(2) * eps);
    }
    const Scalar err = (p->grad - fd).norm() / (fd.norm() + Scalar(1e-8));
    if (result.worst_parameter.empty() || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = p->name;
    }
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

}  // namespace lurm
