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

#include <doctest.h>

#include "lurm/core/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <vector>

using namespace lurm;

namespace {

using P = Parameter<double>;
using V = Var<double>;
using T = Tape<double>;

Mat<double> random_mat(Index r, Index c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> d(lo, hi);
  Mat<double> m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

double check(const std::function<V(T&)>& f, std::vector<P*> params) {
  return grad_check<double>(f, params, 1e-5).max_relative_error;
}

}  // namespace

TEST_CASE("sparse_dense_matvec: empty vector gives zeros") {
  std::mt19937_64 rng(1);
  const SparseVec<double> v(5);
  const auto w = random_mat(5, 4, rng);
  const auto out = sparse_dense_matvec(v, w);
  CHECK(out.size() == 4);
  CHECK(out.isZero(0));
}

TEST_CASE("sparse_dense_matvec: unit selector picks a row") {
  std::mt19937_64 rng(2);
  const SparseVec<double> v(3, {{0, 1.0}});
  const auto w = random_mat(3, 4, rng);
  CHECK((sparse_dense_matvec(v, w) - w.row(0)).norm() == 0.0);
}

TEST_CASE("sparse_dense_matvec: matches dense materialization") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<Index> dim_dist(1, 1000);
    const Index dim = dim_dist(rng);
    std::uniform_int_distribution<Index> nnz_dist(0, std::min<Index>(64, dim));
    const Index nnz = nnz_dist(rng);
    std::vector<Index> idx(static_cast<std::size_t>(dim));
    for (Index i = 0; i < dim; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::pair<Index, double>> entries;
    std::uniform_real_distribution<double> val(0.1, 3.0);
    for (Index k = 0; k < nnz; ++k) entries.emplace_back(idx[static_cast<std::size_t>(k)], val(rng));
    const SparseVec<double> v(dim, entries);
    const auto w = random_mat(dim, 8, rng);
    const Eigen::RowVectorXd dense = v.to_dense().transpose() * w;
    CHECK((sparse_dense_matvec(v, w) - dense).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("sparse_dense_matvec: dimension mismatch is rejected") {
  const SparseVec<double> v(4, {{1, 2.0}});
  CHECK_THROWS_AS(sparse_dense_matvec(v, Mat<double>(Mat<double>::Zero(5, 3))), ShapeError);
}

TEST_CASE("SparseVec invariants") {
  const SparseVec<double> v(10, {{3, 0.0}, {1, 2.0}});
  CHECK(v.nnz() == 1);
  CHECK(v.at(1) == 2.0);
  CHECK_THROWS(SparseVec<double>(4, {{4, 1.0}}));
  CHECK_THROWS(SparseVec<double>(4, {{1, 1.0}, {1, 2.0}}));
}

TEST_CASE("softmax_stable examples") {
  const std::vector<double> a{0, 0};
  const auto s = softmax_stable<double>(a);
  CHECK(s(0) == doctest::Approx(0.5));
  CHECK(s(1) == doctest::Approx(0.5));

  for (double c : {-50.0, 0.0, 7.5, 1e4}) {
    const std::vector<double> b{c, c, c};
    const auto t = softmax_stable<double>(b);
    for (Index i = 0; i < 3; ++i) CHECK(t(i) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  }

  const std::vector<double> big{1000, 0};
  const auto u = softmax_stable<double>(big);
  // extended-precision oracle: 1 / (1 + e^-1000) and e^-1000 / (1 + e^-1000)
  const long double tail = std::exp(-1000.0L);
  const long double p0 = 1.0L / (1.0L + tail);
  CHECK(std::isfinite(u(0)));
  CHECK(std::abs(static_cast<long double>(u(0)) - p0) < 1e-15L);
  CHECK(static_cast<long double>(u(1)) == doctest::Approx(static_cast<double>(tail / (1.0L + tail))));
}

TEST_CASE("softmax_stable rejects non-finite and empty input") {
  const std::vector<double> nan{0, std::numeric_limits<double>::quiet_NaN()};
  const std::vector<double> inf{std::numeric_limits<double>::infinity(), 0};
  CHECK_THROWS(softmax_stable<double>(nan));
  CHECK_THROWS(softmax_stable<double>(inf));
  CHECK_THROWS(softmax_stable<double>(std::span<const double>{}));
}

TEST_CASE("softmax_stable property: positive and sums to one") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> d(-300, 300);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> x(static_cast<std::size_t>(1 + trial % 17));
    for (auto& v : x) v = d(rng) * (trial % 3 == 0 ? 0.01 : 1.0);
    const auto s = softmax_stable<double>(x);
    CHECK(std::abs(s.sum() - 1.0) <= 1e-9);
    // strictly positive whenever the spread does not underflow double
    const double spread = *std::max_element(x.begin(), x.end()) - *std::min_element(x.begin(), x.end());
    if (spread < 700) CHECK((s.array() > 0).all());
  }
}

TEST_CASE("grad_check: x^2 at 3") {
  P x("x", Mat<double>::Constant(1, 1, 3.0));
  auto f = [&](T& t) {
    V v = t.parameter(x);
    return mul(v, v);
  };
  {
    T t;
    V y = f(t);
    t.backward(y);
    CHECK(x.grad(0, 0) == doctest::Approx(6.0));
    x.zero_grad();
  }
  CHECK(check(f, {&x}) < 1e-7);
}

TEST_CASE("grad_check: constant function has zero gradients") {
  P x("x", Mat<double>::Constant(2, 2, 1.5));
  auto f = [&](T& t) {
    t.parameter(x);
    return t.constant(Mat<double>::Constant(1, 1, 4.0));
  };
  CHECK(check(f, {&x}) == 0.0);
}

TEST_CASE("grad_check: non-finite function is rejected") {
  P x("x", Mat<double>::Constant(1, 1, 0.0));
  auto f = [&](T& t) { return scale(exp(t.parameter(x)), std::numeric_limits<double>::infinity()); };
  CHECK_THROWS_AS(grad_check<double>(f, {&x}, 1e-5), std::domain_error);
}

TEST_CASE("gradients of every primitive match finite differences") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<Index> ext(1, 5);
    const Index r = ext(rng), c = ext(rng), k = ext(rng);
    P a("a", random_mat(r, k, rng));
    P b("b", random_mat(k, c, rng));
    P bt("bt", random_mat(c, k, rng));
    P row("row", random_mat(1, c, rng));
    P col("col", random_mat(r, 1, rng));
    P pos("pos", random_mat(r, c, rng, 0.5, 2.0));
    P w("w", random_mat(6, c, rng));
    P vals("vals", random_mat(7, 1, rng));
    CooMatrix<double> pattern(r, 6);
    std::uniform_int_distribution<Index> rr(0, r - 1), cc(0, 5);
    for (int e = 0; e < 7; ++e) pattern.add(rr(rng), cc(rng), 0.7 + 0.1 * e);

    auto readout = [&](T& t, V x) {
      // weighted sum so that every output coordinate matters
      Mat<double> wm(x.rows(), x.cols());
      std::mt19937_64 fixed(17);
      for (Index i = 0; i < wm.size(); ++i) wm.data()[i] = std::uniform_real_distribution<double>(-1, 1)(fixed);
      return sum(mul(x, t.constant(wm)));
    };

    std::vector<std::pair<const char*, std::function<V(T&)>>> cases = {
        {"matmul", [&](T& t) { return readout(t, matmul(t.parameter(a), t.parameter(b))); }},
        {"matmul_transposed", [&](T& t) { return readout(t, matmul_transposed(t.parameter(a), t.parameter(bt))); }},
        {"add_row", [&](T& t) { return readout(t, add(t.parameter(pos), t.parameter(row))); }},
        {"sub_col", [&](T& t) { return readout(t, sub(t.parameter(pos), t.parameter(col))); }},
        {"mul_col", [&](T& t) { return readout(t, mul(t.parameter(pos), t.parameter(col))); }},
        {"mul_row", [&](T& t) { return readout(t, mul(t.parameter(pos), t.parameter(row))); }},
        {"sigmoid", [&](T& t) { return readout(t, sigmoid(t.parameter(pos))); }},
        {"tanh", [&](T& t) { return readout(t, tanh(t.parameter(pos))); }},
        {"exp", [&](T& t) { return readout(t, exp(t.parameter(pos))); }},
        {"log", [&](T& t) { return readout(t, log(t.parameter(pos))); }},
        {"relu", [&](T& t) { return readout(t, relu(add_scalar(t.parameter(pos), -1.2))); }},
        {"softmax_rows", [&](T& t) { return readout(t, softmax_rows(t.parameter(pos))); }},
        {"l2_normalize_rows", [&](T& t) { return readout(t, l2_normalize_rows(t.parameter(pos))); }},
        {"concat", [&](T& t) {
           V p = t.parameter(pos);
           return readout(t, concat_rows<double>({concat_cols<double>({p, p}), concat_cols<double>({p, p})}));
         }},
        {"slice_reshape", [&](T& t) {
           V p = t.parameter(pos);
           return readout(t, reshape(slice_rows(p, 0, 1), c, 1));
         }},
        {"mean", [&](T& t) { return mean(mul(t.parameter(pos), t.parameter(pos))); }},
        {"spmm_const", [&](T& t) { return readout(t, sparse_dense_matmul(pattern, t.parameter(w))); }},
        {"spmm_values", [&](T& t) {
           return readout(t, sparse_dense_matmul(pattern, t.parameter(vals), t.parameter(w)));
         }},
    };
    for (auto& [name, f] : cases) {
      CAPTURE(name);
      CAPTURE(trial);
      CHECK(check(f, {&a, &b, &bt, &row, &col, &pos, &w, &vals}) < 1e-6);
    }
  }
}

TEST_CASE("backward leaves gradients shaped like values") {
  std::mt19937_64 rng(6);
  P a("a", random_mat(3, 4, rng));
  P b("b", random_mat(4, 2, rng));
  T t;
  V y = sum(relu(matmul(t.parameter(a), t.parameter(b))));
  t.backward(y);
  CHECK(a.grad.rows() == 3);
  CHECK(a.grad.cols() == 4);
  CHECK(b.grad.rows() == 4);
  CHECK(b.grad.cols() == 2);
}

TEST_CASE("shape errors carry shapes") {
  T t;
  V a = t.constant(Mat<double>::Zero(2, 3));
  V b = t.constant(Mat<double>::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(reshape(a, 4, 2), ShapeError);
  CHECK_THROWS_AS(add(a, t.constant(Mat<double>::Zero(3, 2))), ShapeError);
  CHECK_THROWS_AS(t.backward(a), ShapeError);
}

TEST_CASE("Adam with zero learning rate leaves parameters bit-identical") {
  std::mt19937_64 rng(7);
  P a("a", random_mat(3, 3, rng));
  const Mat<double> before = a.value;
  Adam<double> opt({&a}, {.lr = 0.0});
  for (int s = 0; s < 5; ++s) {
    T t;
    t.backward(sum(mul(t.parameter(a), t.parameter(a))));
    opt.step();
  }
  CHECK(std::memcmp(before.data(), a.value.data(), sizeof(double) * 9) == 0);
}

TEST_CASE("Adam decreases a quadratic") {
  P a("a", Mat<double>::Constant(1, 2, 3.0));
  Adam<double> opt({&a}, {.lr = 0.1});
  double last = 0;
  for (int s = 0; s < 200; ++s) {
    T t;
    V y = sum(mul(t.parameter(a), t.parameter(a)));
    last = y.scalar();
    t.backward(y);
    opt.step();
  }
  CHECK(last < 1e-2);
}

TEST_CASE("tape without gradients records constants") {
  P a("a", Mat<double>::Ones(2, 2));
  T t(false);
  V y = sum(t.parameter(a));
  CHECK_FALSE(y.requires_grad());
  t.backward(y);
  CHECK(a.grad.isZero(0));
}
