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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lurm {

using Index = Eigen::Index;

/// Dense storage used throughout: row-major so that one row is one item, one
/// interest, one anchor stream or one view.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

#ifdef LURM_SINGLE_PRECISION
using Real = float;
#else
using Real = double;
#endif

using MatR = Mat<Real>;
using VecR = Vec<Real>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::string shape_string(Index rows, Index cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

/// A named learnable matrix. The gradient buffer persists across tape resets
/// and is cleared by the optimizer.
template <typename Scalar>
struct Parameter {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;

  Parameter() = default;
  Parameter(std::string n, Mat<Scalar> v)
      : name(std::move(n)), value(std::move(v)), grad(Mat<Scalar>::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
  Index size() const { return value.size(); }
};

/// Coordinate-format sparse matrix. Entry order is preserved, which lets a
/// differentiable value vector line up with the pattern entry by entry.
template <typename Scalar>
struct CooMatrix {
  Index rows = 0;
  Index cols = 0;
  std::vector<Index> row;
  std::vector<Index> col;
  std::vector<Scalar> value;

  CooMatrix() = default;
  CooMatrix(Index r, Index c) : rows(r), cols(c) {}

  void add(Index r, Index c, Scalar v) {
    if (r < 0 || r >= rows || c < 0 || c >= cols) {
      throw ShapeError("CooMatrix::add: entry (" + std::to_string(r) + "," + std::to_string(c) +
                       ") outside " + shape_string(rows, cols));
    }
    row.push_back(r);
    col.push_back(c);
    value.push_back(v);
  }
  void reserve(std::size_t n) {
    row.reserve(n);
    col.reserve(n);
    value.reserve(n);
  }
  Index nnz() const { return static_cast<Index>(value.size()); }
};

/// Sparse vector with sorted, unique, nonzero entries.
template <typename Scalar>
class SparseVec {
 public:
  using Entry = std::pair<Index, Scalar>;

  SparseVec() = default;
  explicit SparseVec(Index dim) : dim_(dim) {
    if (dim <= 0) throw std::invalid_argument("SparseVec: dimension must be positive");
  }
  SparseVec(Index dim, std::vector<Entry> entries) : SparseVec(dim) {
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.first < b.first; });
    Index last = -1;
    for (const auto& [i, v] : entries) {
      if (i < 0 || i >= dim_) {
        throw std::out_of_range("SparseVec: index " + std::to_string(i) + " outside dim " +
                                std::to_string(dim_));
      }
      if (i == last) {
        throw std::invalid_argument("SparseVec: duplicate index " + std::to_string(i));
      }
      last = i;
      if (v != Scalar(0)) entries_.emplace_back(i, v);
    }
  }

  Index dim() const { return dim_; }
  Index nnz() const { return static_cast<Index>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const std::vector<Entry>& entries() const { return entries_; }

  Scalar at(Index i) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), i,
                               [](const Entry& e, Index k) { return e.first < k; });
    return (it != entries_.end() && it->first == i) ? it->second : Scalar(0);
  }

  Vec<Scalar> to_dense() const {
    Vec<Scalar> out = Vec<Scalar>::Zero(dim_);
    for (const auto& [i, v] : entries_) out(i) = v;
    return out;
  }

  friend bool operator==(const SparseVec& a, const SparseVec& b) {
    return a.dim_ == b.dim_ && a.entries_ == b.entries_;
  }

 private:
  Index dim_ = 0;
  std::vector<Entry> entries_;
};

using SparseVector = SparseVec<Real>;

}  // namespace lurm
