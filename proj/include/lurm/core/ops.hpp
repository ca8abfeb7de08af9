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

// Differentiable primitives over Tape. Every trainable model in the library
// is composed from the functions in this file.
//
// Binary elementwise ops broadcast their second operand when it is 1x1, 1xC
// (one row repeated) or Rx1 (one column repeated).

#pragma once

#include "lurm/core/tape.hpp"

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace lurm {

namespace detail {

enum class Broadcast { kSame, kRow, kCol, kScalar };

inline Broadcast broadcast_kind(const char* op, Index ar, Index ac, Index br, Index bc) {
  if (ar == br && ac == bc) return Broadcast::kSame;
  if (br == 1 && bc == 1) return Broadcast::kScalar;
  if (br == 1 && bc == ac) return Broadcast::kRow;
  if (bc == 1 && br == ar) return Broadcast::kCol;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_string(br, bc) + " onto " +
                   shape_string(ar, ac));
}

template <typename Scalar>
Mat<Scalar> expand(const Mat<Scalar>& b, Broadcast kind, Index rows, Index cols) {
  switch (kind) {
    case Broadcast::kSame:
      return b;
    case Broadcast::kRow:
      return b.replicate(rows, 1);
    case Broadcast::kCol:
      return b.replicate(1, cols);
    case Broadcast::kScalar:
      return Mat<Scalar>::Constant(rows, cols, b(0, 0));
  }
  return b;
}

template <typename Scalar>
Mat<Scalar> reduce_to(const Mat<Scalar>& g, Broadcast kind) {
  switch (kind) {
    case Broadcast::kSame:
      return g;
    case Broadcast::kRow:
      return g.colwise().sum();
    case Broadcast::kCol:
      return g.rowwise().sum();
    case Broadcast::kScalar:
      return Mat<Scalar>::Constant(1, 1, g.sum());
  }
  return g;
}

template <typename Scalar>
Tape<Scalar>& same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands recorded on different tapes");
  return a.tape();
}

}  // namespace detail

// --- elementwise -----------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = detail::same_tape(a, b);
  const auto kind = detail::broadcast_kind("add", a.rows(), a.cols(), b.rows(), b.cols());
  Mat<Scalar> out = a.value() + detail::expand(b.value(), kind, a.rows(), a.cols());
  const Index ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib, kind](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                    tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, detail::reduce_to(g, kind));
                  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = detail::same_tape(a, b);
  const auto kind = detail::broadcast_kind("sub", a.rows(), a.cols(), b.rows(), b.cols());
  Mat<Scalar> out = a.value() - detail::expand(b.value(), kind, a.rows(), a.cols());
  const Index ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib, kind](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                    tp.accumulate(ia, g);
                    if (tp.requires_grad(ib)) tp.accumulate(ib, -detail::reduce_to(g, kind));
                  });
}

/// Hadamard product.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = detail::same_tape(a, b);
  const auto kind = detail::broadcast_kind("mul", a.rows(), a.cols(), b.rows(), b.cols());
  Mat<Scalar> bx = detail::expand(b.value(), kind, a.rows(), a.cols());
  Mat<Scalar> out = a.value().cwiseProduct(bx);
  const Index ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib, kind, bx = std::move(bx)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(bx));
                    if (tp.requires_grad(ib)) {
                      Mat<Scalar> ga = g.cwiseProduct(tp.value(ia));
                      tp.accumulate(ib, detail::reduce_to(ga, kind));
                    }
                  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar c) {
  const Index ia = a.id();
  return a.tape().record(a.value() * c, a.requires_grad(),
                         [ia, c](Tape<Scalar>& tp, const Mat<Scalar>& g) { tp.accumulate(ia, g * c); });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar c) {
  const Index ia = a.id();
  Mat<Scalar> out = a.value().array() + c;
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia](Tape<Scalar>& tp, const Mat<Scalar>& g) { tp.accumulate(ia, g); });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a) { return scale(a, Scalar(-1)); }

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  const Index ia = a.id();
  Mat<Scalar> out = a.value().cwiseMax(Scalar(0));
  return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    Mat<Scalar> gx = (tp.value(ia).array() > Scalar(0)).select(g.array(), Scalar(0)).matrix();
    tp.accumulate(ia, gx);
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
  const Index ia = a.id();
  Mat<Scalar> out = a.value().unaryExpr([](Scalar x) {
    // split by sign so exp never overflows
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
  });
  Mat<Scalar> y = out;
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, y = std::move(y)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           Mat<Scalar> gx = (g.array() * y.array() * (Scalar(1) - y.array())).matrix();
                           tp.accumulate(ia, gx);
                         });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
  const Index ia = a.id();
  Mat<Scalar> out = a.value().array().tanh();
  Mat<Scalar> y = out;
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, y = std::move(y)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           Mat<Scalar> gx = (g.array() * (Scalar(1) - y.array().square())).matrix();
                           tp.accumulate(ia, gx);
                         });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  const Index ia = a.id();
  Mat<Scalar> out = a.value().array().exp();
  Mat<Scalar> y = out;
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, y = std::move(y)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           tp.accumulate(ia, g.cwiseProduct(y));
                         });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
  if ((a.value().array() <= Scalar(0)).any()) throw std::domain_error("log: non-positive input");
  const Index ia = a.id();
  Mat<Scalar> out = a.value().array().log();
  return a.tape().record(std::move(out), a.requires_grad(), [ia](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(ia, g.cwiseQuotient(tp.value(ia)));
  });
}

// --- linear algebra -----------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_string(a.rows(), a.cols()) + " x " + shape_string(b.rows(), b.cols()));
  }
  Mat<Scalar> out = a.value() * b.value();
  const Index ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
                    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
                  });
}

/// a * b^T. The natural form for applying an (out x in) weight to row inputs.
template <typename Scalar>
Var<Scalar> matmul_transposed(const Var<Scalar>& a, const Var<Scalar>& b) {
  auto& t = detail::same_tape(a, b);
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_transposed: " + shape_string(a.rows(), a.cols()) + " x " +
                     shape_string(b.rows(), b.cols()) + "^T");
  }
  Mat<Scalar> out = a.value() * b.value().transpose();
  const Index ia = a.id(), ib = b.id();
  return t.record(std::move(out), a.requires_grad() || b.requires_grad(),
                  [ia, ib](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
                    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
                  });
}

namespace detail {

template <typename Scalar>
void check_pattern(const CooMatrix<Scalar>& s, Index dense_rows, Index dense_cols) {
  if (s.cols != dense_rows) {
    throw ShapeError("sparse_dense_matmul: sparse " + shape_string(s.rows, s.cols) + " x dense " +
                     shape_string(dense_rows, dense_cols));
  }
}

}  // namespace detail

/// S * W for a constant sparse S. Cost is nnz(S) * cols(W).
template <typename Scalar>
Var<Scalar> sparse_dense_matmul(const CooMatrix<Scalar>& s, const Var<Scalar>& w) {
  detail::check_pattern(s, w.rows(), w.cols());
  const auto& wv = w.value();
  Mat<Scalar> out = Mat<Scalar>::Zero(s.rows, w.cols());
  for (std::size_t e = 0; e < s.value.size(); ++e) out.row(s.row[e]) += s.value[e] * wv.row(s.col[e]);
  const Index iw = w.id();
  const Index wr = w.rows(), wc = w.cols();
  return w.tape().record(std::move(out), w.requires_grad(),
                         [iw, wr, wc, s](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           Mat<Scalar> gw = Mat<Scalar>::Zero(wr, wc);
                           for (std::size_t e = 0; e < s.value.size(); ++e) {
                             gw.row(s.col[e]) += s.value[e] * g.row(s.row[e]);
                           }
                           tp.accumulate(iw, gw);
                         });
}

/// S * W where the sparsity structure is fixed by `pattern` but the entry
/// values come from the differentiable column `values` (nnz x 1). The
/// pattern's own values are ignored.
template <typename Scalar>
Var<Scalar> sparse_dense_matmul(const CooMatrix<Scalar>& pattern, const Var<Scalar>& values,
                                const Var<Scalar>& w) {
  auto& t = detail::same_tape(values, w);
  detail::check_pattern(pattern, w.rows(), w.cols());
  if (values.rows() != pattern.nnz() || values.cols() != 1) {
    throw ShapeError("sparse_dense_matmul: values " + shape_string(values.rows(), values.cols()) +
                     " for pattern with nnz " + std::to_string(pattern.nnz()));
  }
  const auto& wv = w.value();
  const auto& vv = values.value();
  Mat<Scalar> out = Mat<Scalar>::Zero(pattern.rows, w.cols());
  for (std::size_t e = 0; e < pattern.row.size(); ++e) {
    out.row(pattern.row[e]) += vv(static_cast<Index>(e), 0) * wv.row(pattern.col[e]);
  }
  const Index iv = values.id(), iw = w.id();
  const Index wr = w.rows(), wc = w.cols();
  // Only the structure is needed in backward.
  CooMatrix<Scalar> structure(pattern.rows, pattern.cols);
  structure.row = pattern.row;
  structure.col = pattern.col;
  return t.record(std::move(out), values.requires_grad() || w.requires_grad(),
                  [iv, iw, wr, wc, structure = std::move(structure)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                    const auto& wv2 = tp.value(iw);
                    const auto& vv2 = tp.value(iv);
                    const std::size_t n = structure.row.size();
                    if (tp.requires_grad(iv)) {
                      Mat<Scalar> gv(static_cast<Index>(n), 1);
                      for (std::size_t e = 0; e < n; ++e) {
                        gv(static_cast<Index>(e), 0) = g.row(structure.row[e]).dot(wv2.row(structure.col[e]));
                      }
                      tp.accumulate(iv, gv);
                    }
                    if (tp.requires_grad(iw)) {
                      Mat<Scalar> gw = Mat<Scalar>::Zero(wr, wc);
                      for (std::size_t e = 0; e < n; ++e) {
                        gw.row(structure.col[e]) += vv2(static_cast<Index>(e), 0) * g.row(structure.row[e]);
                      }
                      tp.accumulate(iw, gw);
                    }
                  });
}

// --- normalization ------------------------------------------------------------

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  const auto& x = a.value();
  Mat<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  const Index ia = a.id();
  Mat<Scalar> yc = y;
  return a.tape().record(std::move(y), a.requires_grad(),
                         [ia, yc = std::move(yc)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           Mat<Scalar> gy = g.cwiseProduct(yc);
                           Vec<Scalar> dots = gy.rowwise().sum();
                           tp.accumulate(ia, gy - yc.cwiseProduct(dots.replicate(1, yc.cols())));
                         });
}

/// Row-wise x / max(||x||, 1e-12).
template <typename Scalar>
Var<Scalar> l2_normalize_rows(const Var<Scalar>& a) {
  constexpr Scalar kFloor = Scalar(1e-12);
  const auto& x = a.value();
  Vec<Scalar> norms = x.rowwise().norm().cwiseMax(kFloor);
  Mat<Scalar> y = x.array().colwise() / norms.array();
  const Index ia = a.id();
  Mat<Scalar> yc = y;
  return a.tape().record(std::move(y), a.requires_grad(),
                         [ia, yc = std::move(yc), norms = std::move(norms)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           Vec<Scalar> dots = g.cwiseProduct(yc).rowwise().sum();
                           Mat<Scalar> gx = g - yc.cwiseProduct(dots.replicate(1, yc.cols()));
                           gx.array().colwise() /= norms.array();
                           tp.accumulate(ia, gx);
                         });
}

// --- structure ------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch " + shape_string(p.rows(), p.cols()));
    cols += p.cols();
    rg = rg || p.requires_grad();
  }
  Mat<Scalar> out(rows, cols);
  std::vector<std::pair<Index, Index>> spans;  // (id, width)
  Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    spans.emplace_back(p.id(), p.cols());
    c += p.cols();
  }
  return parts.front().tape().record(std::move(out), rg,
                                     [spans = std::move(spans)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                                       Index off = 0;
                                       for (const auto& [id, w] : spans) {
                                         if (tp.requires_grad(id)) tp.accumulate(id, g.middleCols(off, w));
                                         off += w;
                                       }
                                     });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  bool rg = false;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch " + shape_string(p.rows(), p.cols()));
    rows += p.rows();
    rg = rg || p.requires_grad();
  }
  Mat<Scalar> out(rows, cols);
  std::vector<std::pair<Index, Index>> spans;
  Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    spans.emplace_back(p.id(), p.rows());
    r += p.rows();
  }
  return parts.front().tape().record(std::move(out), rg,
                                     [spans = std::move(spans)](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                                       Index off = 0;
                                       for (const auto& [id, h] : spans) {
                                         if (tp.requires_grad(id)) tp.accumulate(id, g.middleRows(off, h));
                                         off += h;
                                       }
                                     });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") of " + shape_string(a.rows(), a.cols()));
  }
  const Index ia = a.id(), rows = a.rows(), cols = a.cols();
  Mat<Scalar> out = a.value().middleRows(begin, count);
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, rows, cols, begin, count](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           Mat<Scalar> full = Mat<Scalar>::Zero(rows, cols);
                           full.middleRows(begin, count) = g;
                           tp.accumulate(ia, full);
                         });
}

/// Row-major reinterpretation of the same values.
template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Index rows, Index cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + shape_string(a.rows(), a.cols()) + " -> " + shape_string(rows, cols));
  }
  const Index ia = a.id(), r0 = a.rows(), c0 = a.cols();
  Mat<Scalar> out = Eigen::Map<const Mat<Scalar>>(a.value().data(), rows, cols);
  return a.tape().record(std::move(out), a.requires_grad(), [ia, r0, c0](Tape<Scalar>& tp, const Mat<Scalar>& g) {
    tp.accumulate(ia, Eigen::Map<const Mat<Scalar>>(g.data(), r0, c0));
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  const Index ia = a.id(), r = a.rows(), c = a.cols();
  return a.tape().record(Mat<Scalar>::Constant(1, 1, a.value().sum()), a.requires_grad(),
                         [ia, r, c](Tape<Scalar>& tp, const Mat<Scalar>& g) {
                           tp.accumulate(ia, Mat<Scalar>::Constant(r, c, g(0, 0)));
                         });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.value().size()));
}

// --- non-tape helpers -------------------------------------------------------------

/// sum_j v_j * W.row(j), touching only the stored entries of v.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sparse_dense_matvec(const SparseVec<Scalar>& v, const Mat<Scalar>& w) {
  if (v.dim() != w.rows()) {
    throw ShapeError("sparse_dense_matvec: vector dim " + std::to_string(v.dim()) + " vs matrix " +
                     shape_string(w.rows(), w.cols()));
  }
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> out = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>::Zero(w.cols());
  for (const auto& [j, x] : v.entries()) out += x * w.row(j);
  return out;
}

/// Numerically stable softmax of a finite, non-empty logit vector.
template <typename Scalar>
Vec<Scalar> softmax_stable(std::span<const Scalar> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax_stable: empty input");
  Scalar m = -std::numeric_limits<Scalar>::infinity();
  for (Scalar x : logits) {
    if (!std::isfinite(x)) throw std::invalid_argument("softmax_stable: non-finite logit");
    m = std::max(m, x);
  }
  Vec<Scalar> out(static_cast<Index>(logits.size()));
  Scalar z = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out(static_cast<Index>(i)) = std::exp(logits[i] - m);
    z += out(static_cast<Index>(i));
  }
  return out / z;
}

}  // namespace lurm
