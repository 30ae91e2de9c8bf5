/* Copyright 2026 The EF-Net Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef EFNET_OPS_HPP_
#define EFNET_OPS_HPP_

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "efnet/error.hpp"
#include "efnet/tensor.hpp"

namespace efnet {

// 1 marks a real (attendable) position, 0 a masked one. An empty mask means
// every position is valid.
using Mask = std::vector<std::uint8_t>;
using MaskView = std::span<const std::uint8_t>;

namespace detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> inputs) {
  Tape<T>* tape = nullptr;
  for (const auto* t : inputs) {
    if (!t->on_tape()) continue;
    if (tape != nullptr && tape != t->tape()) {
      throw TapeError("inputs are recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

template <typename T>
Tape<T>* common_tape(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = nullptr;
  for (const auto& t : inputs) {
    if (!t.on_tape()) continue;
    if (tape != nullptr && tape != t.tape()) {
      throw TapeError("inputs are recorded on different tapes");
    }
    tape = t.tape();
  }
  return tape;
}

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + " expects rank " +
                         std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Dot product with independent partial sums so the loop vectorizes
// without reassociation flags.
template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  T part[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) part[l] += x[i + l] * y[i + l];
  T acc = T(0);
  for (; i < n; ++i) acc += x[i] * y[i];
  for (std::size_t l = 0; l < kLanes; ++l) acc += part[l];
  return acc;
}

// c[r x n] += a[r x k] * b[k x n], four reduction steps per pass over a
// row of c.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t r, std::size_t k,
             std::size_t n) {
  // Narrow outputs over long reductions: dot products against columns.
  if (n <= 8 && k >= 64) {
    std::vector<T> bt(n * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < n; ++j)
        c[i * n + j] += dot(a + i * k, bt.data() + j * k, k);
    return;
  }
  for (std::size_t i = 0; i < r; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    std::size_t p = 0;
    for (; p + 4 <= k; p += 4) {
      const T a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2],
              a3 = arow[p + 3];
      const T* b0 = b + p * n;
      const T* b1 = b0 + n;
      const T* b2 = b1 + n;
      const T* b3 = b2 + n;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
    }
    for (; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[r x k] += g[r x n] * b[k x n]^T
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t r, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < r; ++i) {
    const T* grow = g + i * n;
    T* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      crow[p] += dot(grow, brow, n);
    }
  }
}

// c[k x n] += a[r x k]^T * g[r x n]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t r, std::size_t k,
             std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    T* crow = c + p * n;
    std::size_t i = 0;
    for (; i + 4 <= r; i += 4) {
      const T a0 = a[i * k + p], a1 = a[(i + 1) * k + p],
              a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
      const T* g0 = g + i * n;
      const T* g1 = g0 + n;
      const T* g2 = g1 + n;
      const T* g3 = g2 + n;
      for (std::size_t j = 0; j < n; ++j)
        crow[j] += a0 * g0[j] + a1 * g1[j] + a2 * g2[j] + a3 * g3[j];
    }
    for (; i < r; ++i) {
      const T av = a[i * k + p];
      const T* grow = g + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

// Shared scaffolding for elementwise unary ops: forward value and local
// derivative as a function of (input, output).
template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  std::vector<T> out(x.size());
  const auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  Tape<T>* tape = common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>(x.shape(), std::move(out));
  Tensor<T> y(x.shape(), out);
  Tensor<T> xin = x;
  return tape->record(
      x.shape(), std::move(out), {&x},
      [xin, y, deriv](std::span<const T> g, Tape<T>& tp) {
        auto& gx = tp.grad_slot(xin);
        const auto xs2 = xin.data();
        const auto ys = y.data();
        for (std::size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * deriv(xs2[i], ys[i]);
      });
}

}  // namespace detail

namespace ops {

// Standard matrix product of [r x k] and [k x c].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
  std::vector<T> out(r * c, T(0));
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), r, k, c);
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (tape == nullptr) return Tensor<T>({r, c}, std::move(out));
  std::vector<const Tensor<T>*> parents;
  if (a.on_tape()) parents.push_back(&a);
  if (b.on_tape()) parents.push_back(&b);
  return tape->record(
      {r, c}, std::move(out), parents,
      [a, b, r, k, c](std::span<const T> g, Tape<T>& tp) {
        if (a.on_tape()) {
          auto& ga = tp.grad_slot(a);
          detail::gemm_nt(g.data(), b.data().data(), ga.data(), r, k, c);
        }
        if (b.on_tape()) {
          auto& gb = tp.grad_slot(b);
          detail::gemm_tn(a.data().data(), g.data(), gb.data(), r, k, c);
        }
      });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_rank(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  const auto xs = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xs[i * c + j];
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>({c, r}, std::move(out));
  return tape->record({c, r}, std::move(out), {&x},
                      [x, r, c](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j)
                            gx[i * c + j] += g[j * r + i];
                      });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return x.view(std::move(shape));
  return tape->record(std::move(shape), x.values(), {&x},
                      [x](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gx[i] += g[i];
                      });
}

// Elementwise sum. `b` may also be a vector matching the last extent of
// `a`, in which case it is added to every row.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const bool same = a.shape() == b.shape();
  const bool row_broadcast =
      !same && b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.size();
  if (!same && !row_broadcast) {
    throw DimensionError("add shape mismatch: " + shape_str(a.shape()) +
                         " + " + shape_str(b.shape()));
  }
  const std::size_t n = a.size(), w = b.size();
  std::vector<T> out(n);
  const auto as = a.data();
  const auto bs = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = as[i] + bs[same ? i : i % w];
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (tape == nullptr) return Tensor<T>(a.shape(), std::move(out));
  std::vector<const Tensor<T>*> parents;
  if (a.on_tape()) parents.push_back(&a);
  if (b.on_tape()) parents.push_back(&b);
  return tape->record(a.shape(), std::move(out), parents,
                      [a, b, same, w](std::span<const T> g, Tape<T>& tp) {
                        if (a.on_tape()) {
                          auto& ga = tp.grad_slot(a);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i];
                        }
                        if (b.on_tape()) {
                          auto& gb = tp.grad_slot(b);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gb[same ? i : i % w] += g[i];
                        }
                      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("sub shape mismatch: " + shape_str(a.shape()) +
                         " - " + shape_str(b.shape()));
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (tape == nullptr) return Tensor<T>(a.shape(), std::move(out));
  std::vector<const Tensor<T>*> parents;
  if (a.on_tape()) parents.push_back(&a);
  if (b.on_tape()) parents.push_back(&b);
  return tape->record(a.shape(), std::move(out), parents,
                      [a, b](std::span<const T> g, Tape<T>& tp) {
                        if (a.on_tape()) {
                          auto& ga = tp.grad_slot(a);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i];
                        }
                        if (b.on_tape()) {
                          auto& gb = tp.grad_slot(b);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gb[i] -= g[i];
                        }
                      });
}

// Elementwise (Hadamard) product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul shape mismatch: " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
  }
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  Tape<T>* tape = detail::common_tape<T>({&a, &b});
  if (tape == nullptr) return Tensor<T>(a.shape(), std::move(out));
  std::vector<const Tensor<T>*> parents;
  if (a.on_tape()) parents.push_back(&a);
  if (b.on_tape()) parents.push_back(&b);
  return tape->record(a.shape(), std::move(out), parents,
                      [a, b](std::span<const T> g, Tape<T>& tp) {
                        if (a.on_tape()) {
                          auto& ga = tp.grad_slot(a);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            ga[i] += g[i] * b[i];
                        }
                        if (b.on_tape()) {
                          auto& gb = tp.grad_slot(b);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            gb[i] += g[i] * a[i];
                        }
                      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::unary(
      x, [factor](T v) { return v * factor; },
      [factor](T, T) { return factor; });
}

// 1 - x
template <typename T>
Tensor<T> one_minus(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return T(1) - v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::tanh(v); },
      [](T, T y) { return T(1) - y * y; });
}

// Natural log of max(x, floor). The clamped region has zero derivative.
template <typename T>
Tensor<T> log(const Tensor<T>& x, T floor = T(0)) {
  return detail::unary(
      x,
      [floor](T v) {
        if (floor > T(0) && v < floor) return std::log(floor);
        return std::log(v);
      },
      [floor](T v, T) {
        if (floor > T(0) && v < floor) return T(0);
        return T(1) / v;
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v;
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>::scalar(acc);
  return tape->record({1}, {acc}, {&x},
                      [x](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        for (auto& v : gx) v += g[0];
                      });
}

// Sum of squared entries, the L2 penalty of one parameter.
template <typename T>
Tensor<T> sum_squares(const Tensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v * v;
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>::scalar(acc);
  return tape->record({1}, {acc}, {&x},
                      [x](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        const auto xs = x.data();
                        for (std::size_t i = 0; i < gx.size(); ++i)
                          gx[i] += T(2) * xs[i] * g[0];
                      });
}

// Sum of a list of tensors of identical shape.
template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw DimensionError("add_n of an empty list");
  Tensor<T> acc = xs.front();
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

// Arithmetic mean over the unmasked rows of [n x d].
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x, MaskView mask = {}) {
  detail::require_rank(x, 2, "mean_pool");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (!mask.empty() && mask.size() != n) {
    throw DimensionError("mean_pool mask of length " +
                         std::to_string(mask.size()) + " for " +
                         std::to_string(n) + " rows");
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (mask.empty() || mask[i]) ++count;
  if (count == 0) throw DegenerateMaskError("mean_pool: every row is masked");
  Mask keep(mask.begin(), mask.end());
  std::vector<T> out(d, T(0));
  const auto xs = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep.empty() && !keep[i]) continue;
    for (std::size_t j = 0; j < d; ++j) out[j] += xs[i * d + j];
  }
  const T inv = T(1) / static_cast<T>(count);
  for (auto& v : out) v *= inv;
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>({d}, std::move(out));
  return tape->record({d}, std::move(out), {&x},
                      [x, keep, n, d, inv](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        for (std::size_t i = 0; i < n; ++i) {
                          if (!keep.empty() && !keep[i]) continue;
                          for (std::size_t j = 0; j < d; ++j)
                            gx[i * d + j] += g[j] * inv;
                        }
                      });
}

// Concatenation along the last axis. All inputs share every leading
// extent.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw DimensionError("concat of an empty list");
  const Shape& first = xs.front().shape();
  Shape lead(first.begin(), first.end() - 1);
  std::size_t width = 0;
  std::vector<std::size_t> widths;
  for (const auto& x : xs) {
    Shape l(x.shape().begin(), x.shape().end() - 1);
    if (l != lead) {
      throw DimensionError("concat leading extents differ: " +
                           shape_str(first) + " vs " + shape_str(x.shape()));
    }
    widths.push_back(x.shape().back());
    width += x.shape().back();
  }
  const std::size_t rows = shape_size(lead);
  std::vector<T> out(rows * width);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const auto src = xs[k].data();
    const std::size_t w = widths[k];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data() + r * w, w, out.data() + r * width + offset);
    offset += w;
  }
  Shape shape = lead;
  shape.push_back(width);
  Tape<T>* tape = detail::common_tape<T>(xs);
  if (tape == nullptr) return Tensor<T>(std::move(shape), std::move(out));
  std::vector<const Tensor<T>*> parents;
  for (const auto& x : xs)
    if (x.on_tape()) parents.push_back(&x);
  return tape->record(
      std::move(shape), std::move(out), parents,
      [xs, widths, rows, width](std::span<const T> g, Tape<T>& tp) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < xs.size(); ++k) {
          const std::size_t w = widths[k];
          if (xs[k].on_tape()) {
            auto& gx = tp.grad_slot(xs[k]);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < w; ++j)
                gx[r * w + j] += g[r * width + off + j];
          }
          off += w;
        }
      });
}

// Stacks equally sized rows ([d] or [1 x d]) or blocks ([r x d]) along the
// first axis.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& xs) {
  if (xs.empty()) throw DimensionError("concat_rows of an empty list");
  const std::size_t d = xs.front().shape().back();
  std::size_t rows = 0;
  std::vector<std::size_t> counts;
  for (const auto& x : xs) {
    if (x.shape().back() != d || x.rank() > 2) {
      throw DimensionError("concat_rows width mismatch: " +
                           shape_str(xs.front().shape()) + " vs " +
                           shape_str(x.shape()));
    }
    counts.push_back(x.size() / d);
    rows += x.size() / d;
  }
  std::vector<T> out;
  out.reserve(rows * d);
  for (const auto& x : xs) out.insert(out.end(), x.data().begin(), x.data().end());
  Tape<T>* tape = detail::common_tape<T>(xs);
  if (tape == nullptr) return Tensor<T>({rows, d}, std::move(out));
  std::vector<const Tensor<T>*> parents;
  for (const auto& x : xs)
    if (x.on_tape()) parents.push_back(&x);
  return tape->record({rows, d}, std::move(out), parents,
                      [xs](std::span<const T> g, Tape<T>& tp) {
                        std::size_t off = 0;
                        for (const auto& x : xs) {
                          if (x.on_tape()) {
                            auto& gx = tp.grad_slot(x);
                            for (std::size_t i = 0; i < x.size(); ++i)
                              gx[i] += g[off + i];
                          }
                          off += x.size();
                        }
                      });
}

// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (begin >= end || end > c) {
    throw DimensionError("slice_cols [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " +
                         shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<T> out(r * w);
  const auto xs = x.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(xs.data() + i * c + begin, w, out.data() + i * w);
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>({r, w}, std::move(out));
  return tape->record({r, w}, std::move(out), {&x},
                      [x, r, c, w, begin](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < w; ++j)
                            gx[i * c + begin + j] += g[i * w + j];
                      });
}

// Rows [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_rank(x, 2, "slice_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (begin >= end || end > r) {
    throw DimensionError("slice_rows [" + std::to_string(begin) + ", " +
                         std::to_string(end) + ") out of " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.data().begin() + begin * c, x.data().begin() + end * c);
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>({end - begin, c}, std::move(out));
  return tape->record({end - begin, c}, std::move(out), {&x},
                      [x, begin, c](std::span<const T> g, Tape<T>& tp) {
                        auto& gx = tp.grad_slot(x);
                        for (std::size_t i = 0; i < g.size(); ++i)
                          gx[begin * c + i] += g[i];
                      });
}

// Rows of `table` selected by `indices`; repeated indices sum their
// gradients.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table,
                      const std::vector<std::size_t>& indices) {
  detail::require_rank(table, 2, "gather_rows");
  if (indices.empty()) throw DimensionError("gather_rows with no indices");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<T> out(indices.size() * d);
  const auto ts = table.data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= v) {
      throw DimensionError("gather_rows index " + std::to_string(indices[i]) +
                           " out of " + shape_str(table.shape()));
    }
    std::copy_n(ts.data() + indices[i] * d, d, out.data() + i * d);
  }
  Tape<T>* tape = detail::common_tape<T>({&table});
  if (tape == nullptr) return Tensor<T>({indices.size(), d}, std::move(out));
  return tape->record({indices.size(), d}, std::move(out), {&table},
                      [table, indices, d](std::span<const T> g, Tape<T>& tp) {
                        auto& gt = tp.grad_slot(table);
                        for (std::size_t i = 0; i < indices.size(); ++i)
                          for (std::size_t j = 0; j < d; ++j)
                            gt[indices[i] * d + j] += g[i * d + j];
                      });
}

// Softmax along `axis` (negative counts from the end). The mask either
// covers every element or only the softmax axis, in which case it is shared
// by all groups. Masked outputs are exactly zero.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis = -1, MaskView mask = {}) {
  const int rank = static_cast<int>(x.rank());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError("softmax axis " + std::to_string(axis) +
                         " out of range for " + shape_str(x.shape()));
  }
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= s[i];
  for (int i = ax + 1; i < rank; ++i) inner *= s[i];
  const std::size_t len = s[ax];
  const bool per_axis = !mask.empty() && mask.size() == len &&
                        mask.size() != x.size();
  if (!mask.empty() && !per_axis && mask.size() != x.size()) {
    throw DimensionError("softmax mask of length " +
                         std::to_string(mask.size()) + " for " +
                         shape_str(s));
  }
  Mask m(mask.begin(), mask.end());
  auto valid = [&](std::size_t flat, std::size_t l) {
    if (m.empty()) return true;
    return m[per_axis ? l : flat] != 0;
  };
  std::vector<T> out(x.size(), T(0));
  const auto xs = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      T mx = -std::numeric_limits<T>::infinity();
      bool any = false;
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t f = (o * len + l) * inner + in;
        if (!valid(f, l)) continue;
        any = true;
        mx = std::max(mx, xs[f]);
      }
      if (!any) throw DegenerateMaskError("softmax group is fully masked");
      T total = T(0);
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t f = (o * len + l) * inner + in;
        if (!valid(f, l)) continue;
        out[f] = std::exp(xs[f] - mx);
        total += out[f];
      }
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t f = (o * len + l) * inner + in;
        out[f] /= total;
      }
    }
  }
  Tape<T>* tape = detail::common_tape<T>({&x});
  if (tape == nullptr) return Tensor<T>(s, std::move(out));
  Tensor<T> y(s, out);
  return tape->record(
      s, std::move(out), {&x},
      [x, y, outer, inner, len](std::span<const T> g, Tape<T>& tp) {
        auto& gx = tp.grad_slot(x);
        const auto ys = y.data();
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            T dot = T(0);
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t f = (o * len + l) * inner + in;
              dot += ys[f] * g[f];
            }
            for (std::size_t l = 0; l < len; ++l) {
              const std::size_t f = (o * len + l) * inner + in;
              gx[f] += ys[f] * (g[f] - dot);
            }
          }
        }
      });
}

// Inverted dropout: in training, zeroes each entry with probability `rate`
// and scales survivors by 1/(1-rate). Identity when not training.
template <typename T, typename Rng>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " +
                      std::to_string(rate));
  }
  if (!train || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const T factor = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> m(x.size());
  for (auto& v : m) v = keep(rng) ? factor : T(0);
  return mul(x, Tensor<T>(x.shape(), std::move(m)));
}

}  // namespace ops
}  // namespace efnet

#endif  // EFNET_OPS_HPP_
