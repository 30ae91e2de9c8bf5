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

#ifndef EFNET_LAYERS_HPP_
#define EFNET_LAYERS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "efnet/error.hpp"
#include "efnet/ops.hpp"
#include "efnet/tensor.hpp"

namespace efnet {

// Glorot-uniform initialization in +-sqrt(6 / (fan_in + fan_out)).
template <typename T, typename Rng>
Tensor<T> glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<T> values(fan_in * fan_out);
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>({fan_in, fan_out}, std::move(values), true);
}

template <typename T>
Tensor<T> zero_bias(std::size_t n) {
  Tensor<T> b({n});
  b.set_requires_grad(true);
  return b;
}

template <typename T>
struct AttentionResult {
  Tensor<T> output;
  // One [n_q x n_k] weight matrix per head.
  std::vector<Tensor<T>> weights;
};

// softmax(q k^T / sqrt(d_k)) v, with masked keys receiving zero weight.
template <typename T>
AttentionResult<T> scaled_dot_attention(const Tensor<T>& q, const Tensor<T>& k,
                                        const Tensor<T>& v,
                                        MaskView key_mask = {}) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
    throw DimensionError("attention expects matrices, got q" +
                         shape_str(q.shape()) + " k" + shape_str(k.shape()) +
                         " v" + shape_str(v.shape()));
  }
  if (q.dim(1) != k.dim(1)) {
    throw DimensionError("attention d_k mismatch: q" + shape_str(q.shape()) +
                         " k" + shape_str(k.shape()));
  }
  if (k.dim(0) != v.dim(0)) {
    throw DimensionError("attention keys/values length mismatch: k" +
                         shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  if (!key_mask.empty() && key_mask.size() != k.dim(0)) {
    throw DimensionError("attention mask length " +
                         std::to_string(key_mask.size()) + " for " +
                         std::to_string(k.dim(0)) + " keys");
  }
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(q.dim(1)));
  Tensor<T> scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt);
  Tensor<T> weights = ops::softmax(scores, -1, key_mask);
  Tensor<T> out = ops::matmul(weights, v);
  return {out, {weights}};
}

// Per-head projections stored column-blocked: head i owns columns
// [i*d_head, (i+1)*d_head) of each matrix.
template <typename T>
struct MHAParams {
  Tensor<T> wq;  // [d_q x width]
  Tensor<T> wk;  // [d_k x width]
  Tensor<T> wv;  // [d_v x width]
  std::size_t heads = 1;

  std::size_t width() const { return wq.dim(1); }
  std::size_t head_dim() const { return width() / heads; }

  template <typename Rng>
  static MHAParams make(std::size_t d_q, std::size_t d_k, std::size_t d_v,
                        std::size_t width, std::size_t heads, Rng& rng) {
    check_heads(width, heads);
    MHAParams p;
    p.heads = heads;
    p.wq = glorot_uniform<T>(d_q, width, rng);
    p.wk = glorot_uniform<T>(d_k, width, rng);
    p.wv = glorot_uniform<T>(d_v, width, rng);
    return p;
  }

  static void check_heads(std::size_t width, std::size_t heads) {
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("head count " + std::to_string(heads) +
                        " does not divide model width " +
                        std::to_string(width));
    }
  }
};

// Concatenation of per-head attention over projected inputs. There is no
// output projection after the concatenation.
template <typename T>
AttentionResult<T> multi_head(const Tensor<T>& q, const Tensor<T>& k,
                              const Tensor<T>& v, const MHAParams<T>& params,
                              MaskView key_mask = {}) {
  MHAParams<T>::check_heads(params.width(), params.heads);
  if (params.wk.dim(1) != params.width() ||
      params.wv.dim(1) != params.width()) {
    throw ConfigError("multi-head projections disagree on width");
  }
  const Tensor<T> qp = ops::matmul(q, params.wq);
  const Tensor<T> kp = ops::matmul(k, params.wk);
  const Tensor<T> vp = ops::matmul(v, params.wv);
  const std::size_t dh = params.head_dim();
  AttentionResult<T> result;
  std::vector<Tensor<T>> heads;
  heads.reserve(params.heads);
  for (std::size_t h = 0; h < params.heads; ++h) {
    const std::size_t b = h * dh, e = b + dh;
    auto head = scaled_dot_attention(ops::slice_cols(qp, b, e),
                                     ops::slice_cols(kp, b, e),
                                     ops::slice_cols(vp, b, e), key_mask);
    heads.push_back(head.output);
    result.weights.push_back(head.weights.front());
  }
  result.output = params.heads == 1 ? heads.front() : ops::concat(heads);
  return result;
}

template <typename T>
AttentionResult<T> mhsa(const Tensor<T>& x, const MHAParams<T>& params,
                        MaskView mask = {}) {
  return multi_head(x, x, x, params, mask);
}

template <typename T>
struct GRUParams {
  Tensor<T> wz, wr, wh;  // [d_in x d_h]
  Tensor<T> uz, ur, uh;  // [d_h x d_h]
  Tensor<T> bz, br, bh;  // [d_h]

  std::size_t input_dim() const { return wz.dim(0); }
  std::size_t hidden_dim() const { return wz.dim(1); }

  template <typename Rng>
  static GRUParams make(std::size_t d_in, std::size_t d_h, Rng& rng) {
    GRUParams p;
    p.wz = glorot_uniform<T>(d_in, d_h, rng);
    p.wr = glorot_uniform<T>(d_in, d_h, rng);
    p.wh = glorot_uniform<T>(d_in, d_h, rng);
    p.uz = glorot_uniform<T>(d_h, d_h, rng);
    p.ur = glorot_uniform<T>(d_h, d_h, rng);
    p.uh = glorot_uniform<T>(d_h, d_h, rng);
    p.bz = zero_bias<T>(d_h);
    p.br = zero_bias<T>(d_h);
    p.bh = zero_bias<T>(d_h);
    return p;
  }
};

// z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
// c = tanh(x Wh + (r*h) Uh + bh), h' = (1 - z) * h + z * c.
template <typename T>
Tensor<T> gru_cell(const Tensor<T>& x, const Tensor<T>& h_prev,
                   const GRUParams<T>& p) {
  const std::size_t d_in = p.input_dim(), d_h = p.hidden_dim();
  if (x.size() != d_in || x.rank() > 2 || h_prev.size() != d_h ||
      h_prev.rank() > 2) {
    throw DimensionError("gru_cell expects x[" + std::to_string(d_in) +
                         "] and h[" + std::to_string(d_h) + "], got x" +
                         shape_str(x.shape()) + " h" +
                         shape_str(h_prev.shape()));
  }
  const Tensor<T> xr = ops::reshape(x, {1, d_in});
  const Tensor<T> hr = ops::reshape(h_prev, {1, d_h});
  auto gate = [&](const Tensor<T>& w, const Tensor<T>& u, const Tensor<T>& b,
                  const Tensor<T>& hin) {
    return ops::add(ops::add(ops::matmul(xr, w), ops::matmul(hin, u)), b);
  };
  const Tensor<T> z = ops::sigmoid(gate(p.wz, p.uz, p.bz, hr));
  const Tensor<T> r = ops::sigmoid(gate(p.wr, p.ur, p.br, hr));
  const Tensor<T> cand = ops::tanh(gate(p.wh, p.uh, p.bh, ops::mul(r, hr)));
  const Tensor<T> h =
      ops::add(ops::mul(ops::one_minus(z), hr), ops::mul(z, cand));
  return ops::reshape(h, {d_h});
}

// Bidirectional encoding of a target span. Every step consumes
// [w_j^t, w^a]; the forward direction scans j = 1..m, the backward one
// j = m..1, and row j is [forward_j, backward_j].
template <typename T>
Tensor<T> bigru_encode(const Tensor<T>& target_embeds,
                       const Tensor<T>& aspect_embed, const GRUParams<T>& fwd,
                       const GRUParams<T>& bwd) {
  if (target_embeds.rank() != 2) {
    throw InputError("bigru_encode needs a non-empty [m x d] target");
  }
  const std::size_t m = target_embeds.dim(0);
  const std::size_t d_w = target_embeds.dim(1);
  if (aspect_embed.size() != d_w) {
    throw DimensionError("aspect embedding " +
                         shape_str(aspect_embed.shape()) +
                         " does not match target width " +
                         std::to_string(d_w));
  }
  const Tensor<T> aspect = ops::reshape(aspect_embed, {1, d_w});
  std::vector<Tensor<T>> steps;
  steps.reserve(m);
  for (std::size_t j = 0; j < m; ++j) {
    steps.push_back(ops::reshape(
        ops::concat<T>({ops::slice_rows(target_embeds, j, j + 1), aspect}),
        {2 * d_w}));
  }
  std::vector<Tensor<T>> forward(m), backward(m);
  Tensor<T> h = Tensor<T>::zeros({fwd.hidden_dim()});
  for (std::size_t j = 0; j < m; ++j) {
    h = gru_cell(steps[j], h, fwd);
    forward[j] = h;
  }
  h = Tensor<T>::zeros({bwd.hidden_dim()});
  for (std::size_t j = m; j-- > 0;) {
    h = gru_cell(steps[j], h, bwd);
    backward[j] = h;
  }
  std::vector<Tensor<T>> rows;
  rows.reserve(m);
  for (std::size_t j = 0; j < m; ++j)
    rows.push_back(ops::concat<T>({forward[j], backward[j]}));
  return ops::concat_rows(rows);
}

// Row-wise squash v = (|s|^2 / (1 + |s|^2)) * s / |s|; zero rows map to
// zero.
template <typename T>
Tensor<T> squash(const Tensor<T>& s) {
  const std::size_t d = s.shape().back();
  const std::size_t rows = s.size() / d;
  std::vector<T> out(s.size());
  std::vector<T> norms(rows);
  const auto xs = s.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T sq = T(0);
    for (std::size_t j = 0; j < d; ++j) sq += xs[r * d + j] * xs[r * d + j];
    const T n = std::sqrt(sq);
    norms[r] = n;
    const T f = n / (T(1) + sq);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = f * xs[r * d + j];
  }
  Tape<T>* tape = detail::common_tape<T>({&s});
  if (tape == nullptr) return Tensor<T>(s.shape(), std::move(out));
  return tape->record(
      s.shape(), std::move(out), {&s},
      [s, norms, rows, d](std::span<const T> g, Tape<T>& tp) {
        // dv/ds = f I + (f'(n) / n) s s^T with f = n / (1 + n^2),
        // f' = (1 - n^2) / (1 + n^2)^2.
        auto& gs = tp.grad_slot(s);
        const auto xs2 = s.data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T n = norms[r];
          if (n == T(0)) continue;
          const T sq = n * n;
          const T f = n / (T(1) + sq);
          const T fp = (T(1) - sq) / ((T(1) + sq) * (T(1) + sq));
          T dot = T(0);
          for (std::size_t j = 0; j < d; ++j)
            dot += xs2[r * d + j] * g[r * d + j];
          const T c = fp / n * dot;
          for (std::size_t j = 0; j < d; ++j)
            gs[r * d + j] += f * g[r * d + j] + c * xs2[r * d + j];
        }
      });
}

template <typename T>
struct CapsuleParams {
  Tensor<T> weight;  // [region_dim x d_cap]
  Tensor<T> bias;    // [d_cap], empty when the layer has none

  bool has_bias() const { return !bias.empty(); }
  std::size_t input_dim() const { return weight.dim(0); }
  std::size_t output_dim() const { return weight.dim(1); }

  template <typename Rng>
  static CapsuleParams make(std::size_t in, std::size_t out, Rng& rng,
                            bool with_bias = true) {
    CapsuleParams p;
    p.weight = glorot_uniform<T>(in, out, rng);
    if (with_bias) p.bias = zero_bias<T>(out);
    return p;
  }
};

inline constexpr std::size_t kGridSide = 7;
inline constexpr std::size_t kRegions = kGridSide * kGridSide;
inline constexpr std::size_t kRegionDim = 2048;

// Single capsule layer without routing: per-region projection then squash.
template <typename T>
Tensor<T> capsule_layer(const Tensor<T>& regions, const CapsuleParams<T>& p) {
  if (regions.rank() != 2 || regions.dim(0) != kRegions ||
      regions.dim(1) != p.input_dim()) {
    throw DimensionError("capsule_layer expects regions [" +
                         std::to_string(kRegions) + "x" +
                         std::to_string(p.input_dim()) + "], got " +
                         shape_str(regions.shape()));
  }
  Tensor<T> s = ops::matmul(regions, p.weight);
  if (p.has_bias()) s = ops::add(s, p.bias);
  return squash(s);
}

template <typename T>
struct PositionTable {
  Tensor<T> table;  // [(2 * clip + 1) x d_p]; row clip is distance 0
  std::size_t clip = 0;

  template <typename Rng>
  static PositionTable make(std::size_t clip, std::size_t dim, Rng& rng) {
    PositionTable p;
    p.clip = clip;
    p.table = glorot_uniform<T>(2 * clip + 1, dim, rng);
    return p;
  }
};

// Signed distance of every token to the half-open span [start, end),
// clipped to [-clip, clip]. Tokens inside the span sit at distance 0.
inline std::vector<long> relative_distances(std::size_t start, std::size_t end,
                                            std::size_t n, std::size_t clip) {
  if (!(start < end && end <= n)) {
    throw InputError("invalid target span [" + std::to_string(start) + ", " +
                     std::to_string(end) + ") for " + std::to_string(n) +
                     " tokens");
  }
  const long d = static_cast<long>(clip);
  std::vector<long> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    long dist = 0;
    if (i < start) {
      dist = static_cast<long>(i) - static_cast<long>(start);
    } else if (i >= end) {
      dist = static_cast<long>(i) - static_cast<long>(end - 1);
    }
    out[i] = std::clamp(dist, -d, d);
  }
  return out;
}

template <typename T>
Tensor<T> position_embeddings(std::size_t start, std::size_t end, std::size_t n,
                              const PositionTable<T>& table) {
  const auto dist = relative_distances(start, end, n, table.clip);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i)
    rows[i] = static_cast<std::size_t>(dist[i] + static_cast<long>(table.clip));
  return ops::gather_rows(table.table, rows);
}

}  // namespace efnet

#endif  // EFNET_LAYERS_HPP_
