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

#ifndef EFNET_MODEL_HPP_
#define EFNET_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "efnet/error.hpp"
#include "efnet/layers.hpp"
#include "efnet/ops.hpp"
#include "efnet/tensor.hpp"

namespace efnet {

inline constexpr std::size_t kNumClasses = 3;

enum class Polarity : int { kNegative = 0, kNeutral = 1, kPositive = 2 };

inline const char* polarity_name(int label) {
  static const char* kNames[] = {"negative", "neutral", "positive"};
  if (label < 0 || label >= static_cast<int>(kNumClasses)) return "?";
  return kNames[label];
}

enum class Precision { kSingle, kDouble };

struct ModelConfig {
  std::size_t embed_dim = 50;
  std::size_t position_dim = 10;
  std::size_t hidden_dim = 32;
  std::size_t heads = 4;
  std::size_t capsule_dim = 16;
  std::size_t att_dim = 32;
  std::size_t region_dim = kRegionDim;
  double dropout = 0.3;
  double l2_lambda = 1e-5;
  std::size_t max_len = 36;
  bool text_only = false;
  std::uint64_t seed = 1;
  Precision precision = Precision::kSingle;

  // Width of the final representation O.
  std::size_t output_width() const {
    return 2 * hidden_dim + (text_only ? 0 : att_dim);
  }

  void validate() const {
    auto positive = [](std::size_t v, const char* key) {
      if (v == 0) throw ConfigError(std::string(key) + " must be positive");
    };
    positive(embed_dim, "embed_dim");
    positive(position_dim, "position_dim");
    positive(hidden_dim, "hidden_dim");
    positive(capsule_dim, "capsule_dim");
    positive(att_dim, "att_dim");
    positive(max_len, "max_len");
    MHAParams<float>::check_heads(hidden_dim, heads);
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("dropout must lie in [0, 1)");
    }
    if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be >= 0");
  }
};

// Every trainable tensor of the model. Image-branch members are empty in
// text-only models and are then skipped by for_each().
template <typename T>
struct EFNetParams {
  Tensor<T> embedding;  // [V x embed_dim], row 0 is padding
  PositionTable<T> position;
  MHAParams<T> context_mhsa;
  GRUParams<T> gru_fwd, gru_bwd;
  CapsuleParams<T> capsule;
  Tensor<T> w_ta;  // [2 * hidden x att]
  Tensor<T> w_r;   // [region_dim x att]
  MHAParams<T> interact_context;
  MHAParams<T> interact_image;
  MHAParams<T> fusion;
  Tensor<T> w_o;  // [output_width x 3]
  Tensor<T> b_o;  // [3]

  bool has_image_branch() const { return !w_r.empty(); }

  template <typename Rng>
  static EFNetParams init(const ModelConfig& cfg, Tensor<T> embedding,
                          Rng& rng) {
    cfg.validate();
    if (embedding.rank() != 2 || embedding.dim(1) != cfg.embed_dim) {
      throw ConfigError("embedding matrix " + shape_str(embedding.shape()) +
                        " does not match embed_dim " +
                        std::to_string(cfg.embed_dim));
    }
    const std::size_t dw = cfg.embed_dim, h = cfg.hidden_dim;
    const std::size_t ta = 2 * h;
    EFNetParams p;
    p.embedding = std::move(embedding);
    p.embedding.set_requires_grad(true);
    p.position = PositionTable<T>::make(cfg.max_len, cfg.position_dim, rng);
    p.context_mhsa = MHAParams<T>::make(dw + cfg.position_dim,
                                        dw + cfg.position_dim,
                                        dw + cfg.position_dim, h, cfg.heads,
                                        rng);
    p.gru_fwd = GRUParams<T>::make(2 * dw, h, rng);
    p.gru_bwd = GRUParams<T>::make(2 * dw, h, rng);
    if (!cfg.text_only) {
      p.capsule = CapsuleParams<T>::make(cfg.region_dim, cfg.capsule_dim, rng);
      p.w_ta = glorot_uniform<T>(ta, cfg.att_dim, rng);
      p.w_r = glorot_uniform<T>(cfg.region_dim, cfg.att_dim, rng);
    }
    p.interact_context = MHAParams<T>::make(ta, h, h, h, cfg.heads, rng);
    if (!cfg.text_only) {
      p.interact_image = MHAParams<T>::make(ta, cfg.capsule_dim,
                                            cfg.capsule_dim, h, cfg.heads,
                                            rng);
    }
    p.fusion = MHAParams<T>::make(ta, h, h, h, cfg.heads, rng);
    p.w_o = glorot_uniform<T>(cfg.output_width(), kNumClasses, rng);
    p.b_o = zero_bias<T>(kNumClasses);
    return p;
  }

  // Visits (stable name, tensor) in a fixed order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    visit(*this, fn);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    visit(*this, fn);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for_each([&](const std::string& n, const Tensor<T>&) { out.push_back(n); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
    return n;
  }

  // Copy whose tensors are watched leaves of `tape` (storage is shared).
  EFNetParams bind(Tape<T>& tape) const {
    EFNetParams out = *this;
    out.for_each([&](const std::string&, Tensor<T>& t) { t = tape.watch(t); });
    return out;
  }

  // Deep copy with independent storage.
  EFNetParams clone() const {
    EFNetParams out = *this;
    out.for_each([](const std::string&, Tensor<T>& t) { t = t.clone(); });
    return out;
  }

 private:
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn& fn) {
    auto one = [&](const char* name, auto& t) {
      if (!t.empty()) fn(std::string(name), t);
    };
    auto mha = [&](const std::string& prefix, auto& m) {
      if (m.wq.empty()) return;
      fn(prefix + ".wq", m.wq);
      fn(prefix + ".wk", m.wk);
      fn(prefix + ".wv", m.wv);
    };
    auto gru = [&](const std::string& prefix, auto& g) {
      fn(prefix + ".wz", g.wz);
      fn(prefix + ".wr", g.wr);
      fn(prefix + ".wh", g.wh);
      fn(prefix + ".uz", g.uz);
      fn(prefix + ".ur", g.ur);
      fn(prefix + ".uh", g.uh);
      fn(prefix + ".bz", g.bz);
      fn(prefix + ".br", g.br);
      fn(prefix + ".bh", g.bh);
    };
    one("embedding", self.embedding);
    one("position.table", self.position.table);
    mha("context_mhsa", self.context_mhsa);
    gru("gru_fwd", self.gru_fwd);
    gru("gru_bwd", self.gru_bwd);
    one("capsule.weight", self.capsule.weight);
    one("capsule.bias", self.capsule.bias);
    one("image_attention.w_ta", self.w_ta);
    one("image_attention.w_r", self.w_r);
    mha("interact_context", self.interact_context);
    mha("interact_image", self.interact_image);
    mha("fusion", self.fusion);
    one("classifier.weight", self.w_o);
    one("classifier.bias", self.b_o);
  }
};

// Image-branch parameter names, used to check text-only containment.
inline bool is_image_parameter(const std::string& name) {
  return name.rfind("capsule.", 0) == 0 ||
         name.rfind("image_attention.", 0) == 0 ||
         name.rfind("interact_image.", 0) == 0;
}

// One sample after vocabulary lookup and padding.
struct EncodedSample {
  std::vector<std::size_t> tokens;  // length L, padded with index 0
  Mask mask;                        // 1 on real tokens
  std::size_t span_start = 0;
  std::size_t span_end = 0;
  std::vector<std::size_t> aspect;  // aspect token indices
  int label = 0;
  std::optional<Tensor<float>> regions;  // 7x7x2048 grid when present
};

template <typename T>
struct AttentionTrace {
  std::vector<Tensor<T>> context_self;       // per head [L x L]
  std::vector<Tensor<T>> interact_context;   // per head [m x L]
  std::vector<Tensor<T>> interact_image;     // per head [m x 49]
  std::vector<Tensor<T>> fusion;             // per head [m x m]
  std::optional<Tensor<T>> image_regions;    // [49], row-major 7x7 grid
};

template <typename T>
struct ForwardOutput {
  Tensor<T> probs;   // [3]
  Tensor<T> logits;  // [3]
  std::optional<AttentionTrace<T>> trace;
};

namespace detail {

template <typename Fn>
decltype(auto) stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (Error& e) {
    e.add_context(name);
    throw;
  }
}

template <typename T>
std::vector<Tensor<T>> detach_all(const std::vector<Tensor<T>>& xs) {
  std::vector<Tensor<T>> out;
  for (const auto& x : xs) out.push_back(x.detach());
  return out;
}

}  // namespace detail

template <typename T>
struct ContextEncoding {
  Tensor<T> states;   // h^c [n x width]
  Tensor<T> pooled;   // h^c_avg [width]
  std::vector<Tensor<T>> weights;
};

// Self-attention over the concatenated token features followed by masked
// mean pooling.
template <typename T>
ContextEncoding<T> encode_context(const Tensor<T>& features,
                                  const MHAParams<T>& params, MaskView mask) {
  const Tensor<T>& x = features;
  auto att = mhsa(x, params, mask);
  return {att.output, ops::mean_pool(att.output, mask), att.weights};
}

// Same, concatenating [w^c, p^c] first.
template <typename T>
ContextEncoding<T> encode_context(const Tensor<T>& word_embeds,
                                  const Tensor<T>& pos_embeds,
                                  const MHAParams<T>& params, MaskView mask) {
  return encode_context(ops::concat<T>({word_embeds, pos_embeds}), params,
                        mask);
}

template <typename T>
struct VisualEncoding {
  Tensor<T> regions;   // R [49 x region_dim]
  Tensor<T> capsules;  // h^i [49 x d_cap]
};

// Flattens the 7x7 grid row-major (cell (r, c) -> row 7r + c) and applies
// the capsule layer.
template <typename T>
VisualEncoding<T> encode_visual(const Tensor<float>& grid,
                                const CapsuleParams<T>& params) {
  if (grid.rank() != 3 || grid.dim(0) != kGridSide ||
      grid.dim(1) != kGridSide) {
    if (!(grid.rank() == 2 && grid.dim(0) == kRegions)) {
      throw DimensionError("image features must be 7x7xD, got " +
                           shape_str(grid.shape()));
    }
  }
  const std::size_t d = grid.shape().back();
  Tensor<T> regions;
  if constexpr (std::is_same_v<T, float>) {
    regions = grid.view({kRegions, d});
  } else {
    regions = grid.template cast<T>().view({kRegions, d});
  }
  return {regions, capsule_layer(regions, params)};
}

template <typename T>
struct ImageAttention {
  Tensor<T> output;   // h^i_att [att]
  Tensor<T> weights;  // [49]
};

// Single query mean(h^ta) W^ta attending over keys = values = R W^R.
template <typename T>
ImageAttention<T> image_attention(const Tensor<T>& h_ta,
                                  const Tensor<T>& regions,
                                  const Tensor<T>& w_ta,
                                  const Tensor<T>& w_r) {
  if (w_ta.dim(1) != w_r.dim(1)) {
    throw ConfigError("W^ta " + shape_str(w_ta.shape()) + " and W^R " +
                      shape_str(w_r.shape()) +
                      " map to different subspaces");
  }
  if (h_ta.dim(1) != w_ta.dim(0) || regions.dim(1) != w_r.dim(0)) {
    throw ConfigError("image attention projections do not match inputs");
  }
  const Tensor<T> query = ops::matmul(
      ops::reshape(ops::mean_pool(h_ta), {1, h_ta.dim(1)}), w_ta);
  const Tensor<T> keys = ops::matmul(regions, w_r);
  auto att = scaled_dot_attention(query, keys, keys);
  const std::size_t d = w_r.dim(1);
  return {ops::reshape(att.output, {d}),
          ops::reshape(att.weights.front(), {regions.dim(0)})};
}

template <typename T>
struct Interaction {
  AttentionResult<T> context;               // h^tac
  std::optional<AttentionResult<T>> image;  // h^tai
};

template <typename T>
Interaction<T> interact(const Tensor<T>& h_ta, const Tensor<T>& h_c,
                        const std::optional<Tensor<T>>& h_i,
                        const EFNetParams<T>& params, MaskView context_mask) {
  Interaction<T> out;
  out.context = multi_head(h_ta, h_c, h_c, params.interact_context,
                           context_mask);
  if (h_i) out.image = multi_head(h_ta, *h_i, *h_i, params.interact_image);
  return out;
}

template <typename T>
struct Fusion {
  Tensor<T> representation;  // O
  AttentionResult<T> attention;
};

// h^taci = MultiHead(Q=h^ta, K=h^tac, V=h^tai), averaged over its rows and
// concatenated as O = [h^c_avg, h^taci_avg, h^i_att]. Without an image the
// values fall back to h^tac and O drops the image term.
template <typename T>
Fusion<T> fuse(const Tensor<T>& h_ta, const Tensor<T>& h_tac,
               const std::optional<Tensor<T>>& h_tai,
               const Tensor<T>& h_c_avg,
               const std::optional<Tensor<T>>& h_att,
               const MHAParams<T>& params) {
  const Tensor<T>& values = h_tai ? *h_tai : h_tac;
  if (values.dim(0) != h_tac.dim(0) || h_tac.dim(0) != h_ta.dim(0)) {
    throw InvariantViolation("fusion inputs disagree on row count: h^ta " +
                             shape_str(h_ta.shape()) + ", h^tac " +
                             shape_str(h_tac.shape()) + ", h^tai " +
                             shape_str(values.shape()));
  }
  auto att = multi_head(h_ta, h_tac, values, params);
  const Tensor<T> pooled = ops::mean_pool(att.output);
  std::vector<Tensor<T>> parts{h_c_avg, pooled};
  if (h_att) parts.push_back(*h_att);
  return {ops::concat(parts), att};
}

// x = W_o^T O + b_o, probabilities = softmax(x). Classes are ordered
// [negative, neutral, positive].
template <typename T>
ForwardOutput<T> classify(const Tensor<T>& o, const Tensor<T>& w_o,
                          const Tensor<T>& b_o) {
  if (o.rank() != 1 || w_o.rank() != 2 || o.size() != w_o.dim(0) ||
      b_o.size() != w_o.dim(1)) {
    throw ConfigError("classifier " + shape_str(w_o.shape()) +
                      " does not accept representation " +
                      shape_str(o.shape()));
  }
  const Tensor<T> logits = ops::reshape(
      ops::add(ops::matmul(ops::reshape(o, {1, o.size()}), w_o), b_o),
      {w_o.dim(1)});
  return {ops::softmax(logits), logits, std::nullopt};
}

// Mean cross-entropy over the batch plus lambda * sum of squared
// parameters. The log is clamped at 1e-12.
template <typename T>
Tensor<T> loss(const std::vector<Tensor<T>>& probs,
               const std::vector<int>& labels,
               const std::vector<Tensor<T>>& params, T lambda) {
  if (probs.empty() || probs.size() != labels.size()) {
    throw InputError("loss needs one label per prediction");
  }
  if (lambda < T(0)) throw ConfigError("l2 weight must be non-negative");
  std::vector<Tensor<T>> terms;
  terms.reserve(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= probs[i].size()) {
      throw InputError("label " + std::to_string(y) + " out of range");
    }
    const Tensor<T> logp = ops::log(probs[i], T(1e-12));
    terms.push_back(ops::gather_rows(ops::reshape(logp, {logp.size(), 1}),
                                     {static_cast<std::size_t>(y)}));
  }
  Tensor<T> total = ops::scale(ops::reshape(ops::add_n(terms), {1}),
                               T(-1) / static_cast<T>(probs.size()));
  if (lambda > T(0) && !params.empty()) {
    std::vector<Tensor<T>> sq;
    for (const auto& p : params) sq.push_back(ops::sum_squares(p));
    total = ops::add(total, ops::scale(ops::add_n(sq), lambda));
  }
  return total;
}

template <typename T>
Tensor<T> loss(const std::vector<Tensor<T>>& probs,
               const std::vector<int>& labels, const EFNetParams<T>& params,
               T lambda) {
  std::vector<Tensor<T>> list;
  params.for_each(
      [&](const std::string&, const Tensor<T>& t) { list.push_back(t); });
  return loss(probs, labels, list, lambda);
}

template <typename T>
class EFNet {
 public:
  using Rng = std::mt19937_64;

  EFNet(ModelConfig config, const Tensor<float>& embedding)
      : config_(std::move(config)) {
    Rng rng(config_.seed);
    Tensor<T> emb;
    if constexpr (std::is_same_v<T, float>) {
      emb = embedding.clone();
    } else {
      emb = embedding.template cast<T>();
    }
    params_ = EFNetParams<T>::init(config_, std::move(emb), rng);
  }

  const ModelConfig& config() const { return config_; }
  EFNetParams<T>& params() { return params_; }
  const EFNetParams<T>& params() const { return params_; }

  // Full pipeline for one sample. `params` may be a tape-bound copy of
  // params(); `rng` is only drawn from when `train` is set.
  ForwardOutput<T> forward(const EncodedSample& s, const EFNetParams<T>& p,
                           bool train, Rng* rng = nullptr,
                           bool want_trace = false) const {
    if (train && config_.dropout > 0.0 && rng == nullptr) {
      throw ConfigError("training forward needs a random generator");
    }
    const std::size_t n = s.tokens.size();
    if (n == 0 || s.mask.size() != n) {
      throw InputError("sample has no tokens or a mismatched mask");
    }
    if (!config_.text_only && !s.regions) {
      throw InputError("multimodal model needs image features");
    }
    const double rate = train ? config_.dropout : 0.0;
    Rng dummy(0);
    Rng& r = rng ? *rng : dummy;

    auto ctx = detail::stage("encode_context", [&] {
      const Tensor<T> wc = ops::gather_rows(p.embedding, s.tokens);
      const Tensor<T> pc =
          position_embeddings(s.span_start, s.span_end, n, p.position);
      return encode_context(ops::dropout(ops::concat<T>({wc, pc}), rate,
                                         train, r),
                            p.context_mhsa, s.mask);
    });

    const Tensor<T> h_ta = detail::stage("bigru_encode", [&] {
      if (s.span_end <= s.span_start || s.span_end > n) {
        throw InputError("invalid target span");
      }
      if (s.aspect.empty()) throw InputError("empty aspect");
      std::vector<std::size_t> target(s.tokens.begin() + s.span_start,
                                      s.tokens.begin() + s.span_end);
      const Tensor<T> wt = ops::gather_rows(p.embedding, target);
      const Tensor<T> wa =
          ops::mean_pool(ops::gather_rows(p.embedding, s.aspect));
      return bigru_encode(wt, wa, p.gru_fwd, p.gru_bwd);
    });

    std::optional<Tensor<T>> h_i, h_att;
    std::optional<Tensor<T>> region_weights;
    if (!config_.text_only) {
      auto vis = detail::stage("encode_visual", [&] {
        return encode_visual<T>(*s.regions, p.capsule);
      });
      h_i = vis.capsules;
      auto ia = detail::stage("image_attention", [&] {
        return image_attention(h_ta, vis.regions, p.w_ta, p.w_r);
      });
      h_att = ia.output;
      region_weights = ia.weights;
    }

    auto inter = detail::stage(
        "interact", [&] { return interact(h_ta, ctx.states, h_i, p, s.mask); });

    std::optional<Tensor<T>> h_tai;
    if (inter.image) h_tai = inter.image->output;
    auto fused = detail::stage("fuse", [&] {
      return fuse(h_ta, inter.context.output, h_tai, ctx.pooled, h_att,
                  p.fusion);
    });

    ForwardOutput<T> out = detail::stage("classify", [&] {
      const Tensor<T> o =
          ops::dropout(fused.representation, rate, train, r);
      return classify(o, p.w_o, p.b_o);
    });

    if (want_trace) {
      AttentionTrace<T> trace;
      trace.context_self = detail::detach_all(ctx.weights);
      trace.interact_context = detail::detach_all(inter.context.weights);
      if (inter.image)
        trace.interact_image = detail::detach_all(inter.image->weights);
      trace.fusion = detail::detach_all(fused.attention.weights);
      if (region_weights) trace.image_regions = region_weights->detach();
      out.trace = std::move(trace);
    }
    return out;
  }

  ForwardOutput<T> forward(const EncodedSample& s, bool train = false,
                           Rng* rng = nullptr, bool want_trace = false) const {
    return forward(s, params_, train, rng, want_trace);
  }

  // Batch objective: mean cross-entropy plus the L2 term over every
  // parameter, recorded on `tape`.
  Tensor<T> batch_loss(const std::vector<EncodedSample>& batch, Tape<T>& tape,
                       bool train, Rng* rng, EFNetParams<T>* bound_out = nullptr,
                       std::vector<ForwardOutput<T>>* outputs = nullptr) const {
    EFNetParams<T> bound = params_.bind(tape);
    std::vector<Tensor<T>> probs;
    std::vector<int> labels;
    for (const auto& s : batch) {
      auto fo = forward(s, bound, train, rng);
      probs.push_back(fo.probs);
      labels.push_back(s.label);
      if (outputs) outputs->push_back(fo);
    }
    Tensor<T> l = loss(probs, labels, bound, static_cast<T>(config_.l2_lambda));
    if (bound_out) *bound_out = bound;
    return l;
  }

 private:
  ModelConfig config_;
  EFNetParams<T> params_;
};

}  // namespace efnet

#endif  // EFNET_MODEL_HPP_
