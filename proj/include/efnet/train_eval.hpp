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

#ifndef EFNET_TRAIN_EVAL_HPP_
#define EFNET_TRAIN_EVAL_HPP_

#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "efnet/checkpoint.hpp"
#include "efnet/data_io.hpp"
#include "efnet/error.hpp"
#include "efnet/model.hpp"
#include "efnet/tensor.hpp"

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

namespace efnet {

// ---------------------------------------------------------------------------
// Adaptive-moment optimizer

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerState {
  AdamOptions options;
  std::map<std::string, std::vector<T>> first, second;
  std::uint64_t step = 0;
};

template <typename T>
using GradientMap = std::map<std::string, std::vector<T>>;

// Gradients of `bound` (a tape-bound copy of the model parameters) keyed by
// parameter name; parameters the loss never reached get zeros.
template <typename T>
GradientMap<T> named_gradients(const EFNetParams<T>& bound,
                               const Gradients<T>& grads) {
  GradientMap<T> out;
  bound.for_each([&](const std::string& name, const Tensor<T>& t) {
    out[name] = grads.of_or_zero(t);
  });
  return out;
}

// One bias-corrected moment update. The embedding padding row is re-zeroed
// afterwards.
template <typename T>
void adam_step(EFNetParams<T>& params, const GradientMap<T>& grads,
               OptimizerState<T>& state) {
  ++state.step;
  const AdamOptions& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  params.for_each([&](const std::string& name, Tensor<T>& p) {
    auto git = grads.find(name);
    if (git == grads.end()) {
      throw InvariantViolation("no gradient for parameter '" + name + "'");
    }
    const auto& g = git->second;
    if (g.size() != p.size()) {
      throw InvariantViolation("gradient for '" + name + "' has " +
                               std::to_string(g.size()) + " entries, parameter " +
                               shape_str(p.shape()));
    }
    auto& m = state.first[name];
    auto& v = state.second[name];
    if (m.empty()) {
      m.assign(p.size(), T(0));
      v.assign(p.size(), T(0));
    }
    auto w = p.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = static_cast<T>(o.beta1 * m[i] + (1.0 - o.beta1) * g[i]);
      v[i] = static_cast<T>(o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i]);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] = static_cast<T>(w[i] - o.lr * mhat / (std::sqrt(vhat) + o.eps));
    }
  });
  if (!params.embedding.empty()) {
    auto e = params.embedding.mutable_data();
    std::fill_n(e.begin() + EmbeddingTable::kPad * params.embedding.dim(1),
                params.embedding.dim(1), T(0));
  }
}

// ---------------------------------------------------------------------------
// Metrics

struct EvalReport {
  double accuracy = 0;
  double macro_f1 = 0;
  std::array<double, kNumClasses> precision{}, recall{}, f1{};
  // confusion[truth][prediction]
  std::array<std::array<std::size_t, kNumClasses>, kNumClasses> confusion{};
  std::size_t total = 0;
};

// Per-class F1 with 0/0 precision or recall counted as 0; macro-F1 is their
// unweighted mean.
inline EvalReport compute_report(const std::vector<int>& truth,
                                 const std::vector<int>& predicted) {
  if (truth.empty()) throw InputError("cannot evaluate an empty dataset");
  if (truth.size() != predicted.size()) {
    throw InputError("truth and predictions differ in length");
  }
  EvalReport r;
  r.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || t >= static_cast<int>(kNumClasses) || p < 0 ||
        p >= static_cast<int>(kNumClasses)) {
      throw InputError("label out of range in evaluation");
    }
    ++r.confusion[t][p];
  }
  std::size_t correct = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    correct += r.confusion[k][k];
    std::size_t predicted_k = 0, actual_k = 0;
    for (std::size_t j = 0; j < kNumClasses; ++j) {
      predicted_k += r.confusion[j][k];
      actual_k += r.confusion[k][j];
    }
    const double tp = static_cast<double>(r.confusion[k][k]);
    r.precision[k] = predicted_k ? tp / static_cast<double>(predicted_k) : 0.0;
    r.recall[k] = actual_k ? tp / static_cast<double>(actual_k) : 0.0;
    const double denom = r.precision[k] + r.recall[k];
    r.f1[k] = denom > 0 ? 2.0 * r.precision[k] * r.recall[k] / denom : 0.0;
    r.macro_f1 += r.f1[k];
  }
  r.macro_f1 /= static_cast<double>(kNumClasses);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
  return r;
}

inline int argmax(std::span<const float> p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}
inline int argmax(std::span<const double> p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

namespace detail {

// Flushes subnormal floats to zero for its lifetime and then restores the
// previous mode. Saturated attention and tiny late-training gradients
// otherwise hit the slow subnormal path.
class FlushSubnormals {
 public:
  FlushSubnormals() {
#if defined(__SSE2__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040u);
#endif
  }
  ~FlushSubnormals() {
#if defined(__SSE2__)
    _mm_setcsr(saved_);
#endif
  }
  FlushSubnormals(const FlushSubnormals&) = delete;
  FlushSubnormals& operator=(const FlushSubnormals&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace detail

template <typename T>
std::vector<int> predict(const EFNet<T>& model,
                         const std::vector<EncodedSample>& data) {
  detail::FlushSubnormals ftz;
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(argmax(model.forward(s).probs.data()));
  return out;
}

template <typename T>
EvalReport evaluate(const EFNet<T>& model, const std::vector<EncodedSample>& data) {
  if (data.empty()) throw InputError("cannot evaluate an empty dataset");
  std::vector<int> truth;
  for (const auto& s : data) truth.push_back(s.label);
  return compute_report(truth, predict(model, data));
}

inline std::string report_json(const EvalReport& r, const std::string& split) {
  nlohmann::json j;
  j["split"] = split;
  j["total"] = r.total;
  j["accuracy"] = r.accuracy;
  j["macro_f1"] = r.macro_f1;
  j["label_order"] = {"negative", "neutral", "positive"};
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["confusion"] = r.confusion;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  // Stop once the monitored split reaches this accuracy.
  std::optional<double> stop_at_accuracy;
  std::optional<std::string> checkpoint_path;
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0;
  double accuracy = 0;
  double macro_f1 = 0;
};

inline constexpr const char* kMetricsHeader = "epoch,split,loss,accuracy,macro_f1";

inline std::string format_metrics_row(const MetricsRow& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f", r.epoch, r.split.c_str(),
                r.loss, r.accuracy, r.macro_f1);
  return buf;
}

inline std::string format_metrics(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

template <typename T>
struct TrainResult {
  std::vector<MetricsRow> log;
  EFNetParams<T> best;  // parameters of the best monitored accuracy
  double best_accuracy = -1;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

// Mini-batch training. Each row of the log holds the epoch's mean training
// objective and the accuracy / macro-F1 on `val` (or on `train` when `val`
// is empty). The best-accuracy parameters are kept, and written to
// options.checkpoint_path when set; the initial parameters count as epoch 0.
template <typename T>
TrainResult<T> train(EFNet<T>& model, const std::vector<EncodedSample>& train_set,
                     const std::vector<EncodedSample>& val_set,
                     const TrainOptions& options) {
  if (train_set.empty() && options.epochs > 0) {
    throw InputError("training set is empty");
  }
  detail::FlushSubnormals ftz;
  std::mt19937_64 rng(options.seed);
  OptimizerState<T> state;
  state.options.lr = options.lr;
  const auto& monitored = val_set.empty() ? train_set : val_set;
  const std::string split = val_set.empty() ? "train" : "val";

  TrainResult<T> result;
  result.best = model.params().clone();
  if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, model.params());

  BatchOptions bo;
  bo.batch_size = options.batch_size;
  bo.max_len = std::numeric_limits<std::size_t>::max();
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto batches = batch_encoded(train_set, bo, rng);
    double loss_sum = 0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      Tape<T> tape;
      EFNetParams<T> bound;
      const auto samples = batches[b].samples();
      const Tensor<T> l = model.batch_loss(samples, tape, true, &rng, &bound);
      const double value = static_cast<double>(l[0]);
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(b) + " (first sample index " +
                            std::to_string(batches[b].indices.front()) + ")");
      }
      const auto grads = named_gradients(bound, tape.backward(l));
      adam_step(model.params(), grads, state);
      loss_sum += value * static_cast<double>(samples.size());
      seen += samples.size();
    }
    const EvalReport rep = evaluate(model, monitored);
    result.log.push_back({epoch, split, loss_sum / static_cast<double>(seen),
                          rep.accuracy, rep.macro_f1});
    result.epochs_run = epoch;
    if (rep.accuracy > result.best_accuracy) {
      result.best_accuracy = rep.accuracy;
      result.best_epoch = epoch;
      result.best = model.params().clone();
      if (options.checkpoint_path) save_checkpoint(*options.checkpoint_path, model.params());
    }
    if (options.stop_at_accuracy && rep.accuracy >= *options.stop_at_accuracy) break;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Head-count sweep

struct SweepRow {
  std::size_t heads = 0;
  double accuracy = 0;
  double macro_f1 = 0;
};

inline std::string format_sweep(const std::vector<SweepRow>& rows) {
  std::string out = "heads,accuracy,macro_f1\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", r.heads, r.accuracy, r.macro_f1);
    out += buf;
  }
  return out;
}

// Trains one model per head count on shared data and seed and reports the
// final validation metrics. Every head count is checked against the model
// width before any training starts.
template <typename T>
std::vector<SweepRow> head_sweep(const ModelConfig& base,
                                 const std::vector<std::size_t>& heads,
                                 const Tensor<float>& embedding,
                                 const std::vector<EncodedSample>& train_set,
                                 const std::vector<EncodedSample>& val_set,
                                 TrainOptions options) {
  if (heads.empty()) throw ConfigError("head list is empty");
  for (auto h : heads) MHAParams<T>::check_heads(base.hidden_dim, h);
  if (val_set.empty()) throw InputError("head sweep needs a validation set");
  options.checkpoint_path.reset();
  std::vector<SweepRow> rows;
  for (auto h : heads) {
    ModelConfig cfg = base;
    cfg.heads = h;
    EFNet<T> model(cfg, embedding);
    train(model, train_set, val_set, options);
    const EvalReport rep = evaluate(model, val_set);
    rows.push_back({h, rep.accuracy, rep.macro_f1});
  }
  return rows;
}

}  // namespace efnet

#endif  // EFNET_TRAIN_EVAL_HPP_
