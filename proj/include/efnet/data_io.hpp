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

#ifndef EFNET_DATA_IO_HPP_
#define EFNET_DATA_IO_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "efnet/binary_io.hpp"
#include "efnet/error.hpp"
#include "efnet/layers.hpp"
#include "efnet/model.hpp"
#include "efnet/tensor.hpp"

namespace efnet {

inline int parse_label(const std::string& s) {
  if (s == "negative") return 0;
  if (s == "neutral") return 1;
  if (s == "positive") return 2;
  return -1;
}

struct Sample {
  std::string id;
  std::vector<std::string> tokens;
  std::size_t target_start = 0;
  std::size_t target_end = 0;  // exclusive
  std::vector<std::string> aspect_tokens;
  int label = 0;
  std::optional<std::string> image_ref;

  bool operator==(const Sample&) const = default;
};

// ---------------------------------------------------------------------------
// Embeddings

class EmbeddingTable {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnknown = 1;

  EmbeddingTable() = default;

  // `vectors` holds one row per token, in order.
  EmbeddingTable(std::vector<std::string> tokens, std::size_t dim,
                 const std::vector<float>& vectors, std::uint64_t seed = 0)
      : tokens_(std::move(tokens)), dim_(dim) {
    if (dim_ == 0) throw InputError("embedding dimension must be positive");
    const std::size_t v = tokens_.size() + 2;
    std::vector<float> m(v * dim_, 0.0f);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> unk(-0.05f, 0.05f);
    for (std::size_t j = 0; j < dim_; ++j) m[kUnknown * dim_ + j] = unk(rng);
    std::copy(vectors.begin(), vectors.end(), m.begin() + 2 * dim_);
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      index_.emplace(tokens_[i], i + 2);
    matrix_ = Tensor<float>({v, dim_}, std::move(m));
  }

  std::size_t lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnknown : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  std::size_t vocab_size() const { return matrix_.empty() ? 0 : matrix_.dim(0); }
  std::size_t dim() const { return dim_; }
  const Tensor<float>& matrix() const { return matrix_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t dim_ = 0;
  Tensor<float> matrix_;
};

// One token followed by d whitespace-separated reals per line. The unknown
// row is drawn uniformly from +-0.05 with `seed`; the padding row is zero.
// Repeated tokens keep their first vector.
inline EmbeddingTable load_embeddings(const std::string& path,
                                      std::uint64_t seed = 0) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embeddings '" + path + "'");
  std::vector<std::string> tokens;
  std::vector<float> values;
  std::unordered_map<std::string, bool> seen;
  std::size_t dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;
    std::vector<float> row;
    std::string field;
    while (ls >> field) {
      char* end = nullptr;
      const float v = std::strtof(field.c_str(), &end);
      if (end == field.c_str() || *end != '\0') {
        throw ParseError("embeddings line " + std::to_string(lineno) +
                             ": '" + field + "' is not a real number",
                         lineno);
      }
      row.push_back(v);
    }
    if (row.empty()) {
      throw ParseError("embeddings line " + std::to_string(lineno) +
                           " has no vector",
                       lineno);
    }
    if (dim == 0) dim = row.size();
    if (row.size() != dim) {
      throw ParseError("embeddings line " + std::to_string(lineno) + " has " +
                           std::to_string(row.size()) +
                           " values, expected " + std::to_string(dim),
                       lineno);
    }
    if (seen.count(token)) continue;
    seen[token] = true;
    tokens.push_back(token);
    values.insert(values.end(), row.begin(), row.end());
  }
  if (tokens.empty()) throw InputError("embeddings file '" + path + "' is empty");
  return EmbeddingTable(std::move(tokens), dim, values, seed);
}

inline void write_embeddings(const std::string& path,
                             const std::vector<std::string>& tokens,
                             std::size_t dim, const std::vector<float>& values) {
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out += tokens[i];
    for (std::size_t j = 0; j < dim; ++j) {
      std::snprintf(buf, sizeof buf, " %.9g", values[i * dim + j]);
      out += buf;
    }
    out += '\n';
  }
  binary::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Datasets (one JSON object per line)

inline Sample parse_sample(const std::string& line, std::size_t record) {
  auto fail = [&](const std::string& why) -> ParseError {
    return ParseError("dataset record " + std::to_string(record) + ": " + why,
                      record);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  if (!j.is_object()) throw fail("not an object");
  Sample s;
  try {
    s.id = j.at("id").is_string() ? j.at("id").get<std::string>()
                                  : j.at("id").dump();
    s.tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto& t = j.at("target");
    const auto start = t.at("start").get<long long>();
    const auto end = t.at("end").get<long long>();
    if (start < 0 || end < 0) throw fail("negative target index");
    s.target_start = static_cast<std::size_t>(start);
    s.target_end = static_cast<std::size_t>(end);
    const auto& a = j.at("aspect");
    if (a.is_string()) {
      std::istringstream as(a.get<std::string>());
      std::string w;
      while (as >> w) s.aspect_tokens.push_back(w);
    } else {
      s.aspect_tokens = a.get<std::vector<std::string>>();
    }
    const auto label = j.at("label").get<std::string>();
    s.label = parse_label(label);
    if (s.label < 0) throw fail("unknown label '" + label + "'");
    if (j.contains("image") && !j.at("image").is_null()) {
      s.image_ref = j.at("image").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("bad field (") + e.what() + ")");
  }
  if (s.tokens.empty()) throw fail("no tokens");
  if (s.aspect_tokens.empty()) throw fail("no aspect tokens");
  if (!(s.target_start < s.target_end && s.target_end <= s.tokens.size())) {
    throw fail("target span [" + std::to_string(s.target_start) + ", " +
               std::to_string(s.target_end) + ") out of range for " +
               std::to_string(s.tokens.size()) + " tokens");
  }
  return s;
}

inline std::vector<Sample> load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset '" + path + "'");
  std::vector<Sample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_sample(line, out.size()));
  }
  return out;
}

inline std::string sample_to_json(const Sample& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["tokens"] = s.tokens;
  j["target"] = {{"start", s.target_start}, {"end", s.target_end}};
  j["aspect"] = s.aspect_tokens;
  j["label"] = polarity_name(s.label);
  if (s.image_ref) j["image"] = *s.image_ref;
  return j.dump();
}

inline void write_dataset(const std::string& path,
                          const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) out += sample_to_json(s) + "\n";
  binary::write_file(path, out);
}

// ---------------------------------------------------------------------------
// Image features: "EFVF" | version u32 = 1 | ndims u32 = 3 |
// dims u32[3] = (7, 7, 2048) | row-major binary32 payload; little-endian.

inline constexpr char kFeatureMagic[4] = {'E', 'F', 'V', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::string encode_image_features(const Tensor<float>& grid) {
  if (grid.shape() != Shape{kGridSide, kGridSide, kRegionDim}) {
    throw DimensionError("feature grid must be 7x7x2048, got " +
                         shape_str(grid.shape()));
  }
  std::string out(kFeatureMagic, 4);
  binary::put_u32(out, kFeatureVersion);
  binary::put_u32(out, 3);
  for (auto d : grid.shape()) binary::put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + grid.size() * 4);
  for (float v : grid.data()) binary::put_f32(out, v);
  return out;
}

inline Tensor<float> decode_image_features(std::string bytes) {
  binary::Reader in(std::move(bytes));
  std::string magic;
  if (!in.read_bytes(4, magic) || magic != std::string(kFeatureMagic, 4)) {
    throw FormatError("magic", "expected \"EFVF\"");
  }
  std::uint32_t version = 0, ndims = 0;
  if (!in.read_u32(version) || version != kFeatureVersion) {
    throw FormatError("version", "expected version 1, got " + std::to_string(version));
  }
  if (!in.read_u32(ndims) || ndims != 3) {
    throw FormatError("ndims", "expected 3 dims, got " + std::to_string(ndims));
  }
  const std::uint32_t expected[3] = {kGridSide, kGridSide, kRegionDim};
  for (int i = 0; i < 3; ++i) {
    std::uint32_t d = 0;
    if (!in.read_u32(d) || d != expected[i]) {
      throw FormatError("dims", "expected (7, 7, 2048), got extent " +
                                    std::to_string(d) + " at axis " +
                                    std::to_string(i));
    }
  }
  const std::size_t n = kRegions * kRegionDim;
  if (in.remaining() != n * 4) {
    throw FormatError("payload", "expected " + std::to_string(n * 4) +
                                     " bytes, found " +
                                     std::to_string(in.remaining()));
  }
  std::vector<float> values;
  in.read_f32s(n, values);
  return Tensor<float>({kGridSide, kGridSide, kRegionDim}, std::move(values));
}

inline void write_image_features(const std::string& path,
                                 const Tensor<float>& grid) {
  binary::write_file(path, encode_image_features(grid));
}

inline Tensor<float> load_image_features(const std::string& path) {
  return decode_image_features(binary::read_file(path));
}

// Memoizes feature files by resolved path.
class FeatureStore {
 public:
  explicit FeatureStore(std::filesystem::path base_dir = {})
      : base_(std::move(base_dir)) {}

  const Tensor<float>& get(const std::string& ref) {
    std::filesystem::path p(ref);
    if (p.is_relative() && !base_.empty()) p = base_ / p;
    const std::string key = p.lexically_normal().string();
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    return cache_.emplace(key, load_image_features(key)).first->second;
  }

 private:
  std::filesystem::path base_;
  std::map<std::string, Tensor<float>> cache_;
};

// ---------------------------------------------------------------------------
// Encoding and batching

// Shortens an over-long sentence to `max_len` tokens with the window centred
// on the target span.
inline std::pair<std::size_t, std::size_t> truncation_window(
    const Sample& s, std::size_t max_len) {
  const std::size_t n = s.tokens.size();
  if (n <= max_len) return {0, n};
  const std::size_t span = s.target_end - s.target_start;
  if (span > max_len) {
    throw InputError("target span of sample '" + s.id + "' (" +
                     std::to_string(span) + " tokens) exceeds max_len " +
                     std::to_string(max_len));
  }
  const std::size_t slack = max_len - span;
  std::size_t begin = s.target_start >= slack / 2 ? s.target_start - slack / 2 : 0;
  begin = std::min(begin, n - max_len);
  return {begin, begin + max_len};
}

// Vocabulary lookup, truncation and feature loading for one sample. Pass a
// null store for text-only models.
inline EncodedSample encode_sample(const Sample& s, const EmbeddingTable& table,
                                   std::size_t max_len, FeatureStore* features) {
  const auto [begin, end] = truncation_window(s, max_len);
  EncodedSample e;
  for (std::size_t i = begin; i < end; ++i) e.tokens.push_back(table.lookup(s.tokens[i]));
  e.mask.assign(e.tokens.size(), 1);
  e.span_start = s.target_start - begin;
  e.span_end = s.target_end - begin;
  for (const auto& a : s.aspect_tokens) e.aspect.push_back(table.lookup(a));
  e.label = s.label;
  if (features != nullptr) {
    if (!s.image_ref) {
      throw InputError("sample '" + s.id + "' has no image in multimodal mode");
    }
    e.regions = features->get(*s.image_ref);
  }
  return e;
}

inline std::vector<EncodedSample> encode_samples(
    const std::vector<Sample>& samples, const EmbeddingTable& table,
    std::size_t max_len, FeatureStore* features) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode_sample(s, table, max_len, features));
  return out;
}

struct Batch {
  std::size_t length = 0;                 // L, padded width
  std::vector<std::size_t> tokens;        // [B x L], padding index 0
  Mask mask;                              // [B x L]
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::vector<std::vector<std::size_t>> aspects;
  std::vector<int> labels;
  std::vector<std::optional<Tensor<float>>> images;
  std::vector<std::size_t> indices;       // positions in the source list

  std::size_t size() const { return labels.size(); }

  EncodedSample sample(std::size_t i) const {
    EncodedSample e;
    e.tokens.assign(tokens.begin() + i * length, tokens.begin() + (i + 1) * length);
    e.mask.assign(mask.begin() + i * length, mask.begin() + (i + 1) * length);
    e.span_start = spans[i].first;
    e.span_end = spans[i].second;
    e.aspect = aspects[i];
    e.label = labels[i];
    e.regions = images[i];
    return e;
  }

  std::vector<EncodedSample> samples() const {
    std::vector<EncodedSample> out;
    for (std::size_t i = 0; i < size(); ++i) out.push_back(sample(i));
    return out;
  }
};

struct BatchOptions {
  std::size_t batch_size = 128;
  std::size_t max_len = 36;
  bool shuffle = true;
};

// Seeded shuffle into fixed-size batches (the last may be smaller), each
// padded to its longest sentence.
template <typename Rng>
std::vector<Batch> batch_encoded(const std::vector<EncodedSample>& samples,
                                 const BatchOptions& opts, Rng& rng) {
  if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (opts.shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> out;
  for (std::size_t b = 0; b < order.size(); b += opts.batch_size) {
    const std::size_t e = std::min(order.size(), b + opts.batch_size);
    Batch batch;
    for (std::size_t i = b; i < e; ++i)
      batch.length = std::max(batch.length, samples[order[i]].tokens.size());
    if (batch.length > opts.max_len) {
      throw InputError("encoded sample longer than max_len");
    }
    for (std::size_t i = b; i < e; ++i) {
      const EncodedSample& s = samples[order[i]];
      const std::size_t pad = batch.length - s.tokens.size();
      batch.tokens.insert(batch.tokens.end(), s.tokens.begin(), s.tokens.end());
      batch.tokens.insert(batch.tokens.end(), pad, EmbeddingTable::kPad);
      batch.mask.insert(batch.mask.end(), s.tokens.size(), 1);
      batch.mask.insert(batch.mask.end(), pad, 0);
      batch.spans.emplace_back(s.span_start, s.span_end);
      batch.aspects.push_back(s.aspect);
      batch.labels.push_back(s.label);
      batch.images.push_back(s.regions);
      batch.indices.push_back(order[i]);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

template <typename Rng>
std::vector<Batch> make_batches(const std::vector<Sample>& samples,
                                const EmbeddingTable& table,
                                const BatchOptions& opts, Rng& rng,
                                FeatureStore* features = nullptr) {
  return batch_encoded(encode_samples(samples, table, opts.max_len, features),
                       opts, rng);
}

}  // namespace efnet

#endif  // EFNET_DATA_IO_HPP_
