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

#ifndef EFNET_SYNTH_HPP_
#define EFNET_SYNTH_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "efnet/data_io.hpp"
#include "efnet/error.hpp"
#include "efnet/layers.hpp"

// Planted-cue corpus. Every sample carries exactly one cue token adjacent to
// its target span. A polar cue decides the label directly; a visual cue
// defers to the image, whose cue cell is raised slightly on every channel
// and strongly on the channel band of the label. The rule is emitted as JSON so that any sample can be
// relabelled without the generator.
namespace efnet::synth {

struct GridRule {
  enum class Kind { kNone, kRandom, kFixed };
  Kind kind = Kind::kRandom;
  std::size_t row = 3, col = 3;

  static GridRule parse(const std::string& s) {
    GridRule g;
    if (s == "none") {
      g.kind = Kind::kNone;
    } else if (s == "random") {
      g.kind = Kind::kRandom;
    } else if (s.rfind("fixed:", 0) == 0) {
      g.kind = Kind::kFixed;
      unsigned r = 0, c = 0;
      char extra = 0;
      if (std::sscanf(s.c_str() + 6, "%u,%u%c", &r, &c, &extra) != 2 ||
          r >= kGridSide || c >= kGridSide) {
        throw ConfigError("grid rule '" + s + "' must be fixed:R,C with R,C < 7");
      }
      g.row = r;
      g.col = c;
    } else {
      throw ConfigError("unknown grid rule '" + s + "' (none|random|fixed:R,C)");
    }
    return g;
  }

  std::string str() const {
    switch (kind) {
      case Kind::kNone: return "none";
      case Kind::kRandom: return "random";
      case Kind::kFixed:
        return "fixed:" + std::to_string(row) + "," + std::to_string(col);
    }
    return "?";
  }
};

struct Options {
  std::uint64_t seed = 1;
  std::size_t n = 64;
  std::size_t vocab_size = 200;  // filler words
  GridRule grid;
  std::size_t embed_dim = 50;
  // Share of image-bearing samples whose label is carried by the image.
  double visual_fraction = 0.5;
};

inline const std::vector<std::vector<std::string>>& text_cues() {
  static const std::vector<std::vector<std::string>> cues = {
      {"awful", "terrible", "grim", "tragic"},
      {"okay", "routine", "plain", "usual"},
      {"great", "lovely", "brilliant", "joyful"}};
  return cues;
}

inline const std::vector<std::string>& visual_cues() {
  static const std::vector<std::string> cues = {"pictured", "shown", "seen"};
  return cues;
}

inline const std::vector<std::string>& aspect_words() {
  static const std::vector<std::string> a = {
      "general", "event", "phenomenon", "environment", "experience",
      "appearance", "achievement", "speech", "other"};
  return a;
}

inline constexpr std::size_t kEntities = 30;
inline constexpr std::size_t kCueWindow = 1;
inline constexpr float kNoiseLevel = 0.1f;
inline constexpr float kCellLevel = 0.1f;
inline constexpr float kBrightLevel = 1.0f;

// Channel band [begin, end) lit for a label.
inline std::pair<std::size_t, std::size_t> band(int label) {
  const std::size_t w = kRegionDim / kNumClasses;
  const std::size_t b = static_cast<std::size_t>(label) * w;
  const std::size_t e = label + 1 == static_cast<int>(kNumClasses) ? kRegionDim : b + w;
  return {b, e};
}

struct Corpus {
  std::vector<Sample> samples;
  std::vector<Tensor<float>> images;  // parallel to samples; empty if none
  std::vector<std::string> vocab;
  std::vector<float> vectors;  // [vocab x embed_dim]
  std::size_t embed_dim = 0;
  nlohmann::json rule;
};

inline nlohmann::json rule_json(const Options& o) {
  nlohmann::json r;
  r["label_order"] = {"negative", "neutral", "positive"};
  r["cue_window"] = kCueWindow;
  r["text_cues"] = {{"negative", text_cues()[0]},
                    {"neutral", text_cues()[1]},
                    {"positive", text_cues()[2]}};
  r["visual_cues"] = visual_cues();
  nlohmann::json bands = nlohmann::json::array();
  for (int k = 0; k < static_cast<int>(kNumClasses); ++k) {
    auto [b, e] = band(k);
    bands.push_back({b, e});
  }
  r["visual_bands"] = bands;
  r["grid_rule"] = o.grid.str();
  r["description"] =
      "Exactly one cue token lies within cue_window of the target span. "
      "A text cue gives the label of its list. A visual cue defers to the "
      "image: take the cell with the largest channel sum, then the label "
      "whose visual band has the largest sum in that cell.";
  return r;
}

inline Corpus generate(const Options& o) {
  std::mt19937_64 rng(o.seed);
  Corpus c;
  c.embed_dim = o.embed_dim;
  c.rule = rule_json(o);

  char buf[32];
  std::vector<std::string> fillers, entities;
  for (std::size_t i = 0; i < std::max<std::size_t>(o.vocab_size, 1); ++i) {
    std::snprintf(buf, sizeof buf, "w%03zu", i);
    fillers.push_back(buf);
  }
  for (std::size_t i = 0; i < kEntities; ++i) {
    std::snprintf(buf, sizeof buf, "ent%02zu", i);
    entities.push_back(buf);
  }
  c.vocab = fillers;
  c.vocab.insert(c.vocab.end(), entities.begin(), entities.end());
  for (const auto& list : text_cues()) c.vocab.insert(c.vocab.end(), list.begin(), list.end());
  c.vocab.insert(c.vocab.end(), visual_cues().begin(), visual_cues().end());
  c.vocab.insert(c.vocab.end(), aspect_words().begin(), aspect_words().end());
  std::normal_distribution<float> embed(0.0f, 0.5f);
  c.vectors.resize(c.vocab.size() * o.embed_dim);
  for (auto& v : c.vectors) v = embed(rng);

  auto pick = [&](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };
  std::normal_distribution<double> length(13.0, 3.0);
  std::uniform_real_distribution<float> noise(0.0f, kNoiseLevel);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Balanced labels in a seeded order.
  std::vector<int> labels(o.n);
  for (std::size_t i = 0; i < o.n; ++i) labels[i] = static_cast<int>(i % kNumClasses);
  std::shuffle(labels.begin(), labels.end(), rng);

  const bool images = o.grid.kind != GridRule::Kind::kNone;
  for (std::size_t i = 0; i < o.n; ++i) {
    Sample s;
    std::snprintf(buf, sizeof buf, "s%05zu", i);
    s.id = buf;
    s.label = labels[i];
    const std::size_t len = static_cast<std::size_t>(
        std::clamp(std::lround(length(rng)), 4L, 31L));
    const std::size_t span = 1 + pick(2);
    for (std::size_t t = 0; t < len; ++t) s.tokens.push_back(fillers[pick(fillers.size())]);
    // Leave room for a cue on at least one side.
    const std::size_t start = pick(len - span);
    s.target_start = start;
    s.target_end = start + span;
    for (std::size_t t = start; t < start + span; ++t)
      s.tokens[t] = entities[pick(entities.size())];
    const bool visual = images && unit(rng) < o.visual_fraction;
    const std::string cue = visual
                                ? visual_cues()[pick(visual_cues().size())]
                                : text_cues()[s.label][pick(text_cues()[s.label].size())];
    const bool after = s.target_end < len && (start == 0 || unit(rng) < 0.5);
    s.tokens[after ? s.target_end : start - 1] = cue;
    s.aspect_tokens = {aspect_words()[pick(aspect_words().size())]};

    if (images) {
      s.image_ref = "features/" + s.id + ".efvf";
      Tensor<float> grid({kGridSide, kGridSide, kRegionDim});
      auto g = grid.mutable_data();
      for (auto& v : g) v = noise(rng);
      std::size_t r = o.grid.row, col = o.grid.col;
      if (o.grid.kind == GridRule::Kind::kRandom) {
        r = pick(kGridSide);
        col = pick(kGridSide);
      }
      auto [b, e] = band(s.label);
      float* cell = g.data() + (r * kGridSide + col) * kRegionDim;
      for (std::size_t ch = 0; ch < kRegionDim; ++ch) cell[ch] += kCellLevel;
      for (std::size_t ch = b; ch < e; ++ch) cell[ch] += kBrightLevel;
      c.images.push_back(std::move(grid));
    }
    c.samples.push_back(std::move(s));
  }
  return c;
}

struct Files {
  std::filesystem::path dataset, train, val, test, embeddings, rule;
};

// Split sizes for n samples: 70% train, 15% validation, remainder test.
inline std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const std::size_t train = n * 70 / 100;
  const std::size_t val = n * 15 / 100;
  return {train, val, n - train - val};
}

inline Files write(const Corpus& c, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw InputError("cannot create output directory '" + dir.string() + "'");
  }
  Files f{dir / "dataset.jsonl", dir / "train.jsonl", dir / "val.jsonl",
          dir / "test.jsonl",    dir / "embeddings.txt", dir / "rule.json"};
  write_dataset(f.dataset.string(), c.samples);
  const auto sizes = split_sizes(c.samples.size());
  auto it = c.samples.begin();
  write_dataset(f.train.string(), {it, it + sizes[0]});
  it += sizes[0];
  write_dataset(f.val.string(), {it, it + sizes[1]});
  it += sizes[1];
  write_dataset(f.test.string(), {it, c.samples.end()});
  write_embeddings(f.embeddings.string(), c.vocab, c.embed_dim, c.vectors);
  binary::write_file(f.rule.string(), c.rule.dump(2) + "\n");
  if (!c.images.empty()) {
    std::filesystem::create_directories(dir / "features", ec);
    if (ec) throw InputError("cannot create feature directory");
    for (std::size_t i = 0; i < c.samples.size(); ++i) {
      write_image_features((dir / *c.samples[i].image_ref).string(), c.images[i]);
    }
  }
  return f;
}

}  // namespace efnet::synth

#endif  // EFNET_SYNTH_HPP_
