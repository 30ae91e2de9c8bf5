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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "efnet/checkpoint.hpp"
#include "efnet/data_io.hpp"
#include "efnet/synth.hpp"
#include "support/oracles.hpp"

namespace efnet {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

void put(const fs::path& p, const std::string& text) { binary::write_file(p.string(), text); }

TEST(Embeddings, CountsPadAndUnknownRows) {
  TempDir dir("emb");
  put(dir / "e.txt", "cat 0.1 0.2 0.3\ndog 1 2 3\n");
  const auto t = load_embeddings((dir / "e.txt").string(), 4);
  EXPECT_EQ(t.vocab_size(), 4u);
  EXPECT_EQ(t.matrix().shape(), (Shape{4, 3}));
  EXPECT_EQ(t.lookup("zebra"), EmbeddingTable::kUnknown);
  const std::size_t cat = t.lookup("cat");
  EXPECT_EQ(t.matrix().at(cat, 0), 0.1f);
  EXPECT_EQ(t.matrix().at(cat, 1), 0.2f);
  EXPECT_EQ(t.matrix().at(cat, 2), 0.3f);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_EQ(t.matrix().at(EmbeddingTable::kPad, j), 0.0f);
    EXPECT_LE(std::abs(t.matrix().at(EmbeddingTable::kUnknown, j)), 0.05f);
  }
  const auto again = load_embeddings((dir / "e.txt").string(), 4);
  EXPECT_EQ(again.matrix().values(), t.matrix().values());
}

TEST(Embeddings, ErrorsNameTheLine) {
  TempDir dir("emb");
  put(dir / "bad.txt", "a 1 2\nb 1 2\nc 1\n");
  try {
    load_embeddings((dir / "bad.txt").string());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), 3u);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  put(dir / "nan.txt", "a 1 x\n");
  EXPECT_THROW(load_embeddings((dir / "nan.txt").string()), ParseError);
  put(dir / "empty.txt", "");
  EXPECT_THROW(load_embeddings((dir / "empty.txt").string()), InputError);
  EXPECT_THROW(load_embeddings((dir / "missing.txt").string()), InputError);
}

TEST(Embeddings, WriteReadRoundTrip) {
  TempDir dir("emb");
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0, 1);
  std::vector<float> v(5 * 7);
  for (auto& x : v) x = n(rng);
  write_embeddings((dir / "r.txt").string(), {"a", "b", "c", "d", "e"}, 7, v);
  const auto t = load_embeddings((dir / "r.txt").string());
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 7; ++j) EXPECT_EQ(t.matrix().at(i + 2, j), v[i * 7 + j]);
}

const char* kRecord =
    R"({"id":"r1","tokens":["a","b","Obama","c","d"],"target":{"start":2,"end":3},"aspect":"event","label":"positive","image":"r1.efvf"})";

TEST(Dataset, ValidRecord) {
  const auto s = parse_sample(kRecord, 0);
  EXPECT_EQ(s.id, "r1");
  EXPECT_EQ(s.target_start, 2u);
  EXPECT_EQ(s.target_end, 3u);
  EXPECT_EQ(s.aspect_tokens, std::vector<std::string>{"event"});
  EXPECT_EQ(s.label, 2);
  EXPECT_EQ(s.image_ref, std::optional<std::string>("r1.efvf"));
}

TEST(Dataset, LabelOrderIsFixed) {
  EXPECT_EQ(parse_label("negative"), 0);
  EXPECT_EQ(parse_label("neutral"), 1);
  EXPECT_EQ(parse_label("positive"), 2);
  EXPECT_EQ(parse_label("great"), -1);
}

TEST(Dataset, ErrorsNameTheRecord) {
  TempDir dir("ds");
  std::string bad = kRecord;
  bad.replace(bad.find("positive"), 8, "great");
  put(dir / "d.jsonl", std::string(kRecord) + "\n\n" + bad + "\n");
  try {
    load_dataset((dir / "d.jsonl").string());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.location(), 1u);
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("great"), std::string::npos);
  }
  std::string span = kRecord;
  span.replace(span.find("\"end\":3"), 7, "\"end\":6");
  EXPECT_THROW(parse_sample(span, 0), ParseError);
  EXPECT_THROW(parse_sample("{not json", 0), ParseError);
  EXPECT_THROW(parse_sample(R"({"id":"x"})", 0), ParseError);
}

TEST(Dataset, EmptyFileIsEmptyList) {
  TempDir dir("ds");
  put(dir / "e.jsonl", "");
  EXPECT_TRUE(load_dataset((dir / "e.jsonl").string()).empty());
}

TEST(Dataset, WriteReadRoundTrip) {
  TempDir dir("ds");
  synth::Options o;
  o.n = 20;
  const auto c = synth::generate(o);
  write_dataset((dir / "d.jsonl").string(), c.samples);
  EXPECT_EQ(load_dataset((dir / "d.jsonl").string()), c.samples);
}

Tensor<float> ramp_grid() {
  std::vector<float> v(kRegions * kRegionDim);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.25f - 3.0f;
  return Tensor<float>({kGridSide, kGridSide, kRegionDim}, std::move(v));
}

std::string field_of(const std::string& bytes) {
  try {
    decode_image_features(bytes);
  } catch (const FormatError& e) {
    return e.field();
  }
  return "";
}

TEST(ImageFeatures, RampRoundTripsExactly) {
  TempDir dir("efvf");
  const auto g = ramp_grid();
  write_image_features((dir / "g.efvf").string(), g);
  const auto back = load_image_features((dir / "g.efvf").string());
  EXPECT_EQ(back.shape(), g.shape());
  EXPECT_EQ(back.values(), g.values());
  const std::string bytes = encode_image_features(g);
  EXPECT_EQ(bytes.size(), 24 + kRegions * kRegionDim * 4);
  EXPECT_EQ(bytes.substr(0, 4), "EFVF");
  EXPECT_EQ(bytes[4], 1);
}

TEST(ImageFeatures, CorruptionNamesTheField) {
  const std::string good = encode_image_features(ramp_grid());
  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(field_of(magic), "magic");
  std::string version = good;
  version[4] = 2;
  EXPECT_EQ(field_of(version), "version");
  std::string ndims = good;
  ndims[8] = 2;
  EXPECT_EQ(field_of(ndims), "ndims");
  std::string dims = good;
  const std::uint32_t half = 1024;
  std::memcpy(dims.data() + 20, &half, 4);
  EXPECT_EQ(field_of(dims), "dims");
  EXPECT_EQ(field_of(good.substr(0, good.size() - 4)), "payload");
  EXPECT_EQ(field_of(good + "abcd"), "payload");
  EXPECT_EQ(field_of(good.substr(0, 10)), "ndims");
  EXPECT_EQ(field_of(good.substr(0, 16)), "dims");
}

TEST(Checkpoint, RoundTripAndCorruption) {
  std::mt19937_64 rng(3);
  const ModelConfig cfg = testing::tiny_config(false);
  EFNet<float> model(cfg, testing::random_embedding(9, cfg.embed_dim, rng));
  const std::string bytes = encode_checkpoint(checkpoint_records(model.params()));
  EXPECT_EQ(bytes.substr(0, 4), "EFCK");
  EFNet<float> other(cfg, testing::random_embedding(9, cfg.embed_dim, rng));
  apply_checkpoint(decode_checkpoint(bytes), other.params());
  std::vector<std::vector<float>> a, b;
  model.params().for_each([&](const std::string&, const Tensor<float>& t) { a.push_back(t.values()); });
  other.params().for_each([&](const std::string&, const Tensor<float>& t) { b.push_back(t.values()); });
  EXPECT_EQ(a, b);

  auto field = [](const std::string& s) {
    try {
      decode_checkpoint(s);
    } catch (const FormatError& e) {
      return e.field();
    }
    return std::string();
  };
  std::string magic = bytes;
  magic[3] = 'Q';
  EXPECT_EQ(field(magic), "magic");
  std::string version = bytes;
  version[4] = 9;
  EXPECT_EQ(field(version), "version");
  EXPECT_EQ(field(bytes.substr(0, bytes.size() - 1)), "payload");
  // First record: name length at 8, name "embedding" at 12, rank at 21.
  std::string rank = bytes;
  rank[21] = 0;
  EXPECT_EQ(field(rank), "rank");
  std::string dims = bytes;
  const std::uint32_t zero = 0;
  std::memcpy(dims.data() + 25, &zero, 4);
  EXPECT_EQ(field(dims), "dims");
}

TEST(Checkpoint, ShapeMismatchIsIncompatible) {
  std::mt19937_64 rng(4);
  ModelConfig cfg = testing::tiny_config(false);
  EFNet<float> model(cfg, testing::random_embedding(9, cfg.embed_dim, rng));
  const auto records = checkpoint_records(model.params());
  cfg.hidden_dim = 4;
  EFNet<float> narrower(cfg, testing::random_embedding(9, cfg.embed_dim, rng));
  EXPECT_THROW(apply_checkpoint(records, narrower.params()), CheckpointMismatch);
  EFNet<float> text(testing::tiny_config(true), testing::random_embedding(9, cfg.embed_dim, rng));
  EXPECT_THROW(apply_checkpoint(records, text.params()), CheckpointMismatch);
}

Sample make_sample(std::size_t n, std::size_t start, std::size_t end) {
  Sample s;
  s.id = "long";
  for (std::size_t i = 0; i < n; ++i) s.tokens.push_back("t" + std::to_string(i));
  s.target_start = start;
  s.target_end = end;
  s.aspect_tokens = {"event"};
  return s;
}

TEST(Truncation, KeepsSpanCentred) {
  EXPECT_EQ(truncation_window(make_sample(10, 3, 4), 36), (std::pair<std::size_t, std::size_t>{0, 10}));
  const auto w = truncation_window(make_sample(100, 50, 52), 10);
  EXPECT_EQ(w.second - w.first, 10u);
  EXPECT_LE(w.first, 50u);
  EXPECT_GE(w.second, 52u);
  EXPECT_EQ(w.first, 46u);
  EXPECT_EQ(truncation_window(make_sample(100, 0, 1), 10).first, 0u);
  EXPECT_EQ(truncation_window(make_sample(100, 98, 100), 10).second, 100u);
  try {
    truncation_window(make_sample(100, 10, 30), 10);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("long"), std::string::npos);
  }
}

TEST(Encoding, LookupTruncationAndSpanShift) {
  const EmbeddingTable table({"t50", "t51"}, 2, {1, 1, 2, 2});
  const auto e = encode_sample(make_sample(100, 50, 52), table, 10, nullptr);
  EXPECT_EQ(e.tokens.size(), 10u);
  EXPECT_EQ(e.span_start, 4u);
  EXPECT_EQ(e.tokens[4], table.lookup("t50"));
  EXPECT_EQ(e.tokens[0], EmbeddingTable::kUnknown);
  EXPECT_EQ(e.aspect, std::vector<std::size_t>{EmbeddingTable::kUnknown});
  FeatureStore store;
  EXPECT_THROW(encode_sample(make_sample(5, 1, 2), table, 10, &store), InputError);
}

TEST(Batches, SizesMasksAndDeterminism) {
  const EmbeddingTable table({"a"}, 2, {1, 1});
  std::vector<Sample> samples;
  for (std::size_t n : {3, 5, 2, 4, 6}) samples.push_back(make_sample(n, 0, 1));
  BatchOptions opts;
  opts.batch_size = 2;
  opts.max_len = 36;
  std::mt19937_64 r1(5), r2(5);
  const auto a = make_batches(samples, table, opts, r1);
  const auto b = make_batches(samples, table, opts, r2);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].size(), 2u);
  EXPECT_EQ(a[1].size(), 2u);
  EXPECT_EQ(a[2].size(), 1u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(a[i].indices, b[i].indices);
  for (const auto& batch : a) {
    EXPECT_LE(batch.length, opts.max_len);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t real = samples[batch.indices[i]].tokens.size();
      for (std::size_t t = 0; t < batch.length; ++t) {
        EXPECT_EQ(batch.mask[i * batch.length + t], t < real ? 1 : 0);
        if (t >= real) {
          EXPECT_EQ(batch.tokens[i * batch.length + t], EmbeddingTable::kPad);
        }
      }
    }
  }
  opts.batch_size = 0;
  EXPECT_THROW(make_batches(samples, table, opts, r1), ConfigError);
}

TEST(Synth, EmptyCorpus) {
  TempDir dir("synth");
  synth::Options o;
  o.n = 0;
  const auto files = synth::write(synth::generate(o), dir.path());
  EXPECT_TRUE(load_dataset(files.dataset.string()).empty());
  EXPECT_FALSE(fs::exists(dir / "features"));
}

TEST(Synth, Deterministic) {
  TempDir a("synth"), b("synth");
  synth::Options o;
  o.n = 30;
  o.seed = 9;
  synth::write(synth::generate(o), a.path());
  synth::write(synth::generate(o), b.path());
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path());
    EXPECT_EQ(testing::slurp(entry.path()), testing::slurp(b.path() / rel)) << rel;
  }
}

TEST(Synth, ShapeAndBalance) {
  synth::Options o;
  o.n = 300;
  const auto c = synth::generate(o);
  std::array<int, 3> counts{};
  double total_len = 0;
  for (const auto& s : c.samples) {
    ++counts[s.label];
    total_len += static_cast<double>(s.tokens.size());
    EXPECT_LE(s.tokens.size(), 31u);
  }
  EXPECT_EQ(counts, (std::array<int, 3>{100, 100, 100}));
  EXPECT_NEAR(total_len / 300, 13.0, 1.0);
  EXPECT_EQ(synth::split_sizes(64), (std::array<std::size_t, 3>{44, 9, 11}));
}

TEST(Synth, RuleOracleRelabelsEverySample) {
  for (const std::string grid : {"random", "none", "fixed:3,3"}) {
    TempDir dir("synth");
    synth::Options o;
    o.n = 90;
    o.seed = 12;
    o.grid = synth::GridRule::parse(grid);
    const auto files = synth::write(synth::generate(o), dir.path());
    const auto rule = nlohmann::json::parse(testing::slurp(files.rule));
    const auto samples = load_dataset(files.dataset.string());
    ASSERT_EQ(samples.size(), 90u);
    for (const auto& s : samples) {
      std::optional<Tensor<float>> img;
      if (s.image_ref) img = load_image_features((dir / *s.image_ref).string());
      const int label = testing::rule_label(rule, s.tokens, s.target_start, s.target_end,
                                            img ? &img->values() : nullptr);
      EXPECT_EQ(label, s.label) << grid << " " << s.id;
    }
  }
}

TEST(Synth, GridRuleParsing) {
  EXPECT_EQ(synth::GridRule::parse("fixed:3,3").str(), "fixed:3,3");
  EXPECT_THROW(synth::GridRule::parse("fixed:7,0"), ConfigError);
  EXPECT_THROW(synth::GridRule::parse("diagonal"), ConfigError);
}

}  // namespace
}  // namespace efnet
