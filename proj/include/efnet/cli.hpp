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

#ifndef EFNET_CLI_HPP_
#define EFNET_CLI_HPP_

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "efnet/checkpoint.hpp"
#include "efnet/config.hpp"
#include "efnet/data_io.hpp"
#include "efnet/error.hpp"
#include "efnet/model.hpp"
#include "efnet/synth.hpp"
#include "efnet/train_eval.hpp"

// Subcommands of the `efnet` binary. Exit codes: 0 success, 2 usage or
// input error, 3 model/checkpoint incompatibility.
namespace efnet::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kIncompatible = 3;

namespace fs = std::filesystem;

namespace detail {

inline void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw InputError(std::string("config does not name a ") + what + " file");
  if (!fs::is_regular_file(p)) {
    throw InputError(std::string(what) + " file '" + p.string() + "' does not exist");
  }
}

struct Workspace {
  RunConfig config;
  EmbeddingTable table;
};

inline Workspace open_workspace(const fs::path& config_path) {
  Workspace w;
  w.config = load_run_config(config_path);
  require_file(w.config.embeddings, "embeddings");
  w.table = load_embeddings(w.config.embeddings.string(), w.config.model.seed);
  if (w.table.dim() != w.config.model.embed_dim) {
    throw ConfigError("config key 'embed_dim' is " +
                      std::to_string(w.config.model.embed_dim) +
                      " but the embeddings have dimension " +
                      std::to_string(w.table.dim()));
  }
  return w;
}

// Datasets resolve image references against their own directory.
inline std::vector<EncodedSample> load_encoded(Workspace& w, const fs::path& path,
                                               std::vector<Sample>* raw = nullptr) {
  auto samples = load_dataset(path.string());
  FeatureStore store(path.parent_path());
  auto encoded = encode_samples(samples, w.table, w.config.model.max_len,
                                w.config.model.text_only ? nullptr : &store);
  if (raw) *raw = std::move(samples);
  return encoded;
}

inline std::vector<std::size_t> parse_heads(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = efnet::detail::trim(item);
    out.push_back(efnet::detail::parse_size("heads", item));
  }
  if (out.empty()) throw ConfigError("--heads lists no head counts");
  return out;
}

inline nlohmann::json matrix_json(const Tensor<float>& t) {
  nlohmann::json rows = nlohmann::json::array();
  const std::size_t c = t.shape().back();
  for (std::size_t r = 0; r < t.size() / c; ++r) {
    std::vector<double> row;
    for (std::size_t j = 0; j < c; ++j) row.push_back(t.at(r, j));
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::json heads_json(const std::vector<Tensor<float>>& heads) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& h : heads) out.push_back(matrix_json(h));
  return out;
}

}  // namespace detail

inline int cmd_synth(std::uint64_t seed, std::size_t n, const fs::path& out,
                     std::size_t vocab, const std::string& grid_rule,
                     std::size_t embed_dim, double visual_fraction,
                     std::ostream& log) {
  synth::Options o;
  o.seed = seed;
  o.n = n;
  o.vocab_size = vocab;
  o.grid = synth::GridRule::parse(grid_rule);
  o.embed_dim = embed_dim;
  o.visual_fraction = visual_fraction;
  const auto corpus = synth::generate(o);
  synth::write(corpus, out);
  RunConfig cfg;
  cfg.model.embed_dim = embed_dim;
  cfg.model.text_only = o.grid.kind == synth::GridRule::Kind::kNone;
  cfg.model.seed = seed;
  cfg.batch_size = 16;
  cfg.epochs = 40;
  cfg.lr = 3e-3;
  cfg.embeddings = "embeddings.txt";
  cfg.train = "train.jsonl";
  cfg.val = "val.jsonl";
  cfg.test = "test.jsonl";
  binary::write_file((out / "run.cfg").string(), format_run_config(cfg));
  log << "wrote " << corpus.samples.size() << " samples to " << out.string() << "\n";
  return kOk;
}

inline int cmd_train(const fs::path& config_path, std::optional<fs::path> checkpoint,
                     std::optional<fs::path> metrics, std::ostream& log) {
  auto w = detail::open_workspace(config_path);
  detail::require_file(w.config.train, "train");
  if (!w.config.val.empty()) detail::require_file(w.config.val, "val");
  const fs::path dir = config_path.parent_path();
  const fs::path ckpt = checkpoint.value_or(dir / "model.efck");
  const fs::path mlog = metrics.value_or(dir / "metrics.csv");
  const auto train_set = detail::load_encoded(w, w.config.train);
  std::vector<EncodedSample> val_set;
  if (!w.config.val.empty()) val_set = detail::load_encoded(w, w.config.val);

  EFNet<float> model(w.config.model, w.table.matrix());
  TrainOptions opts = w.config.train_options();
  opts.checkpoint_path = ckpt.string();
  const auto result = train(model, train_set, val_set, opts);
  for (const auto& row : result.log) log << format_metrics_row(row) << "\n";
  binary::write_file(mlog.string(), format_metrics(result.log));
  log << "best " << (val_set.empty() ? "train" : "val") << " accuracy "
      << result.best_accuracy << " at epoch " << result.best_epoch << "; checkpoint "
      << ckpt.string() << "\n";
  return kOk;
}

inline int cmd_eval(const fs::path& config_path, const fs::path& checkpoint,
                    const std::string& split, std::optional<fs::path> report,
                    std::ostream& log) {
  auto w = detail::open_workspace(config_path);
  const fs::path data = w.config.split_path(split);
  detail::require_file(data, "split");
  detail::require_file(checkpoint, "checkpoint");
  EFNet<float> model(w.config.model, w.table.matrix());
  load_checkpoint(checkpoint.string(), model.params());
  const auto samples = detail::load_encoded(w, data);
  const EvalReport rep = evaluate(model, samples);
  const std::string name = fs::path(split).stem().string();
  const fs::path out = report.value_or(fs::path(checkpoint.string() + "." + name + ".json"));
  binary::write_file(out.string(), report_json(rep, split));
  char buf[160];
  std::snprintf(buf, sizeof buf, "split=%s samples=%zu accuracy=%.6f macro_f1=%.6f\n",
                split.c_str(), rep.total, rep.accuracy, rep.macro_f1);
  log << buf;
  return kOk;
}

inline int cmd_sweep_heads(const fs::path& config_path, const std::string& heads,
                           std::optional<fs::path> out, std::ostream& log) {
  auto w = detail::open_workspace(config_path);
  const auto list = detail::parse_heads(heads);
  for (auto h : list) MHAParams<float>::check_heads(w.config.model.hidden_dim, h);
  detail::require_file(w.config.train, "train");
  detail::require_file(w.config.val, "val");
  const auto train_set = detail::load_encoded(w, w.config.train);
  const auto val_set = detail::load_encoded(w, w.config.val);
  const auto rows = head_sweep<float>(w.config.model, list, w.table.matrix(), train_set,
                                      val_set, w.config.train_options());
  const std::string table = format_sweep(rows);
  binary::write_file(out.value_or(config_path.parent_path() / "sweep.csv").string(), table);
  log << table;
  return kOk;
}

inline int cmd_dump_attention(const fs::path& config_path, const fs::path& checkpoint,
                              const std::string& sample_id, const fs::path& out,
                              std::ostream& log) {
  auto w = detail::open_workspace(config_path);
  detail::require_file(checkpoint, "checkpoint");
  EFNet<float> model(w.config.model, w.table.matrix());
  load_checkpoint(checkpoint.string(), model.params());
  for (const auto& path : {w.config.train, w.config.val, w.config.test}) {
    if (path.empty() || !fs::is_regular_file(path)) continue;
    const auto samples = load_dataset(path.string());
    for (const auto& s : samples) {
      if (s.id != sample_id) continue;
      FeatureStore store(path.parent_path());
      const EncodedSample e = encode_sample(s, w.table, w.config.model.max_len,
                                            w.config.model.text_only ? nullptr : &store);
      const auto fo = model.forward(e, model.params(), false, nullptr, true);
      const auto& tr = *fo.trace;
      const auto [begin, end] = truncation_window(s, w.config.model.max_len);
      nlohmann::json j;
      j["id"] = s.id;
      j["tokens"] = std::vector<std::string>(s.tokens.begin() + begin, s.tokens.begin() + end);
      j["target"] = {{"start", e.span_start}, {"end", e.span_end}};
      j["aspect"] = s.aspect_tokens;
      j["label"] = polarity_name(s.label);
      j["predicted"] = polarity_name(argmax(fo.probs.data()));
      j["probabilities"] = fo.probs.values();
      j["context_self_attention"] = detail::heads_json(tr.context_self);
      j["interaction_attention"] = detail::heads_json(tr.interact_context);
      j["fusion_attention"] = detail::heads_json(tr.fusion);
      if (!tr.interact_image.empty())
        j["image_interaction_attention"] = detail::heads_json(tr.interact_image);
      if (tr.image_regions) {
        j["image_region_weights"] =
            detail::matrix_json(tr.image_regions->view({kGridSide, kGridSide}));
      }
      binary::write_file(out.string(), j.dump(2) + "\n");
      log << "wrote attention for " << s.id << " to " << out.string() << "\n";
      return kOk;
    }
  }
  throw InputError("no sample with id '" + sample_id + "'");
}

// Parses argv and dispatches; every library error becomes an exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"EF-Net targeted aspect-based multimodal sentiment toolkit", "efnet"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::size_t n = 64, vocab = 200, embed_dim = 50;
  std::string grid_rule = "random";
  double visual_fraction = 0.5;
  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "generate a planted-cue corpus");
  synth->add_option("--seed", seed, "random seed");
  synth->add_option("--n", n, "number of samples");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--vocab", vocab, "number of filler words");
  synth->add_option("--grid-rule", grid_rule, "none | random | fixed:R,C");
  synth->add_option("--embed-dim", embed_dim, "embedding dimension");
  synth->add_option("--visual-fraction", visual_fraction,
                    "share of image samples labelled by the image");

  std::string config, checkpoint, metrics, split, report, heads, sample_id, out_path;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--config", config, "run configuration")->required();
  train_cmd->add_option("--checkpoint", checkpoint, "checkpoint output path");
  train_cmd->add_option("--metrics", metrics, "metrics log output path");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--config", config, "run configuration")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  eval_cmd->add_option("--split", split, "train | val | test | dataset path")->required();
  eval_cmd->add_option("--report", report, "report output path");

  auto* sweep = app.add_subcommand("sweep-heads", "train one model per head count");
  sweep->add_option("--config", config, "run configuration")->required();
  sweep->add_option("--heads", heads, "comma-separated head counts")->required();
  sweep->add_option("--out", out_path, "sweep table output path");

  auto* dump = app.add_subcommand("dump-attention", "write attention weights of a sample");
  dump->add_option("--config", config, "run configuration")->required();
  dump->add_option("--checkpoint", checkpoint, "checkpoint")->required();
  dump->add_option("--sample-id", sample_id, "sample id")->required();
  dump->add_option("--out", out_path, "output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  auto opt = [](const std::string& s) -> std::optional<fs::path> {
    if (s.empty()) return std::nullopt;
    return fs::path(s);
  };
  try {
    if (*synth) {
      return cmd_synth(seed, n, out_dir, vocab, grid_rule, embed_dim, visual_fraction, out);
    }
    if (*train_cmd) return cmd_train(config, opt(checkpoint), opt(metrics), out);
    if (*eval_cmd) return cmd_eval(config, checkpoint, split, opt(report), out);
    if (*sweep) return cmd_sweep_heads(config, heads, opt(out_path), out);
    if (*dump) return cmd_dump_attention(config, checkpoint, sample_id, out_path, out);
  } catch (const CheckpointMismatch& e) {
    err << "error: " << e.what() << "\n";
    return kIncompatible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"efnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace efnet::cli

#endif  // EFNET_CLI_HPP_
