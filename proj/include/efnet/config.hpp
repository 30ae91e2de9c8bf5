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

#ifndef EFNET_CONFIG_HPP_
#define EFNET_CONFIG_HPP_

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "efnet/error.hpp"
#include "efnet/model.hpp"
#include "efnet/train_eval.hpp"

namespace efnet {

// Plain-text run configuration: one "key = value" record per line, '#'
// starts a comment. Relative paths resolve against the file's directory.
struct RunConfig {
  ModelConfig model;
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 20;
  std::filesystem::path embeddings, train, val, test;
  std::filesystem::path base_dir;

  TrainOptions train_options() const {
    TrainOptions t;
    t.epochs = epochs;
    t.batch_size = batch_size;
    t.lr = lr;
    t.seed = model.seed;
    return t;
  }

  // Path for a split name ("train", "val", "test"); anything else is taken
  // as a dataset path relative to the config directory.
  std::filesystem::path split_path(const std::string& split) const {
    if (split == "train") return train;
    if (split == "val") return val;
    if (split == "test") return test;
    return resolve(split);
  }

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    if (path.is_relative()) path = base_dir / path;
    return path.lexically_normal();
  }

  // An empty value leaves the path unset.
  std::filesystem::path resolve_optional(const std::string& p) const {
    return p.empty() ? std::filesystem::path() : resolve(p);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno != 0) {
    throw ConfigError("config key '" + key + "': '" + v +
                      "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(x);
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(x)) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a real number");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text,
                                  const std::filesystem::path& base_dir = {}) {
  RunConfig c;
  c.base_dir = base_dir;
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) +
                        " is not 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("config key '" + key + "' is given twice");
    }
    using detail::parse_bool;
    using detail::parse_real;
    using detail::parse_size;
    if (key == "embed_dim") c.model.embed_dim = parse_size(key, value);
    else if (key == "pos_dim") c.model.position_dim = parse_size(key, value);
    else if (key == "hidden_dim") c.model.hidden_dim = parse_size(key, value);
    else if (key == "heads") c.model.heads = parse_size(key, value);
    else if (key == "capsule_dim") c.model.capsule_dim = parse_size(key, value);
    else if (key == "att_dim") c.model.att_dim = parse_size(key, value);
    else if (key == "dropout") c.model.dropout = parse_real(key, value);
    else if (key == "l2_lambda") c.model.l2_lambda = parse_real(key, value);
    else if (key == "max_len") c.model.max_len = parse_size(key, value);
    else if (key == "seed") c.model.seed = parse_size(key, value);
    else if (key == "text_only") c.model.text_only = parse_bool(key, value);
    else if (key == "lr") c.lr = parse_real(key, value);
    else if (key == "batch_size") c.batch_size = parse_size(key, value);
    else if (key == "epochs") c.epochs = parse_size(key, value);
    else if (key == "embeddings") c.embeddings = c.resolve_optional(value);
    else if (key == "train") c.train = c.resolve_optional(value);
    else if (key == "val") c.val = c.resolve_optional(value);
    else if (key == "test") c.test = c.resolve_optional(value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (c.batch_size == 0) throw ConfigError("config key 'batch_size' must be positive");
  if (!(c.lr > 0)) throw ConfigError("config key 'lr' must be positive");
  c.model.validate();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

inline std::string format_run_config(const RunConfig& c) {
  std::ostringstream os;
  const auto& m = c.model;
  os << "embed_dim = " << m.embed_dim << "\n"
     << "pos_dim = " << m.position_dim << "\n"
     << "hidden_dim = " << m.hidden_dim << "\n"
     << "heads = " << m.heads << "\n"
     << "capsule_dim = " << m.capsule_dim << "\n"
     << "att_dim = " << m.att_dim << "\n"
     << "dropout = " << m.dropout << "\n"
     << "l2_lambda = " << m.l2_lambda << "\n"
     << "max_len = " << m.max_len << "\n"
     << "seed = " << m.seed << "\n"
     << "text_only = " << (m.text_only ? "true" : "false") << "\n"
     << "lr = " << c.lr << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "epochs = " << c.epochs << "\n";
  auto path = [&](const char* key, const std::filesystem::path& p) {
    if (!p.empty()) os << key << " = " << p.generic_string() << "\n";
  };
  path("embeddings", c.embeddings);
  path("train", c.train);
  path("val", c.val);
  path("test", c.test);
  return os.str();
}

}  // namespace efnet

#endif  // EFNET_CONFIG_HPP_
