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

#ifndef EFNET_CHECKPOINT_HPP_
#define EFNET_CHECKPOINT_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "efnet/binary_io.hpp"
#include "efnet/error.hpp"
#include "efnet/model.hpp"
#include "efnet/tensor.hpp"

// Checkpoint layout, all little-endian:
//   "EFCK" | version u32 | records until end of file
//   record: name length u32 | name bytes | rank u32 | dims u32[rank] |
//           binary32 payload
namespace efnet {

inline constexpr char kCheckpointMagic[4] = {'E', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

inline std::string encode_checkpoint(const std::vector<NamedTensor>& records) {
  std::string out(kCheckpointMagic, 4);
  binary::put_u32(out, kCheckpointVersion);
  for (const auto& r : records) {
    binary::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    binary::put_u32(out, static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) binary::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : r.value.data()) binary::put_f32(out, v);
  }
  return out;
}

inline std::vector<NamedTensor> decode_checkpoint(std::string bytes) {
  binary::Reader in(std::move(bytes));
  std::string magic;
  if (!in.read_bytes(4, magic) || magic != std::string(kCheckpointMagic, 4)) {
    throw FormatError("magic", "expected \"EFCK\"");
  }
  std::uint32_t version = 0;
  if (!in.read_u32(version) || version != kCheckpointVersion) {
    throw FormatError("version", "unsupported checkpoint version " +
                                     std::to_string(version));
  }
  std::vector<NamedTensor> records;
  while (!in.done()) {
    const std::string where = "record " + std::to_string(records.size());
    std::uint32_t len = 0, rank = 0;
    std::string name;
    if (!in.read_u32(len) || !in.read_bytes(len, name)) {
      throw FormatError("name", where + " is truncated");
    }
    if (!in.read_u32(rank) || rank == 0 || rank > 8) {
      throw FormatError("rank", where + " ('" + name + "') has a bad rank");
    }
    Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!in.read_u32(v) || v == 0) {
        throw FormatError("dims", where + " ('" + name + "') has bad dims");
      }
      d = v;
    }
    std::vector<float> values;
    if (!in.read_f32s(shape_size(shape), values)) {
      throw FormatError("payload", where + " ('" + name + "') is truncated");
    }
    records.push_back({name, Tensor<float>(shape, std::move(values))});
  }
  return records;
}

inline void write_checkpoint(const std::string& path,
                             const std::vector<NamedTensor>& records) {
  binary::write_file(path, encode_checkpoint(records));
}

inline std::vector<NamedTensor> read_checkpoint(const std::string& path) {
  return decode_checkpoint(binary::read_file(path));
}

template <typename T>
std::vector<NamedTensor> checkpoint_records(const EFNetParams<T>& params) {
  std::vector<NamedTensor> out;
  params.for_each([&](const std::string& name, const Tensor<T>& t) {
    if constexpr (std::is_same_v<T, float>) {
      out.push_back({name, t.clone()});
    } else {
      out.push_back({name, t.template cast<float>()});
    }
  });
  return out;
}

// Copies checkpoint values into `params`. Names and shapes must match the
// parameter set exactly.
template <typename T>
void apply_checkpoint(const std::vector<NamedTensor>& records,
                      EFNetParams<T>& params) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  std::size_t matched = 0;
  params.for_each([&](const std::string& name, Tensor<T>& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw CheckpointMismatch("checkpoint lacks parameter '" + name + "'");
    }
    const NamedTensor& r = *it->second;
    if (r.value.shape() != t.shape()) {
      throw CheckpointMismatch("parameter '" + name + "' has shape " +
                               shape_str(t.shape()) + " but checkpoint has " +
                               shape_str(r.value.shape()));
    }
    auto dst = t.mutable_data();
    const auto src = r.value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(src[i]);
    ++matched;
  });
  if (matched != records.size()) {
    throw CheckpointMismatch("checkpoint holds parameters the model lacks");
  }
}

template <typename T>
void save_checkpoint(const std::string& path, const EFNetParams<T>& params) {
  write_checkpoint(path, checkpoint_records(params));
}

template <typename T>
void load_checkpoint(const std::string& path, EFNetParams<T>& params) {
  apply_checkpoint(read_checkpoint(path), params);
}

}  // namespace efnet

#endif  // EFNET_CHECKPOINT_HPP_
