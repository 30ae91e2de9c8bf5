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

#ifndef EFNET_ERROR_HPP_
#define EFNET_ERROR_HPP_

#include <cstddef>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

namespace efnet {

// Base of every error raised by the library. Callers may prepend context
// (e.g. the pipeline stage) while the exception propagates; what() reports
// "context: ... : message".
class Error : public std::exception {
 public:
  explicit Error(std::string message) : message_(std::move(message)) {
    rebuild();
  }

  const char* what() const noexcept override { return full_.c_str(); }
  const std::string& message() const noexcept { return message_; }

  void add_context(const std::string& context) {
    contexts_.insert(contexts_.begin(), context);
    rebuild();
  }

 private:
  void rebuild() {
    full_.clear();
    for (const auto& c : contexts_) full_ += c + ": ";
    full_ += message_;
  }

  std::string message_;
  std::vector<std::string> contexts_;
  std::string full_;
};

#define EFNET_DEFINE_ERROR(Name)                          \
  class Name : public Error {                             \
   public:                                                \
    explicit Name(std::string m) : Error(std::move(m)) {} \
  }

EFNET_DEFINE_ERROR(DimensionError);
EFNET_DEFINE_ERROR(DegenerateMaskError);
EFNET_DEFINE_ERROR(RankError);
EFNET_DEFINE_ERROR(TapeError);
EFNET_DEFINE_ERROR(ConfigError);
EFNET_DEFINE_ERROR(InputError);
EFNET_DEFINE_ERROR(InvariantViolation);
EFNET_DEFINE_ERROR(TrainingError);
EFNET_DEFINE_ERROR(CheckpointMismatch);

#undef EFNET_DEFINE_ERROR

// Text parse failure; `location` is a 1-based line or 0-based record index.
class ParseError : public Error {
 public:
  ParseError(std::string what, std::size_t location)
      : Error(std::move(what)), location_(location) {}
  std::size_t location() const noexcept { return location_; }

 private:
  std::size_t location_;
};

// Binary format violation; `field` names the offending header field
// ("magic", "version", "ndims", "dims", "payload", ...).
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& detail)
      : Error("format error in field '" + field + "': " + detail),
        field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

namespace detail {

template <typename Range>
std::string shape_string(const Range& shape) {
  std::ostringstream os;
  os << '[';
  bool first = true;
  for (auto d : shape) {
    if (!first) os << 'x';
    os << d;
    first = false;
  }
  os << ']';
  return os.str();
}

}  // namespace detail

}  // namespace efnet

#endif  // EFNET_ERROR_HPP_
