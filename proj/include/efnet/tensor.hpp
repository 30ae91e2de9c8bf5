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

#ifndef EFNET_TENSOR_HPP_
#define EFNET_TENSOR_HPP_

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "efnet/error.hpp"

namespace efnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  return detail::shape_string(shape);
}

template <typename T>
class Tape;

using NodeId = std::size_t;

// Dense row-major tensor. Copies share storage; use clone() for a deep
// copy. A tensor produced by an op on taped inputs carries a handle to the
// recording tape.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(shape_size(shape_), T(0))) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))),
        requires_grad_(requires_grad) {
    check_extents();
    if (shape_size(shape_) != data_->size()) {
      throw DimensionError("tensor of shape " + shape_str(shape_) +
                           " cannot hold " + std::to_string(data_->size()) +
                           " values");
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, std::vector<T>{value}); }

  // Matrix from nested rows; convenient in tests.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(values));
  }

  static Tensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_->size(); }
  bool empty() const noexcept { return data_->empty(); }

  std::span<const T> data() const noexcept { return *data_; }
  // Writes are visible through every tensor sharing this storage.
  std::span<T> mutable_data() noexcept { return *data_; }
  const std::vector<T>& values() const noexcept { return *data_; }
  const void* storage_id() const noexcept { return data_.get(); }

  T operator[](std::size_t i) const { return (*data_)[i]; }
  T at(std::size_t r, std::size_t c) const {
    return (*data_)[r * shape_.back() + c];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

  Tape<T>* tape() const noexcept { return tape_; }
  std::optional<NodeId> node() const noexcept {
    if (tape_ == nullptr) return std::nullopt;
    return node_;
  }
  bool on_tape() const noexcept { return tape_ != nullptr; }

  Tensor clone() const {
    Tensor t(shape_, *data_, requires_grad_);
    return t;
  }

  // Same storage, new shape; never recorded. Use ops::reshape on taped
  // values.
  Tensor view(Shape shape) const {
    if (shape_size(shape) != size()) {
      throw DimensionError("cannot view " + shape_str(shape_) + " as " +
                           shape_str(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    t.tape_ = nullptr;
    return t;
  }

  // Detached copy sharing storage.
  Tensor detach() const {
    Tensor t = *this;
    t.tape_ = nullptr;
    t.requires_grad_ = false;
    return t;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->begin(), data_->end());
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  friend class Tape<T>;

  void check_extents() const {
    for (auto d : shape_) {
      if (d == 0) {
        throw DimensionError("tensor extents must be positive, got " +
                             shape_str(shape_));
      }
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  bool requires_grad_ = false;
  Tape<T>* tape_ = nullptr;
  NodeId node_ = 0;
};

// Gradients of a scalar loss with respect to every reachable leaf.
template <typename T>
class Gradients {
 public:
  bool contains(const Tensor<T>& t) const {
    auto n = t.node();
    return n && grads_.count(*n) > 0;
  }

  // Gradient of a watched leaf; nullopt when the loss does not reach it.
  std::optional<std::span<const T>> of(const Tensor<T>& t) const {
    auto n = t.node();
    if (!n) return std::nullopt;
    auto it = grads_.find(*n);
    if (it == grads_.end()) return std::nullopt;
    return std::span<const T>(it->second);
  }

  // Unreached leaves have an all-zero gradient.
  std::vector<T> of_or_zero(const Tensor<T>& t) const {
    if (auto g = of(t)) return {g->begin(), g->end()};
    return std::vector<T>(t.size(), T(0));
  }

  std::size_t size() const noexcept { return grads_.size(); }
  const std::unordered_map<NodeId, std::vector<T>>& all() const {
    return grads_;
  }

 private:
  friend class Tape<T>;
  std::unordered_map<NodeId, std::vector<T>> grads_;
};

// Append-only record of differentiable operations. Single writer; one tape
// per forward/backward pass.
template <typename T>
class Tape {
 public:
  // Receives the output gradient; accumulates into parent slots via
  // Tape::grad_slot().
  using BackwardFn = std::function<void(std::span<const T>, Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a trainable leaf. Watching the same storage twice yields the
  // same node, so reuse sums gradients. Tensors without requires_grad are
  // returned as constants.
  Tensor<T> watch(const Tensor<T>& leaf) {
    if (!leaf.requires_grad()) return leaf.detach();
    if (leaf.tape_ == this) return leaf;
    if (leaf.tape_ != nullptr) {
      throw TapeError("tensor already recorded on a different tape");
    }
    auto it = leaves_.find(leaf.storage_id());
    NodeId id;
    if (it != leaves_.end()) {
      id = it->second;
    } else {
      id = nodes_.size();
      nodes_.push_back(Node{leaf.shape(), {}, nullptr, true});
      leaves_.emplace(leaf.storage_id(), id);
    }
    Tensor<T> out = leaf;
    out.tape_ = this;
    out.node_ = id;
    return out;
  }

  // Records an op output. `parents` must already be on this tape.
  Tensor<T> record(Shape shape, std::vector<T> value,
                   const std::vector<const Tensor<T>*>& parents,
                   BackwardFn fn) {
    std::vector<NodeId> ids;
    for (const auto* p : parents) {
      if (p->tape_ != this) throw TapeError("parent not on this tape");
      ids.push_back(p->node_);
    }
    const NodeId id = nodes_.size();
    nodes_.push_back(Node{shape, std::move(ids), std::move(fn), false});
    Tensor<T> out(std::move(shape), std::move(value), true);
    out.tape_ = this;
    out.node_ = id;
    return out;
  }

  // Gradient accumulator for a node, allocated on first use.
  std::vector<T>& grad_slot(const Tensor<T>& t) {
    if (t.tape_ != this) throw TapeError("tensor not on this tape");
    return slot(t.node_);
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t leaf_count() const noexcept { return leaves_.size(); }

  const std::vector<NodeId>& parents_of(NodeId id) const {
    return nodes_.at(id).parents;
  }

  Gradients<T> backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
      throw RankError("backward needs a scalar loss, got shape " +
                      shape_str(loss.shape()));
    }
    if (loss.tape_ != this) {
      throw TapeError("loss is not recorded on this tape");
    }
    grads_.assign(nodes_.size(), {});
    grads_[loss.node_] = {T(1)};
    Gradients<T> out;
    for (NodeId id = loss.node_ + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (grads_[id].empty()) continue;
      if (node.is_leaf) {
        out.grads_.emplace(id, std::move(grads_[id]));
        continue;
      }
      if (node.backward) {
        std::vector<T> g = std::move(grads_[id]);
        node.backward(std::span<const T>(g), *this);
      }
      grads_[id].clear();
      grads_[id].shrink_to_fit();
    }
    grads_.clear();
    return out;
  }

 private:
  struct Node {
    Shape shape;
    std::vector<NodeId> parents;
    BackwardFn backward;
    bool is_leaf = false;
  };

  std::vector<T>& slot(NodeId id) {
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    auto& g = grads_[id];
    if (g.empty()) g.assign(shape_size(nodes_[id].shape), T(0));
    return g;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const void*, NodeId> leaves_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
Gradients<T> backward(const Tensor<T>& loss, Tape<T>& tape) {
  return tape.backward(loss);
}

}  // namespace efnet

#endif  // EFNET_TENSOR_HPP_
