/*
 * Copyright 2026 PulseUQ Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace pulseuq {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ')';
  return os.str();
}

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

namespace detail {

/// Size-bucketed recycler for node storage. Training builds and tears down a
/// tape every step; reusing same-size buffers avoids the zero-fill and page
/// faults of fresh vectors on the multi-megabyte early-stage activations.
class BufferPool {
 public:
  static BufferPool& instance() {
    static BufferPool pool;
    return pool;
  }

  std::vector<float> acquire(std::size_t n) {
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto it = free_.find(n);
      if (it != free_.end() && !it->second.empty()) {
        std::vector<float> v = std::move(it->second.back());
        it->second.pop_back();
        bytes_ -= n * sizeof(float);
        return v;
      }
    }
    return std::vector<float>(n);
  }

  void release(std::vector<float>&& v) {
    if (v.empty()) return;
    std::lock_guard<std::mutex> lock(mu_);
    if (bytes_ + v.size() * sizeof(float) > kMaxBytes) return;  // let it free
    bytes_ += v.size() * sizeof(float);
    free_[v.size()].push_back(std::move(v));
  }

 private:
  static constexpr std::size_t kMaxBytes = std::size_t{768} << 20;
  std::mutex mu_;
  std::unordered_map<std::size_t, std::vector<std::vector<float>>> free_;
  std::size_t bytes_ = 0;
};

/// One vertex of the reverse-mode tape. Values are 32-bit; nodes are
/// immutable after the forward pass except for gradient accumulation.
struct TensorNode {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::function<void()> backward_fn;
  std::vector<std::shared_ptr<TensorNode>> parents;

  ~TensorNode() {
    BufferPool::instance().release(std::move(data));
    BufferPool::instance().release(std::move(grad));
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }

  void ensure_grad() {
    if (grad.size() != data.size()) {
      grad = BufferPool::instance().acquire(data.size());
      std::fill(grad.begin(), grad.end(), 0.0f);
    }
  }
};

}  // namespace detail

/// Value-semantic handle to a tape node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::TensorNode> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<detail::TensorNode>();
    n->data = detail::BufferPool::instance().acquire(shape_numel(shape));
    std::fill(n->data.begin(), n->data.end(), 0.0f);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, float value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node()->data) v = value;
    return t;
  }

  static Tensor from_data(Shape shape, std::vector<float> data,
                          bool requires_grad = false) {
    check_arg(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
              "tensor data length " + std::to_string(data.size()) +
                  " does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(float value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::int64_t size(int dim) const { return n_->shape.at(dim); }
  std::int64_t numel() const { return n_->numel(); }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }

  std::span<float> data() { return {n_->data.data(), n_->data.size()}; }
  std::span<const float> data() const {
    return {n_->data.data(), n_->data.size()};
  }
  std::span<const float> grad() const {
    return {n_->grad.data(), n_->grad.size()};
  }
  bool has_grad() const { return !n_->grad.empty(); }

  float item() const {
    check_arg(numel() == 1, "item() requires a scalar, got shape " +
                                shape_str(shape()));
    return n_->data[0];
  }

  void zero_grad() { n_->grad.clear(); }

  const std::shared_ptr<detail::TensorNode>& node() const { return n_; }

  /// Reverse-mode sweep from this (scalar) node. Gradients accumulate into
  /// every reachable node with requires_grad set.
  void backward() const {
    check_arg(numel() == 1,
              "backward() requires a scalar loss, got shape " +
                  shape_str(shape()));
    // Iterative topological order (graphs can be deep for long pipelines).
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> visited;
    struct Frame {
      detail::TensorNode* node;
      std::size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({n_.get(), 0});
    visited.insert(n_.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next_parent < f.node->parents.size()) {
        detail::TensorNode* p = f.node->parents[f.next_parent++].get();
        if (p->requires_grad && visited.insert(p).second) {
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
    n_->ensure_grad();
    n_->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn();
    }
  }

 private:
  std::shared_ptr<detail::TensorNode> n_;
};

namespace detail {

/// Node with uninitialized storage; every op overwrites its output in full.
inline std::shared_ptr<TensorNode> make_node(Shape shape, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->data = BufferPool::instance().acquire(shape_numel(shape));
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return n;
}

}  // namespace detail

}  // namespace pulseuq
