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

#include <cmath>
#include <string>
#include <vector>

#include "pulseuq/core/ops.hpp"
#include "pulseuq/core/rng.hpp"
#include "pulseuq/core/tensor.hpp"

namespace pulseuq::nn {

/// Ordered, uniquely-named parameter collection. Insertion order is the
/// iteration order, so optimizer state and checkpoints align across runs.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };

  void add(std::string name, Tensor t, bool trainable = true) {
    for (const auto& e : items_)
      check_arg(e.name != name, "duplicate parameter name: " + name);
    items_.push_back({std::move(name), std::move(t), trainable});
  }

  const std::vector<Entry>& items() const { return items_; }
  std::vector<Entry>& items() { return items_; }

  const Entry* find(const std::string& name) const {
    for (const auto& e : items_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : items_)
      if (e.trainable) n += e.tensor.numel();
    return n;
  }

  void set_requires_grad(bool rg) {
    for (auto& e : items_)
      if (e.trainable) e.tensor.set_requires_grad(rg);
  }

  void zero_grad() {
    for (auto& e : items_) e.tensor.zero_grad();
  }

 private:
  std::vector<Entry> items_;
};

/// Fan-in-scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in)), the
/// ReLU-family gain so activation scale is preserved through deep stacks.
inline Tensor init_uniform(Shape shape, std::int64_t fan_in, RngStream& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.data())
    v = static_cast<float>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

/// Controls stochastic and batch-dependent behaviour of a forward pass.
struct ForwardMode {
  bool dropout_active = false;
  bool bn_training = false;
  RngStream* dropout_rng = nullptr;
};

struct Conv1dLayer {
  Tensor w, b;
  std::int64_t stride, pad;

  Conv1dLayer() = default;
  Conv1dLayer(std::int64_t c_in, std::int64_t c_out, std::int64_t kernel,
              std::int64_t stride_, std::int64_t pad_, RngStream& rng)
      : w(init_uniform({c_out, c_in, kernel}, c_in * kernel, rng)),
        b(Tensor::zeros({c_out}, true)),
        stride(stride_),
        pad(pad_) {}

  Tensor forward(const Tensor& x) const { return conv1d(x, w, b, stride, pad); }

  void register_params(ParamSet& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

struct DenseLayer {
  Tensor w, b;

  DenseLayer() = default;
  DenseLayer(std::int64_t f_in, std::int64_t f_out, RngStream& rng)
      : w(init_uniform({f_in, f_out}, f_in, rng)),
        b(Tensor::zeros({f_out}, true)) {}

  Tensor forward(const Tensor& x) const { return bias_add(matmul(x, w), b); }

  void register_params(ParamSet& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
};

struct BatchNorm1dLayer {
  Tensor gamma, beta;
  Tensor running_mean, running_var;  // non-trainable state
  float momentum = 0.1f;

  BatchNorm1dLayer() = default;
  explicit BatchNorm1dLayer(std::int64_t channels)
      : gamma(Tensor::full({channels}, 1.0f, true)),
        beta(Tensor::zeros({channels}, true)),
        running_mean(Tensor::zeros({channels})),
        running_var(Tensor::full({channels}, 1.0f)) {}

  Tensor forward(const Tensor& x, bool training) {
    return batchnorm1d(x, gamma, beta, running_mean.data(),
                       running_var.data(), training, momentum);
  }

  void register_params(ParamSet& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
    ps.add(prefix + ".running_mean", running_mean, /*trainable=*/false);
    ps.add(prefix + ".running_var", running_var, /*trainable=*/false);
  }
};

}  // namespace pulseuq::nn
