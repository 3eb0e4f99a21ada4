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
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulseuq/core/rng.hpp"
#include "pulseuq/core/tensor.hpp"
#include "pulseuq/io/container.hpp"
#include "pulseuq/nn/layers.hpp"

namespace pulseuq::optim {

/// Raised when a step would consume non-finite gradients; the step is
/// rejected without touching parameters.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<pulseuq::detail::TensorNode*> trainable_nodes(
    nn::ParamSet& params) {
  std::vector<pulseuq::detail::TensorNode*> nodes;
  for (auto& e : params.items())
    if (e.trainable) nodes.push_back(e.tensor.node().get());
  return nodes;
}

inline void check_grads_finite(
    const std::vector<pulseuq::detail::TensorNode*>& nodes,
    const char* what) {
  for (auto* n : nodes) {
    if (n->grad.empty())
      throw NumericError(std::string(what) +
                         ": parameter has no gradient; run backward first");
    for (float g : n->grad)
      if (!std::isfinite(g))
        throw NumericError(std::string(what) +
                           ": non-finite gradient, step rejected");
  }
}

}  // namespace detail

/// Stochastic gradient descent with classical momentum. Weight decay enters
/// as an additive delta * w term in the gradient.
class Sgd {
 public:
  struct Config {
    float lr = 1e-3f;
    float momentum = 0.9f;
    float weight_decay = 1e-10f;
  };

  Sgd(nn::ParamSet& params, Config cfg)
      : cfg_(cfg), nodes_(detail::trainable_nodes(params)) {
    for (auto* n : nodes_) velocity_.emplace_back(n->data.size(), 0.0f);
  }

  void step() {
    detail::check_grads_finite(nodes_, "sgd_step");
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      auto* n = nodes_[p];
      auto& v = velocity_[p];
      for (std::size_t i = 0; i < n->data.size(); ++i) {
        const float g = n->grad[i] + cfg_.weight_decay * n->data[i];
        v[i] = cfg_.momentum * v[i] + g;
        n->data[i] -= cfg_.lr * v[i];
      }
    }
  }

 private:
  Config cfg_;
  std::vector<pulseuq::detail::TensorNode*> nodes_;
  std::vector<std::vector<float>> velocity_;
};

class Adam {
 public:
  struct Config {
    float lr = 5e-5f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-8f;
  };

  Adam(nn::ParamSet& params, Config cfg)
      : cfg_(cfg), nodes_(detail::trainable_nodes(params)) {
    for (auto* n : nodes_) {
      m_.emplace_back(n->data.size(), 0.0);
      v_.emplace_back(n->data.size(), 0.0);
    }
  }

  void step() {
    detail::check_grads_finite(nodes_, "adam_step");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      auto* n = nodes_[p];
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < n->data.size(); ++i) {
        const double g = double(n->grad[i]) + double(cfg_.weight_decay) * n->data[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        n->data[i] -= static_cast<float>(cfg_.lr * mhat /
                                         (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

 private:
  Config cfg_;
  std::vector<pulseuq::detail::TensorNode*> nodes_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Variational optimizer keeping a diagonal Gaussian posterior
/// N(m, 1/(lambda (h + delta))) over the parameters. Per step, J parameter
/// samples are evaluated, their gradients averaged, and the Hessian diagonal
/// refreshed with a Newton-like estimate:
///
///   hhat_j = lambda (h + delta) * ghat_j (theta_j - m)
///   g <- beta1 g + (1 - beta1) gbar
///   h <- beta2 h + (1 - beta2) hbar
///        + 0.5 (1 - beta2)^2 (h - hbar)^2 / (h + delta),  floored at 0
///   m <- m - lr (g / (1 - beta1^t) + delta m) / (h + delta)
class Ivon {
 public:
  struct Config {
    float lr = 0.02f;
    double beta1 = 0.9;
    double beta2 = 0.99999;
    double weight_decay = 1e-10;  // delta
    double ess = 1.0;             // lambda, effective sample size
    double h0 = 0.01;             // Hessian init
    std::optional<double> clip;   // elementwise bound on the m update
  };

  Ivon(nn::ParamSet& params, Config cfg)
      : cfg_(cfg), nodes_(detail::trainable_nodes(params)) {
    check_arg(cfg.ess > 0.0 && cfg.h0 >= 0.0 &&
                  cfg.h0 + cfg.weight_decay > 0.0,
              "ivon: need ess > 0 and h0 + weight_decay > 0");
    for (auto* n : nodes_) {
      m_.emplace_back(n->data.begin(), n->data.end());
      h_.emplace_back(n->data.size(), cfg.h0);
      g_.emplace_back(n->data.size(), 0.0);
      gbar_acc_.emplace_back(n->data.size(), 0.0);
      hbar_acc_.emplace_back(n->data.size(), 0.0);
    }
  }

  /// theta = m + sigma (.) eps with sigma = (lambda (h + delta))^(-1/2),
  /// written into the model parameters.
  void sample_params(RngStream& rng) {
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      auto* n = nodes_[p];
      for (std::size_t i = 0; i < n->data.size(); ++i) {
        const double m = m_[p][i];
        const double sigma = posterior_sigma(p, i);
        if (!std::isfinite(m) || !std::isfinite(sigma))
          throw NumericError("ivon_sample: non-finite state");
        n->data[i] = static_cast<float>(m + sigma * rng.normal());
      }
    }
  }

  /// Writes the posterior mean back into the model parameters.
  void restore_mean() {
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      auto* n = nodes_[p];
      for (std::size_t i = 0; i < n->data.size(); ++i)
        n->data[i] = static_cast<float>(m_[p][i]);
    }
  }

  void begin_step() {
    for (auto& a : gbar_acc_) std::fill(a.begin(), a.end(), 0.0);
    for (auto& a : hbar_acc_) std::fill(a.begin(), a.end(), 0.0);
    samples_in_step_ = 0;
  }

  /// Folds in one (gradient, sampled theta) pair; read from the parameter
  /// tensors, so call right after backward and before zeroing gradients.
  /// Aggregation order is the caller's loop order (ascending j).
  void accumulate() {
    detail::check_grads_finite(nodes_, "ivon_step");
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      auto* n = nodes_[p];
      for (std::size_t i = 0; i < n->data.size(); ++i) {
        const double g = n->grad[i];
        const double scale = cfg_.ess * (h_[p][i] + cfg_.weight_decay);
        gbar_acc_[p][i] += g;
        hbar_acc_[p][i] += scale * g * (double(n->data[i]) - m_[p][i]);
      }
    }
    ++samples_in_step_;
  }

  /// Applies the update from the samples accumulated since begin_step() and
  /// leaves the parameters at the new posterior mean.
  void step() {
    check_arg(samples_in_step_ >= 1,
              "ivon_step: need at least one accumulated sample (J >= 1)");
    ++t_;
    const double J = samples_in_step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      for (std::size_t i = 0; i < m_[p].size(); ++i) {
        const double gbar = gbar_acc_[p][i] / J;
        const double hbar = hbar_acc_[p][i] / J;
        double& g = g_[p][i];
        double& h = h_[p][i];
        g = cfg_.beta1 * g + (1.0 - cfg_.beta1) * gbar;
        const double hd = h + cfg_.weight_decay;
        h = cfg_.beta2 * h + (1.0 - cfg_.beta2) * hbar +
            0.5 * (1.0 - cfg_.beta2) * (1.0 - cfg_.beta2) * (h - hbar) *
                (h - hbar) / hd;
        if (h < 0.0) h = 0.0;
        double update = cfg_.lr * (g / bc1 + cfg_.weight_decay * m_[p][i]) /
                        (h + cfg_.weight_decay);
        if (cfg_.clip)
          update = std::clamp(update, -*cfg_.clip, *cfg_.clip);
        m_[p][i] -= update;
      }
    }
    restore_mean();
  }

  double posterior_sigma(std::size_t p, std::size_t i) const {
    return 1.0 / std::sqrt(cfg_.ess * (h_[p][i] + cfg_.weight_decay));
  }
  double posterior_variance(std::size_t p, std::size_t i) const {
    const double s = posterior_sigma(p, i);
    return s * s;
  }

  const std::vector<std::vector<double>>& mean() const { return m_; }
  const std::vector<std::vector<double>>& hessian() const { return h_; }
  const Config& config() const { return cfg_; }
  std::int64_t step_count() const { return t_; }

  /// Serialisable posterior state (flattened h plus hyperparameters); the
  /// posterior mean itself is stored as the model parameters.
  std::vector<io::NamedArray> state_arrays() const {
    std::vector<float> h_flat;
    for (const auto& hp : h_)
      for (double v : hp) h_flat.push_back(static_cast<float>(v));
    std::vector<io::NamedArray> out;
    out.push_back({"opt/ivon/h",
                   {static_cast<std::int64_t>(h_flat.size())},
                   std::move(h_flat)});
    out.push_back({"opt/ivon/hyper",
                   {2},
                   {static_cast<float>(cfg_.ess),
                    static_cast<float>(cfg_.weight_decay)}});
    return out;
  }

  /// Restores h (and checks layout) from checkpoint entries.
  void load_state(const std::vector<io::NamedArray>& entries) {
    const auto* h = io::find_entry(entries, "opt/ivon/h");
    check_arg(h != nullptr, "checkpoint has no IVON posterior state");
    std::size_t total = 0;
    for (const auto& hp : h_) total += hp.size();
    check_arg(h->values.size() == total,
              "IVON state size mismatch: checkpoint " +
                  std::to_string(h->values.size()) + ", model " +
                  std::to_string(total));
    std::size_t k = 0;
    for (auto& hp : h_)
      for (double& v : hp) v = h->values[k++];
    for (std::size_t p = 0; p < nodes_.size(); ++p)
      for (std::size_t i = 0; i < nodes_[p]->data.size(); ++i)
        m_[p][i] = nodes_[p]->data[i];
  }

 private:
  Config cfg_;
  std::vector<pulseuq::detail::TensorNode*> nodes_;
  std::vector<std::vector<double>> m_, h_, g_;
  std::vector<std::vector<double>> gbar_acc_, hbar_acc_;
  int samples_in_step_ = 0;
  std::int64_t t_ = 0;
};

}  // namespace pulseuq::optim
