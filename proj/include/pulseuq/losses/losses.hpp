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
#include <numbers>
#include <vector>

#include "pulseuq/core/ops.hpp"
#include "pulseuq/core/rng.hpp"
#include "pulseuq/core/tensor.hpp"

namespace pulseuq::losses {

inline constexpr double kProbFloor = 1e-12;

/// Elementwise heteroscedastic Gaussian negative log-likelihood:
///   0.5 ln(2 pi sigma^2) + (y - mu)^2 / (2 sigma^2).
/// Differentiable in mu and sigma2; sigma2 must be strictly positive.
inline Tensor gaussian_nll(const Tensor& mu, const Tensor& sigma2,
                           const Tensor& y) {
  check_arg(mu.shape() == sigma2.shape() && mu.shape() == y.shape(),
            "gaussian_nll: mu " + shape_str(mu.shape()) + ", sigma2 " +
                shape_str(sigma2.shape()) + ", y " + shape_str(y.shape()) +
                " must all match");
  for (float v : sigma2.data())
    check_arg(v > 0.0f, "gaussian_nll: sigma2 must be positive, got " +
                            std::to_string(v));
  constexpr float two_pi = 2.0f * std::numbers::pi_v<float>;
  Tensor log_term = mul_scalar(log(mul_scalar(sigma2, two_pi)), 0.5f);
  Tensor resid = div(square(sub(y, mu)), mul_scalar(sigma2, 2.0f));
  return add(log_term, resid);
}

inline Tensor gaussian_nll(float mu, float sigma2, float y) {
  return gaussian_nll(Tensor::scalar(mu), Tensor::scalar(sigma2),
                      Tensor::scalar(y));
}

/// Joint blood-pressure objective: the SBP and DBP Gaussian NLLs summed per
/// example, averaged over the batch. `out` is (B, 4) ordered
/// (mu_SBP, mu_DBP, sigma2_SBP, sigma2_DBP); `y` is (B, 2).
inline Tensor bp_joint_loss(const Tensor& out, const Tensor& y) {
  check_arg(out.shape().size() == 2 && out.size(1) == 4,
            "bp_joint_loss expects (B, 4) outputs, got " +
                shape_str(out.shape()));
  check_arg(y.shape() == (Shape{out.size(0), 2}),
            "bp_joint_loss expects (B, 2) targets, got " +
                shape_str(y.shape()));
  Tensor mu = slice_cols(out, 0, 2);
  Tensor sigma2 = slice_cols(out, 2, 2);
  Tensor per_head = gaussian_nll(mu, sigma2, y);  // (B, 2)
  // mean over B*2 elements times 2 == batch mean of per-example head sums
  return mul_scalar(mean(per_head), 2.0f);
}

/// Monte Carlo average of Softmax(f + sigma * eps) over T standard-normal
/// draws, accumulated in double. Shared helper for the loss below and for
/// the evaluation loops.
inline std::vector<double> mc_average_softmax(std::span<const float> f,
                                              std::span<const float> sigma,
                                              int T, RngStream& rng) {
  const std::size_t n = f.size();
  std::vector<double> pbar(n, 0.0);
  std::vector<double> x(n);
  for (int t = 0; t < T; ++t) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = double(f[i]) + double(sigma[i]) * rng.normal();
      m = std::max(m, x[i]);
    }
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = std::exp(x[i] - m);
      denom += x[i];
    }
    for (std::size_t i = 0; i < n; ++i) pbar[i] += x[i] / denom;
  }
  for (auto& p : pbar) p /= T;
  return pbar;
}

/// Reparameterized Monte Carlo softmax NLL. For each example, draws
/// eps ~ N(0, 1), forms sampled logits x_t = f + sigma * eps_t, averages
/// Softmax(x_t) over T draws and scores -log pbar[label], averaged over the
/// batch. Gradients flow to f and sigma through the sampled logits; the
/// probability fed to the log is floored at 1e-12 (zero gradient when the
/// floor binds).
///
/// f, sigma: (B, C); labels: B class indices; consumes T*B*C normal draws.
inline Tensor mc_softmax_nll(const Tensor& f, const Tensor& sigma,
                             const std::vector<int>& labels, int T,
                             RngStream& rng) {
  check_arg(T >= 1, "mc_softmax_nll: T must be >= 1, got " +
                        std::to_string(T));
  check_arg(f.shape().size() == 2, "mc_softmax_nll expects (B, C) logits");
  detail::check_same_shape(f, sigma, "mc_softmax_nll");
  const std::int64_t batch = f.size(0), classes = f.size(1);
  check_arg(static_cast<std::int64_t>(labels.size()) == batch,
            "mc_softmax_nll: got " + std::to_string(labels.size()) +
                " labels for batch " + std::to_string(batch));
  for (int y : labels)
    check_arg(y >= 0 && y < classes,
              "mc_softmax_nll: label " + std::to_string(y) +
                  " outside [0, " + std::to_string(classes) + ")");

  const bool rg = f.requires_grad() || sigma.requires_grad();
  // Per-draw probabilities and noise are kept for the backward pass.
  std::vector<float> probs(static_cast<std::size_t>(T) * batch * classes);
  std::vector<float> eps(probs.size());
  std::vector<double> pbar(batch * classes, 0.0);

  const auto fd = f.data();
  const auto sd = sigma.data();
  std::vector<float> x(classes);
  for (int t = 0; t < T; ++t) {
    for (std::int64_t b = 0; b < batch; ++b) {
      const std::size_t base =
          (static_cast<std::size_t>(t) * batch + b) * classes;
      float m = -std::numeric_limits<float>::infinity();
      for (std::int64_t i = 0; i < classes; ++i) {
        const float e = static_cast<float>(rng.normal());
        eps[base + i] = e;
        x[i] = fd[b * classes + i] + sd[b * classes + i] * e;
        m = std::max(m, x[i]);
      }
      double denom = 0.0;
      for (std::int64_t i = 0; i < classes; ++i) {
        x[i] = std::exp(x[i] - m);
        denom += x[i];
      }
      for (std::int64_t i = 0; i < classes; ++i) {
        const float p = static_cast<float>(x[i] / denom);
        probs[base + i] = p;
        pbar[b * classes + i] += p;
      }
    }
  }
  for (auto& p : pbar) p /= T;

  double loss_acc = 0.0;
  for (std::int64_t b = 0; b < batch; ++b)
    loss_acc -= std::log(std::max(pbar[b * classes + labels[b]], kProbFloor));
  auto out = detail::make_node(Shape{1}, rg);
  out->data[0] = static_cast<float>(loss_acc / batch);

  if (rg) {
    auto fn = f.node(), sn = sigma.node();
    detail::TensorNode* o = out.get();
    out->parents = {fn, sn};
    out->backward_fn = [o, fn, sn, labels, probs = std::move(probs),
                        eps = std::move(eps), pbar = std::move(pbar), T, batch,
                        classes] {
      if (fn->requires_grad) fn->ensure_grad();
      if (sn->requires_grad) sn->ensure_grad();
      const double go = o->grad[0];
      for (std::int64_t b = 0; b < batch; ++b) {
        const int y = labels[b];
        // Floor with a pass-through derivative: saturated examples keep a
        // bounded, non-zero pull instead of going silent.
        const double pb = std::max(pbar[b * classes + y], kProbFloor);
        const double coeff = -go / (double(batch) * T * pb);
        for (int t = 0; t < T; ++t) {
          const std::size_t base =
              (static_cast<std::size_t>(t) * batch + b) * classes;
          const double py = probs[base + y];
          for (std::int64_t i = 0; i < classes; ++i) {
            const double jac = py * ((i == y ? 1.0 : 0.0) - probs[base + i]);
            const double g = coeff * jac;
            if (fn->requires_grad)
              fn->grad[b * classes + i] += static_cast<float>(g);
            if (sn->requires_grad)
              sn->grad[b * classes + i] +=
                  static_cast<float>(g * eps[base + i]);
          }
        }
      }
    };
  }
  return Tensor(out);
}

}  // namespace pulseuq::losses
