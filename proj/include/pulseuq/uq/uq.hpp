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

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pulseuq/losses/losses.hpp"
#include "pulseuq/nn/models.hpp"
#include "pulseuq/optim/optim.hpp"

namespace pulseuq::uq {

/// Disentangled regression result per example; index 0 is SBP, 1 is DBP.
/// sigma2_total = sigma2_epi + sigma2_ale by construction.
struct RegressionUQ {
  std::array<double, 2> mu_mean{};
  std::array<double, 2> sigma2_epi{};
  std::array<double, 2> sigma2_ale{};
  std::array<double, 2> sigma2_total{};
};

struct ClassificationUQ {
  std::vector<double> p_mean;
  double H_total = 0.0;  // bits
  double H_ale = 0.0;    // bits
  double H_epi = 0.0;    // H_total - H_ale
  int predicted_class = 0;
};

/// Shannon entropy in bits with the 0 log 0 := 0 convention.
inline double entropy_bits(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log2(v);
  return h;
}

/// Variance-of-means / mean-of-variances decomposition over K passes.
/// passes[k] = (mu_SBP, mu_DBP, sigma2_SBP, sigma2_DBP). The variance of
/// the means uses the 1/K population normalisation.
inline RegressionUQ aggregate_regression(
    const std::vector<std::array<double, 4>>& passes) {
  const std::size_t K = passes.size();
  check_arg(K >= 2, "regression evaluation needs K >= 2 passes, got " +
                        std::to_string(K));
  RegressionUQ r;
  for (int head = 0; head < 2; ++head) {
    double mu_sum = 0.0, ale_sum = 0.0;
    for (const auto& p : passes) {
      mu_sum += p[head];
      ale_sum += p[2 + head];
    }
    const double mu_mean = mu_sum / K;
    double var = 0.0;
    for (const auto& p : passes) {
      const double d = p[head] - mu_mean;
      var += d * d;
    }
    r.mu_mean[head] = mu_mean;
    r.sigma2_epi[head] = var / K;
    r.sigma2_ale[head] = ale_sum / K;
    r.sigma2_total[head] = r.sigma2_epi[head] + r.sigma2_ale[head];
  }
  return r;
}

/// Entropy decomposition over K per-pass probability vectors:
/// H_ale = (1/K) sum_k H(pbar_k), H_total = H((1/K) sum_k pbar_k).
inline ClassificationUQ aggregate_classification(
    const std::vector<std::vector<double>>& pbar_k) {
  const std::size_t K = pbar_k.size();
  check_arg(K >= 1, "classification evaluation needs K >= 1 passes");
  const std::size_t classes = pbar_k[0].size();
  ClassificationUQ r;
  r.p_mean.assign(classes, 0.0);
  double hale = 0.0;
  for (const auto& p : pbar_k) {
    check_arg(p.size() == classes, "inconsistent class counts across passes");
    for (std::size_t i = 0; i < classes; ++i) r.p_mean[i] += p[i];
    hale += entropy_bits(p);
  }
  for (auto& v : r.p_mean) v /= K;
  r.H_ale = hale / K;
  r.H_total = entropy_bits(r.p_mean);
  r.H_epi = r.H_total - r.H_ale;
  r.predicted_class = 0;
  for (std::size_t i = 1; i < classes; ++i)
    if (r.p_mean[i] > r.p_mean[r.predicted_class])
      r.predicted_class = static_cast<int>(i);
  return r;
}

/// Fraction of the total uncertainty that is epistemic; absent when the
/// total is not positive.
inline std::optional<double> epistemic_share(double epistemic, double total) {
  if (!(total > 0.0)) return std::nullopt;
  return epistemic / total;
}

inline std::optional<double> epistemic_share(const RegressionUQ& r, int head) {
  return epistemic_share(r.sigma2_epi[head], r.sigma2_total[head]);
}

inline std::optional<double> epistemic_share(const ClassificationUQ& r) {
  return epistemic_share(r.H_epi, r.H_total);
}

namespace detail {

/// Tiles one example into a (K, 1, L) batch so the K stochastic passes run
/// as a single forward.
inline Tensor tile_input(std::span<const float> x, int K) {
  const auto L = static_cast<std::int64_t>(x.size());
  std::vector<float> data(static_cast<std::size_t>(K) * L);
  for (int k = 0; k < K; ++k)
    std::copy(x.begin(), x.end(), data.begin() + k * L);
  return Tensor::from_data({K, 1, L}, std::move(data));
}

/// Classifier head row -> MC-averaged class probabilities (T logit-noise
/// samples), sharing the sampling scheme of the training objective.
inline std::vector<double> pbar_from_classifier_row(const float* row, int T,
                                                    RngStream& rng) {
  const float f[2] = {row[0], row[1]};
  const float lv0 = std::clamp(row[2], nn::kLogVarMin, nn::kLogVarMax);
  const float lv1 = std::clamp(row[3], nn::kLogVarMin, nn::kLogVarMax);
  const float s[2] = {std::exp(0.5f * lv0), std::exp(0.5f * lv1)};
  return losses::mc_average_softmax(std::span<const float>(f, 2),
                                    std::span<const float>(s, 2), T, rng);
}

}  // namespace detail

/// Monte Carlo Dropout regression loop for one example: K stochastic passes
/// with dropout active (batch norm stays in inference mode), returning the
/// raw per-pass head outputs.
template <typename Model>
std::vector<std::array<double, 4>> mcd_regression_passes(
    Model& model, std::span<const float> x, int K, RngStream& dropout_rng) {
  check_arg(K >= 2, "mcd_eval_regression: K must be >= 2, got " +
                        std::to_string(K));
  Tensor batch = detail::tile_input(x, K);
  nn::ForwardMode mode{.dropout_active = true,
                       .bn_training = false,
                       .dropout_rng = &dropout_rng};
  Tensor out = model.forward(batch, mode);
  std::vector<std::array<double, 4>> passes(K);
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < 4; ++c)
      passes[k][c] = out.data()[k * 4 + c];
  return passes;
}

template <typename Model>
RegressionUQ mcd_eval_regression(Model& model, std::span<const float> x, int K,
                                 RngStream& dropout_rng) {
  return aggregate_regression(mcd_regression_passes(model, x, K, dropout_rng));
}

/// Monte Carlo Dropout classification loop for one example: K dropout
/// passes, each expanded into a T-sample logit-noise average.
template <typename Model>
ClassificationUQ mcd_eval_classification(Model& model, std::span<const float> x,
                                         int K, int T, RngStream& dropout_rng,
                                         RngStream& logit_rng) {
  check_arg(K >= 1 && T >= 1, "mcd_eval_classification: need K >= 1, T >= 1");
  Tensor batch = detail::tile_input(x, K);
  nn::ForwardMode mode{.dropout_active = true,
                       .bn_training = false,
                       .dropout_rng = &dropout_rng};
  Tensor out = model.forward(batch, mode);
  std::vector<std::vector<double>> pbar_k(K);
  for (int k = 0; k < K; ++k)
    pbar_k[k] =
        detail::pbar_from_classifier_row(out.data().data() + k * 4, T,
                                         logit_rng);
  return aggregate_classification(pbar_k);
}

/// IVON evaluation: the K dropout passes are replaced by J parameter draws
/// from N(m, 1/(lambda (h + delta))) and dropout stays inactive. Evaluates a
/// whole split so each draw is a single batched forward; parameters are left
/// at the posterior mean afterwards.
template <typename Model>
std::vector<ClassificationUQ> ivon_eval(
    Model& model, optim::Ivon& opt,
    const std::vector<std::vector<float>>& inputs, int J, int T,
    RngStream& sample_rng, RngStream& logit_rng, std::int64_t max_batch = 256) {
  check_arg(J >= 1 && T >= 1, "ivon_eval: need J >= 1, T >= 1");
  const auto n = static_cast<std::int64_t>(inputs.size());
  if (n == 0) return {};
  const auto L = static_cast<std::int64_t>(inputs[0].size());
  std::vector<std::vector<double>> p_sum(n, std::vector<double>(2, 0.0));
  std::vector<double> hale_sum(n, 0.0);

  for (int j = 0; j < J; ++j) {
    opt.sample_params(sample_rng);
    for (std::int64_t begin = 0; begin < n; begin += max_batch) {
      const std::int64_t bsz = std::min<std::int64_t>(max_batch, n - begin);
      std::vector<float> data(static_cast<std::size_t>(bsz) * L);
      for (std::int64_t b = 0; b < bsz; ++b)
        std::copy(inputs[begin + b].begin(), inputs[begin + b].end(),
                  data.begin() + b * L);
      Tensor batch = Tensor::from_data({bsz, 1, L}, std::move(data));
      Tensor out = model.forward(batch, nn::ForwardMode{});
      for (std::int64_t b = 0; b < bsz; ++b) {
        auto pbar = detail::pbar_from_classifier_row(
            out.data().data() + b * 4, T, logit_rng);
        p_sum[begin + b][0] += pbar[0];
        p_sum[begin + b][1] += pbar[1];
        hale_sum[begin + b] += entropy_bits(pbar);
      }
    }
  }
  opt.restore_mean();

  std::vector<ClassificationUQ> results(n);
  for (std::int64_t i = 0; i < n; ++i) {
    ClassificationUQ& r = results[i];
    r.p_mean = {p_sum[i][0] / J, p_sum[i][1] / J};
    r.H_ale = hale_sum[i] / J;
    r.H_total = entropy_bits(r.p_mean);
    r.H_epi = r.H_total - r.H_ale;
    r.predicted_class = r.p_mean[1] > r.p_mean[0] ? 1 : 0;
  }
  return results;
}

}  // namespace pulseuq::uq
