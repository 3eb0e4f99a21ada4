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
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pulseuq/losses/losses.hpp"
#include "test_util.hpp"

namespace pulseuq {
namespace {

using losses::bp_joint_loss;
using losses::gaussian_nll;
using losses::mc_average_softmax;
using losses::mc_softmax_nll;
using testing::finite_difference_check;
using testing::random_values;

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)

TEST(GaussianNll, AnalyticValueAtStandardPoint) {
  EXPECT_NEAR(gaussian_nll(0.0f, 1.0f, 0.0f).item(), kHalfLog2Pi, 1e-6);
}

TEST(GaussianNll, ResidualVanishesWhenMeanMatchesTarget) {
  for (float s2 : {0.25f, 1.0f, 7.5f}) {
    const double expected = 0.5 * std::log(2.0 * std::numbers::pi * s2);
    EXPECT_NEAR(gaussian_nll(3.2f, s2, 3.2f).item(), expected, 1e-5);
  }
}

TEST(GaussianNll, NonPositiveVarianceRejected) {
  EXPECT_THROW(gaussian_nll(0.0f, 0.0f, 1.0f), std::invalid_argument);
  EXPECT_THROW(gaussian_nll(0.0f, -1.0f, 1.0f), std::invalid_argument);
}

TEST(GaussianNll, SigmaGradientMatchesFormulaFiniteDifference) {
  // d/d sigma2 at (mu=0, sigma2=1, y=2), oracle: central difference on the
  // closed-form expression in double precision.
  auto formula = [](double s2) {
    return 0.5 * std::log(2.0 * std::numbers::pi * s2) + 4.0 / (2.0 * s2);
  };
  const double h = 1e-6;
  const double fd = (formula(1.0 + h) - formula(1.0 - h)) / (2.0 * h);

  Tensor s2 = Tensor::scalar(1.0f, true);
  Tensor loss = gaussian_nll(Tensor::scalar(0.0f), s2, Tensor::scalar(2.0f));
  loss.backward();
  EXPECT_NEAR(s2.grad()[0], fd, 1e-4);
  EXPECT_NEAR(fd, -1.5, 1e-5);  // 1/(2s2) - (y-mu)^2/(2 s2^2) at (0,1,2)
}

TEST(GaussianNll, ConvexInMeanForFixedVariance) {
  std::mt19937 gen(11);
  std::uniform_real_distribution<float> d(-3.0f, 3.0f);
  std::uniform_real_distribution<float> ds(0.2f, 4.0f);
  for (int i = 0; i < 200; ++i) {
    const float m1 = d(gen), m2 = d(gen), y = d(gen), s2 = ds(gen);
    const float mid = 0.5f * (m1 + m2);
    const double lhs = gaussian_nll(mid, s2, y).item();
    const double rhs = 0.5 * (gaussian_nll(m1, s2, y).item() +
                              gaussian_nll(m2, s2, y).item());
    EXPECT_LE(lhs, rhs + 1e-5);
  }
}

TEST(BpJointLoss, BothHeadsPerfectGivesTwoHalfLog2Pi) {
  Tensor out = Tensor::from_data({1, 4}, {120.0f, 60.0f, 1.0f, 1.0f});
  Tensor y = Tensor::from_data({1, 2}, {120.0f, 60.0f});
  EXPECT_NEAR(bp_joint_loss(out, y).item(), 2.0 * kHalfLog2Pi, 1e-5);
}

TEST(BpJointLoss, EqualsSumOfPerHeadNll) {
  std::mt19937 gen(13);
  std::uniform_real_distribution<float> d(-2.0f, 2.0f);
  std::uniform_real_distribution<float> ds(0.3f, 3.0f);
  const float mu1 = d(gen), mu2 = d(gen), y1 = d(gen), y2 = d(gen);
  const float s1 = ds(gen), s2 = ds(gen);
  Tensor out = Tensor::from_data({1, 4}, {mu1, mu2, s1, s2});
  Tensor y = Tensor::from_data({1, 2}, {y1, y2});
  const double expected =
      gaussian_nll(mu1, s1, y1).item() + gaussian_nll(mu2, s2, y2).item();
  EXPECT_NEAR(bp_joint_loss(out, y).item(), expected, 1e-5);
}

TEST(BpJointLoss, BatchMeanMatchesHandAverage) {
  const std::vector<float> outs = {118, 64, 2.0, 1.5,   //
                                   102, 55, 0.7, 0.9,   //
                                   131, 72, 4.0, 3.0};
  const std::vector<float> ys = {120, 62, 101, 58, 128, 75};
  Tensor out = Tensor::from_data({3, 4}, outs);
  Tensor y = Tensor::from_data({3, 2}, ys);
  double hand = 0.0;
  for (int b = 0; b < 3; ++b) {
    hand += gaussian_nll(outs[b * 4 + 0], outs[b * 4 + 2], ys[b * 2 + 0]).item();
    hand += gaussian_nll(outs[b * 4 + 1], outs[b * 4 + 3], ys[b * 2 + 1]).item();
  }
  hand /= 3.0;
  EXPECT_NEAR(bp_joint_loss(out, y).item(), hand, 1e-5);
}

TEST(McSoftmaxNll, DegenerateNoiseReducesToCrossEntropy) {
  std::mt19937 gen(17);
  std::uniform_real_distribution<float> d(-2.0f, 2.0f);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> f = {d(gen), d(gen)};
    Tensor ft = Tensor::from_data({1, 2}, f);
    Tensor st = Tensor::zeros({1, 2});
    RngStream rng(trial, RngUse::kLogitNoise);
    const double loss = mc_softmax_nll(ft, st, {1}, 1, rng).item();
    // plain cross-entropy of softmax(f), class 1
    const double m = std::max(f[0], f[1]);
    const double z = std::exp(f[0] - m) + std::exp(f[1] - m);
    const double ce = -std::log(std::exp(f[1] - m) / z);
    EXPECT_NEAR(loss, ce, 1e-6);
  }
}

TEST(McSoftmaxNll, SymmetricZeroLogitsGiveLn2) {
  Tensor f = Tensor::zeros({1, 2});
  Tensor s = Tensor::zeros({1, 2});
  RngStream rng(3, RngUse::kLogitNoise);
  EXPECT_NEAR(mc_softmax_nll(f, s, {0}, 64, rng).item(), std::log(2.0), 1e-6);
}

TEST(McSoftmaxNll, TBelowOneRejected) {
  Tensor f = Tensor::zeros({1, 2});
  RngStream rng(3, RngUse::kLogitNoise);
  EXPECT_THROW(mc_softmax_nll(f, f, {0}, 0, rng), std::invalid_argument);
}

TEST(McSoftmaxNll, PbarIsAProbabilityVector) {
  std::mt19937 gen(23);
  std::uniform_real_distribution<float> d(-4.0f, 4.0f);
  std::uniform_real_distribution<float> dsig(0.0f, 3.0f);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 2 + (trial % 3);
    std::vector<float> f(classes), s(classes);
    for (auto& v : f) v = d(gen);
    for (auto& v : s) v = dsig(gen);
    RngStream rng(trial, RngUse::kLogitNoise);
    const int T = 1 + (trial % 7);
    auto pbar = mc_average_softmax(f, s, T, rng);
    double sum = 0.0;
    for (double p : pbar) {
      EXPECT_GE(p, 0.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(McSoftmaxNll, ShiftInvarianceWithSharedNoise) {
  auto f = random_values(8, 29, -1.0f, 1.0f);
  auto fs = f;
  for (auto& v : fs) v += 3.25f;
  auto sig = random_values(8, 31, 0.1f, 2.0f);
  Tensor st = Tensor::from_data({4, 2}, sig);
  RngStream r1(7, RngUse::kLogitNoise);
  RngStream r2(7, RngUse::kLogitNoise);  // identical draws
  const double l1 =
      mc_softmax_nll(Tensor::from_data({4, 2}, f), st, {0, 1, 0, 1}, 32, r1)
          .item();
  const double l2 =
      mc_softmax_nll(Tensor::from_data({4, 2}, fs), st, {0, 1, 0, 1}, 32, r2)
          .item();
  EXPECT_NEAR(l1, l2, 1e-6);
}

TEST(McSoftmaxNll, HighTMatchesBruteForceMonteCarlo) {
  // f = (1, 0), sigma = (2, 2); the implementation's pbar at T = 1e5 must
  // agree with an independent 1e7-draw double-precision estimate within
  // three combined standard errors.
  const int T_impl = 100000;
  const long T_oracle = 10000000;
  std::vector<float> f = {1.0f, 0.0f}, s = {2.0f, 2.0f};
  RngStream rng(1234, RngUse::kLogitNoise);
  auto pbar = mc_average_softmax(f, s, T_impl, rng);

  std::mt19937_64 gen(777);
  std::normal_distribution<double> nd(0.0, 1.0);
  double acc0 = 0.0, acc0_sq = 0.0;
  for (long t = 0; t < T_oracle; ++t) {
    const double x0 = 1.0 + 2.0 * nd(gen);
    const double x1 = 0.0 + 2.0 * nd(gen);
    const double m = std::max(x0, x1);
    const double e0 = std::exp(x0 - m), e1 = std::exp(x1 - m);
    const double p0 = e0 / (e0 + e1);
    acc0 += p0;
    acc0_sq += p0 * p0;
  }
  const double oracle_p0 = acc0 / T_oracle;
  const double var_single = acc0_sq / T_oracle - oracle_p0 * oracle_p0;
  const double se_combined =
      std::sqrt(var_single / T_oracle + var_single / T_impl);
  EXPECT_NEAR(pbar[0], oracle_p0, 3.0 * se_combined)
      << "se=" << se_combined;
  EXPECT_NEAR(pbar[0] + pbar[1], 1.0, 1e-9);
}

TEST(McSoftmaxNll, GradientMatchesFiniteDifferencesWithSharedNoise) {
  auto f = random_values(6, 37, -1.5f, 1.5f);
  auto s = random_values(6, 41, 0.2f, 1.5f);
  auto res = finite_difference_check(
      [](std::vector<Tensor>& in) {
        RngStream rng(55, RngUse::kLogitNoise);  // same draws on every call
        return mc_softmax_nll(in[0], in[1], {0, 1, 1}, 16, rng);
      },
      {f, s}, {{3, 2}, {3, 2}}, 1e-3, 0, 0.02);
  EXPECT_LT(res.max_rel_err, 2e-2) << res.worst;
}

TEST(McSoftmaxNll, GradCheckThroughClassifierHeadSplit) {
  // f and sigma produced from a single (B, 4) output via the head split,
  // mirroring the training path.
  auto raw = random_values(8, 43, -1.0f, 1.0f);
  auto res = finite_difference_check(
      [](std::vector<Tensor>& in) {
        Tensor f = slice_cols(in[0], 0, 2);
        Tensor logvar = clamp(slice_cols(in[0], 2, 2), -15.0f, 15.0f);
        Tensor sigma = exp(mul_scalar(logvar, 0.5f));
        RngStream rng(66, RngUse::kLogitNoise);
        return mc_softmax_nll(f, sigma, {1, 0}, 24, rng);
      },
      {raw}, {{2, 4}}, 1e-3, 0, 0.02);
  EXPECT_LT(res.max_rel_err, 2e-2) << res.worst;
}

}  // namespace
}  // namespace pulseuq
