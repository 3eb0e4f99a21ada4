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
#include <random>

#include "pulseuq/uq/uq.hpp"
#include "test_util.hpp"

namespace pulseuq {
namespace {

using testing::random_values;
using uq::aggregate_classification;
using uq::aggregate_regression;
using uq::ClassificationUQ;
using uq::entropy_bits;
using uq::epistemic_share;

TEST(AggregateRegression, HandEvaluatedVarianceOfMeans) {
  // mu_k = {0, 2} -> population variance 1; sigma2_k = {1, 3} -> mean 2.
  std::vector<std::array<double, 4>> passes = {{0.0, 0.0, 1.0, 1.0},
                                               {2.0, 2.0, 3.0, 3.0}};
  auto r = aggregate_regression(passes);
  for (int head = 0; head < 2; ++head) {
    EXPECT_DOUBLE_EQ(r.mu_mean[head], 1.0);
    EXPECT_DOUBLE_EQ(r.sigma2_epi[head], 1.0);
    EXPECT_DOUBLE_EQ(r.sigma2_ale[head], 2.0);
    EXPECT_DOUBLE_EQ(r.sigma2_total[head], 3.0);
  }
}

TEST(AggregateRegression, KBelowTwoRejected) {
  std::vector<std::array<double, 4>> one = {{0, 0, 1, 1}};
  EXPECT_THROW(aggregate_regression(one), std::invalid_argument);
}

TEST(AggregateRegression, TotalIsExactSumAndNonNegative) {
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> dmu(-50.0, 150.0);
  std::uniform_real_distribution<double> ds2(0.01, 40.0);
  std::uniform_int_distribution<int> dk(2, 30);
  for (int trial = 0; trial < 10000; ++trial) {
    const int K = dk(gen);
    std::vector<std::array<double, 4>> passes(K);
    for (auto& p : passes)
      p = {dmu(gen), dmu(gen), ds2(gen), ds2(gen)};
    auto r = aggregate_regression(passes);
    for (int head = 0; head < 2; ++head) {
      EXPECT_GE(r.sigma2_epi[head], 0.0);
      EXPECT_GE(r.sigma2_ale[head], 0.0);
      EXPECT_DOUBLE_EQ(r.sigma2_total[head],
                       r.sigma2_epi[head] + r.sigma2_ale[head]);
    }
  }
}

TEST(AggregateClassification, SinglePassCollapsesEntropies) {
  auto r = aggregate_classification({{0.8, 0.2}});
  EXPECT_DOUBLE_EQ(r.H_ale, r.H_total);
  EXPECT_DOUBLE_EQ(r.H_epi, 0.0);
  EXPECT_EQ(r.predicted_class, 0);
}

TEST(AggregateClassification, UniformPassesGiveOneBit) {
  std::vector<std::vector<double>> passes(5, {0.5, 0.5});
  auto r = aggregate_classification(passes);
  EXPECT_NEAR(r.H_total, 1.0, 1e-12);
  EXPECT_NEAR(r.H_ale, 1.0, 1e-12);
}

TEST(AggregateClassification, DisagreeingCertainPassesAreAllEpistemic) {
  auto r = aggregate_classification({{1.0, 0.0}, {0.0, 1.0}});
  EXPECT_DOUBLE_EQ(r.H_ale, 0.0);
  EXPECT_NEAR(r.H_total, 1.0, 1e-12);
  auto share = epistemic_share(r);
  ASSERT_TRUE(share.has_value());
  EXPECT_DOUBLE_EQ(*share, 1.0);
}

TEST(EpistemicShare, TrivialCases) {
  EXPECT_DOUBLE_EQ(*epistemic_share(0.0, 2.0), 0.0);
  EXPECT_DOUBLE_EQ(*epistemic_share(1.5, 3.0), 0.5);
  EXPECT_FALSE(epistemic_share(0.0, 0.0).has_value());
}

TEST(AggregateClassification, EntropyOrderingHoldsOverRandomSweep) {
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::uniform_int_distribution<int> dk(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const int K = dk(gen);
    std::vector<std::vector<double>> passes(K);
    for (auto& p : passes) {
      const double a = d(gen);
      p = {a, 1.0 - a};
    }
    auto r = aggregate_classification(passes);
    EXPECT_LE(r.H_ale, r.H_total + 1e-9);
    EXPECT_LE(r.H_total, 1.0 + 1e-9);
    EXPECT_NEAR(r.p_mean[0] + r.p_mean[1], 1.0, 1e-9);
  }
}

TEST(LawOfTotalVariance, MixtureDrawsMatchDecomposition) {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> dmu(-2.0, 2.0);
  std::uniform_real_distribution<double> ds(0.2, 2.0);
  for (int cfg = 0; cfg < 3; ++cfg) {
    const int K = 4 + 3 * cfg;
    std::vector<std::array<double, 4>> passes(K);
    for (auto& p : passes) {
      const double mu = dmu(gen), s2 = ds(gen);
      p = {mu, mu, s2, s2};
    }
    auto r = aggregate_regression(passes);
    const long draws = 200000;
    std::uniform_int_distribution<int> pick(0, K - 1);
    double s = 0.0, s2acc = 0.0;
    for (long i = 0; i < draws; ++i) {
      const auto& p = passes[pick(gen)];
      const double y = p[0] + std::sqrt(p[2]) * nd(gen);
      s += y;
      s2acc += y * y;
    }
    const double mean = s / draws;
    const double var = s2acc / draws - mean * mean;
    EXPECT_NEAR(var, r.sigma2_total[0], 0.03 * r.sigma2_total[0]);
  }
}

// --- model-driven loops (small input lengths keep these fast) ---

nn::ModelConfig small_resnet_cfg(float rate) {
  nn::ModelConfig cfg;
  cfg.task = nn::Task::kRegression;
  cfg.dropout_rate = rate;
  cfg.input_len = 64;
  return cfg;
}

nn::ModelConfig small_classifier_cfg(float rate) {
  nn::ModelConfig cfg;
  cfg.task = nn::Task::kClassification;
  cfg.dropout_rate = rate;
  cfg.input_len = 256;
  return cfg;
}

TEST(McdEvalRegression, DropoutZeroGivesZeroEpistemicAndBitwisePasses) {
  nn::ResNet1d model(small_resnet_cfg(0.0f), RngStream(3, RngUse::kInit));
  auto x = random_values(64, 5, -1.0f, 1.0f);
  RngStream drop(9, RngUse::kDropout);
  auto passes = uq::mcd_regression_passes(model, x, 6, drop);
  for (int k = 1; k < 6; ++k)
    for (int c = 0; c < 4; ++c)
      EXPECT_EQ(passes[k][c], passes[0][c]) << "pass " << k << " col " << c;
  auto r = aggregate_regression(passes);
  EXPECT_EQ(r.sigma2_epi[0], 0.0);
  EXPECT_EQ(r.sigma2_epi[1], 0.0);
  EXPECT_DOUBLE_EQ(r.sigma2_ale[0], passes[0][2]);
}

TEST(McdEvalRegression, ActiveDropoutSpreadsTheMeans) {
  nn::ResNet1d model(small_resnet_cfg(0.4f), RngStream(3, RngUse::kInit));
  // Warm the batch-norm running statistics with a few training-mode passes;
  // fresh (0, 1) stats leave the narrow final stage saturated at zero.
  RngStream warm(17, RngUse::kDropout);
  for (int i = 0; i < 20; ++i) {
    Tensor batch = Tensor::from_data(
        {8, 1, 64}, random_values(8 * 64, 100 + i, -1.0f, 1.0f));
    nn::ForwardMode train_mode{.dropout_active = true,
                               .bn_training = true,
                               .dropout_rng = &warm};
    model.forward(batch, train_mode);
  }
  auto x = random_values(64, 7, -1.0f, 1.0f);
  RngStream drop(9, RngUse::kDropout);
  auto r = uq::mcd_eval_regression(model, x, 16, drop);
  EXPECT_GT(r.sigma2_epi[0], 0.0);
  EXPECT_GT(r.sigma2_ale[0], 0.0);
}

TEST(McdEvalClassification, EntropyOrderingOnModelOutputs) {
  nn::ConvClassifier model(small_classifier_cfg(0.3f),
                           RngStream(4, RngUse::kInit));
  auto x = random_values(256, 11, -1.0f, 1.0f);
  RngStream drop(13, RngUse::kDropout);
  RngStream logit(15, RngUse::kLogitNoise);
  auto r = uq::mcd_eval_classification(model, x, 12, 20, drop, logit);
  EXPECT_LE(r.H_ale, r.H_total + 1e-9);
  EXPECT_NEAR(r.p_mean[0] + r.p_mean[1], 1.0, 1e-9);
}

TEST(IvonEval, SingleDrawCollapsesEntropies) {
  nn::ConvClassifier model(small_classifier_cfg(0.0f),
                           RngStream(6, RngUse::kInit));
  optim::Ivon opt(model.params(), {.ess = 100.0, .h0 = 0.5});
  std::vector<std::vector<float>> inputs = {random_values(256, 21, -1, 1)};
  RngStream sample(31, RngUse::kIvonSample);
  RngStream logit(33, RngUse::kLogitNoise);
  auto res = uq::ivon_eval(model, opt, inputs, 1, 50, sample, logit);
  ASSERT_EQ(res.size(), 1u);
  EXPECT_DOUBLE_EQ(res[0].H_ale, res[0].H_total);
}

TEST(IvonEval, ConcentratedPosteriorHasVanishingEpistemicEntropy) {
  nn::ConvClassifier model(small_classifier_cfg(0.0f),
                           RngStream(6, RngUse::kInit));
  optim::Ivon opt(model.params(), {.ess = 1.0, .h0 = 1e18});
  std::vector<std::vector<float>> inputs = {random_values(256, 23, -1, 1)};
  RngStream sample(41, RngUse::kIvonSample);
  RngStream logit(43, RngUse::kLogitNoise);
  auto res = uq::ivon_eval(model, opt, inputs, 16, 400, sample, logit);
  EXPECT_NEAR(res[0].H_total, res[0].H_ale, 0.01);
}

// Minimal four-output model so the J = 1e4 convergence check stays cheap.
struct TinyHeadModel {
  nn::DenseLayer dense;
  nn::ParamSet ps;
  explicit TinyHeadModel(RngStream rng) : dense(8, 4, rng) {
    dense.register_params(ps, "dense");
  }
  nn::ParamSet& params() { return ps; }
  Tensor forward(const Tensor& x, const nn::ForwardMode&) {
    return dense.forward(reshape(x, {x.size(0), x.size(2)}));
  }
};

TEST(IvonEval, LargeJConvergesAcrossSeeds) {
  TinyHeadModel model(RngStream(8, RngUse::kInit));
  optim::Ivon opt(model.params(), {.ess = 50.0, .h0 = 0.5});
  std::vector<std::vector<float>> inputs = {random_values(8, 25, -1, 1)};
  auto run = [&](std::uint64_t seed) {
    RngStream sample(seed, RngUse::kIvonSample);
    RngStream logit(seed + 1, RngUse::kLogitNoise);
    return uq::ivon_eval(model, opt, inputs, 10000, 8, sample, logit)[0]
        .H_total;
  };
  const double h1 = run(100);
  const double h2 = run(200);
  EXPECT_NEAR(h1, h2, 0.01) << h1 << " vs " << h2;
}

TEST(IvonEval, RestoresPosteriorMeanAfterEvaluation) {
  nn::ConvClassifier model(small_classifier_cfg(0.0f),
                           RngStream(9, RngUse::kInit));
  std::vector<float> before(
      model.params().items()[0].tensor.data().begin(),
      model.params().items()[0].tensor.data().end());
  optim::Ivon opt(model.params(), {.ess = 10.0, .h0 = 0.1});
  std::vector<std::vector<float>> inputs = {random_values(256, 27, -1, 1)};
  RngStream sample(51, RngUse::kIvonSample);
  RngStream logit(53, RngUse::kLogitNoise);
  uq::ivon_eval(model, opt, inputs, 3, 4, sample, logit);
  std::vector<float> after(model.params().items()[0].tensor.data().begin(),
                           model.params().items()[0].tensor.data().end());
  EXPECT_EQ(before, after);
}

}  // namespace
}  // namespace pulseuq
