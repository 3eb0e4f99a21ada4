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

#include <algorithm>
#include <cmath>
#include <set>

#include "pulseuq/calib/calib.hpp"
#include "pulseuq/data/synth.hpp"

namespace pulseuq::data {
namespace {

RngStream data_rng(std::uint64_t seed) { return {seed, RngUse::kData}; }

TEST(RhythmTask, DeterministicForFixedSeed) {
  RhythmTaskConfig cfg;
  cfg.n = 50;
  auto a = gen_rhythm_task(cfg, data_rng(7));
  auto b = gen_rhythm_task(cfg, data_rng(7));
  ASSERT_EQ(a.examples.size(), b.examples.size());
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    EXPECT_EQ(a.examples[i].samples, b.examples[i].samples);
    EXPECT_EQ(a.examples[i].class_label, b.examples[i].class_label);
  }
  auto c = gen_rhythm_task(cfg, data_rng(8));
  EXPECT_NE(a.examples[0].samples, c.examples[0].samples);
}

TEST(RhythmTask, ZeroJitterIsStrictlyPeriodicClassZero) {
  RhythmTaskConfig cfg;
  cfg.n = 4;
  cfg.jitter_regular_lo = cfg.jitter_regular_hi = 0.0;
  cfg.boundary_fraction = 0.0;
  cfg.class_balance = 0.0;  // only the regular regime
  cfg.noise_lo = cfg.noise_hi = 0.0;
  auto ds = gen_rhythm_task(cfg, data_rng(3));
  for (const auto& ex : ds.examples) {
    EXPECT_EQ(ex.class_label, 0);
    EXPECT_FLOAT_EQ(ex.regularity_cv, 0.0f);
    // Detect pulse peaks; spacing must match the period to within a sample.
    std::vector<std::int64_t> peaks;
    for (std::int64_t t = 1; t + 1 < ds.signal_len; ++t)
      if (ex.samples[t] > 1.0f && ex.samples[t] >= ex.samples[t - 1] &&
          ex.samples[t] > ex.samples[t + 1])
        peaks.push_back(t);
    ASSERT_GE(peaks.size(), 3u);
    const double period = cfg.sample_rate_hz / ex.pulse_rate_hz;
    for (std::size_t i = 1; i < peaks.size(); ++i)
      EXPECT_NEAR(double(peaks[i] - peaks[i - 1]), period, 1.01);
  }
}

TEST(RhythmTask, HighIntervalVarianceIsClassOneByConstruction) {
  RhythmTaskConfig cfg;
  cfg.n = 20;
  cfg.jitter_irregular_lo = cfg.jitter_irregular_hi = 0.5;
  cfg.boundary_fraction = 0.0;
  cfg.class_balance = 1.0;  // only the irregular regime
  auto ds = gen_rhythm_task(cfg, data_rng(5));
  for (const auto& ex : ds.examples) {
    EXPECT_EQ(ex.class_label, 1);
    EXPECT_FLOAT_EQ(ex.regularity_cv, 0.5f);
  }
}

TEST(RhythmTask, BoundaryExamplesFlaggedAndLabelledByThreshold) {
  RhythmTaskConfig cfg;
  cfg.n = 2000;
  auto ds = gen_rhythm_task(cfg, data_rng(11));
  int n_boundary = 0;
  for (const auto& ex : ds.examples) {
    EXPECT_EQ(ex.class_label, ex.regularity_cv > cfg.jitter_threshold ? 1 : 0);
    EXPECT_GT(ex.true_noise_sigma, 0.0f);
    if (ex.boundary) {
      ++n_boundary;
      EXPECT_GE(ex.regularity_cv, cfg.jitter_regular_hi - 1e-6);
      EXPECT_LE(ex.regularity_cv, cfg.jitter_irregular_lo + 1e-6);
    }
  }
  EXPECT_NEAR(double(n_boundary) / cfg.n, cfg.boundary_fraction, 0.03);
}

TEST(RhythmTask, SignalsAreNormalized) {
  RhythmTaskConfig cfg;
  cfg.n = 10;
  auto ds = gen_rhythm_task(cfg, data_rng(13));
  for (const auto& ex : ds.examples) {
    double s = 0, s2 = 0;
    for (float v : ex.samples) {
      s += v;
      s2 += double(v) * v;
    }
    EXPECT_NEAR(s / ex.samples.size(), 0.0, 1e-4);
    EXPECT_NEAR(s2 / ex.samples.size(), 1.0, 1e-3);
  }
}

TEST(HeteroRegression, ZeroNoiseEncodingIsInvertible) {
  HeteroRegressionConfig cfg;
  cfg.n = 50;
  cfg.zero_noise = true;
  auto ds = gen_hetero_regression(cfg, data_rng(17));
  for (const auto& ex : ds.examples) {
    auto [sbp, dbp] = decode_hetero_signal(ex.samples, cfg);
    EXPECT_NEAR(sbp, ex.latent[0], 1e-3);
    EXPECT_NEAR(dbp, ex.latent[1], 1e-3);
    EXPECT_FLOAT_EQ(ex.target[0], ex.latent[0]);  // no observation noise
  }
}

TEST(HeteroRegression, NoiseSigmaFollowsConfiguredSchedule) {
  HeteroRegressionConfig cfg;
  cfg.n = 2000;
  auto ds = gen_hetero_regression(cfg, data_rng(19));
  // KS-style check of sigma against U(noise_lo, noise_hi).
  std::vector<double> sigmas;
  for (const auto& ex : ds.examples) {
    EXPECT_GT(ex.true_noise_sigma, 0.0f);
    sigmas.push_back(ex.true_noise_sigma);
  }
  std::sort(sigmas.begin(), sigmas.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    const double cdf =
        (sigmas[i] - cfg.noise_lo) / (cfg.noise_hi - cfg.noise_lo);
    const double emp_hi = double(i + 1) / sigmas.size();
    const double emp_lo = double(i) / sigmas.size();
    ks = std::max({ks, std::fabs(cdf - emp_hi), std::fabs(cdf - emp_lo)});
  }
  EXPECT_LT(ks, 1.63 / std::sqrt(double(cfg.n)));  // ~1% critical value
}

TEST(HeteroRegression, OraclePredictorIsCalibrated) {
  HeteroRegressionConfig cfg;
  cfg.n = 20000;
  auto ds = gen_hetero_regression(cfg, data_rng(23));
  std::vector<calib::RegressionRecord> recs;
  recs.reserve(ds.examples.size());
  for (const auto& ex : ds.examples)
    recs.push_back({ex.target[0], ex.latent[0],
                    double(ex.true_noise_sigma) * ex.true_noise_sigma});
  auto rep = calib::coverage_curve(recs, calib::default_coverage_levels());
  for (const auto& [p, cov] : rep.levels) EXPECT_NEAR(cov, p, 0.015);
  EXPECT_LT(rep.value, 1e-3);
}

TEST(Split, PooledSizesAreExact) {
  Dataset ds;
  ds.task = "af";
  ds.signal_len = 1;
  ds.examples.resize(100);
  SplitSpec spec{.train = 0.8, .val = 0.1, .test = 0.1};
  auto s = split(ds, spec);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  std::set<std::int64_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 100u);  // disjoint cover
}

TEST(Split, BySubjectNeverSplitsASubject) {
  RhythmTaskConfig cfg;
  cfg.n = 200;
  cfg.examples_per_subject = 10;
  auto ds = gen_rhythm_task(cfg, data_rng(29));
  SplitSpec spec{.train = 0.6, .val = 0.2, .test = 0.2,
                 .grouping = SplitSpec::Grouping::kBySubject, .seed = 4};
  auto s = split(ds, spec);
  auto subjects_of = [&](const std::vector<std::int64_t>& idx) {
    std::set<int> out;
    for (auto i : idx) out.insert(ds.examples[i].subject);
    return out;
  };
  auto tr = subjects_of(s.train), va = subjects_of(s.val),
       te = subjects_of(s.test);
  for (int subj : tr) {
    EXPECT_EQ(va.count(subj), 0u);
    EXPECT_EQ(te.count(subj), 0u);
  }
  for (int subj : va) EXPECT_EQ(te.count(subj), 0u);
  EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), 200u);
}

TEST(Split, SeedChangePermutesMembershipButPreservesSizes) {
  Dataset ds;
  ds.task = "af";
  ds.signal_len = 1;
  ds.examples.resize(250);
  SplitSpec a{.train = 0.8, .val = 0.1, .test = 0.1, .seed = 1};
  SplitSpec b = a;
  b.seed = 2;
  auto sa = split(ds, a), sb = split(ds, b);
  EXPECT_EQ(sa.train.size(), sb.train.size());
  EXPECT_EQ(sa.val.size(), sb.val.size());
  EXPECT_NE(sa.train, sb.train);
}

TEST(Split, ZeroFractionGivesEmptyButValidSplit) {
  Dataset ds;
  ds.task = "af";
  ds.signal_len = 1;
  ds.examples.resize(50);
  SplitSpec spec{.train = 0.9, .val = 0.0, .test = 0.1};
  auto s = split(ds, spec);
  EXPECT_EQ(s.val.size(), 0u);
  EXPECT_EQ(s.train.size() + s.test.size(), 50u);
}

TEST(WeightedSampler, BalancedLabelsSampleUniformly) {
  std::vector<int> labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
  WeightedSampler sampler(labels, 2, data_rng(31));
  std::vector<int> counts(2, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) ++counts[labels[sampler.next()]];
  EXPECT_NEAR(double(counts[1]) / draws, 0.5, 0.01);
}

TEST(WeightedSampler, ImbalancedClassesDrawEqualShares) {
  std::vector<int> labels;
  for (int i = 0; i < 900; ++i) labels.push_back(0);
  for (int i = 0; i < 100; ++i) labels.push_back(1);
  WeightedSampler sampler(labels, 2, data_rng(37));
  const int draws = 100000;
  int minority = 0;
  for (int i = 0; i < draws; ++i)
    if (labels[sampler.next()] == 1) ++minority;
  EXPECT_NEAR(double(minority) / draws, 0.5, 0.01);
}

TEST(WeightedSampler, DeterministicAndRejectsEmptyClass) {
  std::vector<int> labels = {0, 1, 0, 1, 1};
  WeightedSampler a(labels, 2, data_rng(41));
  WeightedSampler b(labels, 2, data_rng(41));
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a.next(), b.next());
  std::vector<int> one_class = {0, 0, 0};
  EXPECT_THROW(WeightedSampler(one_class, 2, data_rng(43)),
               std::invalid_argument);
}

TEST(DatasetIo, RoundTripPreservesEverything) {
  RhythmTaskConfig cfg;
  cfg.n = 30;
  auto ds = gen_rhythm_task(cfg, data_rng(47));
  const std::string path = ::testing::TempDir() + "synth_roundtrip.bin";
  save_dataset(ds, path);
  auto back = load_dataset(path);
  ASSERT_EQ(back.examples.size(), ds.examples.size());
  EXPECT_EQ(back.task, "af");
  EXPECT_EQ(back.signal_len, ds.signal_len);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    EXPECT_EQ(back.examples[i].samples, ds.examples[i].samples);
    EXPECT_EQ(back.examples[i].class_label, ds.examples[i].class_label);
    EXPECT_EQ(back.examples[i].subject, ds.examples[i].subject);
    EXPECT_EQ(back.examples[i].boundary, ds.examples[i].boundary);
    EXPECT_FLOAT_EQ(back.examples[i].true_noise_sigma,
                    ds.examples[i].true_noise_sigma);
  }
}

}  // namespace
}  // namespace pulseuq::data
