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

#include "pulseuq/calib/calib.hpp"

namespace pulseuq::calib {
namespace {

// --- normal quantile ---

TEST(NormalQuantile, MatchesCdfRoundTrip) {
  for (double p : {0.001, 0.025, 0.05, 0.25, 0.5, 0.75, 0.95, 0.975, 0.999}) {
    const double z = inverse_normal_cdf(p);
    EXPECT_NEAR(normal_cdf(z), p, 1e-12) << p;
  }
  EXPECT_NEAR(inverse_normal_cdf(0.975), 1.959963984540054, 1e-9);
  EXPECT_THROW(inverse_normal_cdf(0.0), std::invalid_argument);
}

// --- ENCE ---

TEST(Ence, PerfectMatchConstructionGivesZero) {
  std::vector<RegressionRecord> recs;
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> ds(0.2, 5.0);
  for (int i = 0; i < 40; ++i) {
    const double s2 = ds(gen);
    recs.push_back({std::sqrt(s2), 0.0, s2});  // (y - mu)^2 == sigma2
  }
  EXPECT_NEAR(ence(recs, 5).value, 0.0, 1e-12);
}

TEST(Ence, HandComputedTwoBinInstance) {
  // sigma2 = {1,1,1,4,4,4}, squared errors {0,1,2,3,4,5}:
  // bin RMVs {1, 2}, RMSEs {1, 2} -> ENCE = 0.
  std::vector<RegressionRecord> recs = {
      {std::sqrt(0.0), 0.0, 1.0}, {std::sqrt(1.0), 0.0, 1.0},
      {std::sqrt(2.0), 0.0, 1.0}, {std::sqrt(3.0), 0.0, 4.0},
      {std::sqrt(4.0), 0.0, 4.0}, {std::sqrt(5.0), 0.0, 4.0}};
  auto rep = ence(recs, 2);
  ASSERT_EQ(rep.bins.size(), 2u);
  EXPECT_NEAR(rep.bins[0].aggregate_a, 1.0, 1e-9);
  EXPECT_NEAR(rep.bins[0].aggregate_b, 1.0, 1e-9);
  EXPECT_NEAR(rep.bins[1].aggregate_a, 2.0, 1e-9);
  EXPECT_NEAR(rep.bins[1].aggregate_b, 2.0, 1e-9);
  EXPECT_NEAR(rep.value, 0.0, 1e-9);
}

TEST(Ence, ConstantUnderpredictionGivesOne) {
  // sigma2 = 1 with |error| = 2 everywhere: |1 - 2| / 1 = 1 in each bin.
  std::vector<RegressionRecord> recs(30, {2.0, 0.0, 1.0});
  EXPECT_NEAR(ence(recs, 3).value, 1.0, 1e-9);
}

TEST(Ence, NonPositiveVarianceRejected) {
  std::vector<RegressionRecord> recs = {{0, 0, 1}, {0, 0, 0.0}};
  EXPECT_THROW(ence(recs, 1), std::invalid_argument);
}

TEST(Ence, RemainderSpreadOverLowestBins) {
  std::vector<RegressionRecord> recs;
  for (int i = 0; i < 7; ++i) recs.push_back({0.0, 0.0, 1.0 + i});
  auto rep = ence(recs, 3);  // 7 = 3 + 2 + 2
  ASSERT_EQ(rep.bins.size(), 3u);
  EXPECT_EQ(rep.bins[0].population, 3);
  EXPECT_EQ(rep.bins[1].population, 2);
  EXPECT_EQ(rep.bins[2].population, 2);
}

TEST(Ence, StablePermutationInvarianceForTiedVariances) {
  // All variances identical: bins are formed purely by input order, and the
  // ENCE value is invariant under permutations that keep the multiset.
  std::vector<RegressionRecord> a, b;
  std::mt19937 gen(5);
  std::uniform_real_distribution<double> de(-3.0, 3.0);
  std::vector<double> errs(12);
  for (auto& e : errs) e = de(gen);
  for (double e : errs) a.push_back({e, 0.0, 2.0});
  std::shuffle(errs.begin(), errs.end(), gen);
  for (double e : errs) b.push_back({e, 0.0, 2.0});
  // Same multiset of records, same equal-variance tie rule: identical value.
  EXPECT_NEAR(ence(a, 1).value, ence(b, 1).value, 1e-12);
}

// --- coverage ---

TEST(Coverage, DegenerateResidualsStepAtHalf) {
  std::vector<RegressionRecord> recs(100, {5.0, 5.0, 2.0});  // y == mu
  auto rep = coverage_curve(recs, {0.25, 0.75});
  EXPECT_DOUBLE_EQ(rep.levels[0].second, 0.0);  // p < 0.5
  EXPECT_DOUBLE_EQ(rep.levels[1].second, 1.0);  // p > 0.5
}

TEST(Coverage, WellSpecifiedGaussianIsOnDiagonal) {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> dmu(-10.0, 10.0);
  std::uniform_real_distribution<double> ds(0.5, 3.0);
  std::vector<RegressionRecord> recs;
  for (int i = 0; i < 20000; ++i) {
    const double mu = dmu(gen), sd = ds(gen);
    recs.push_back({mu + sd * nd(gen), mu, sd * sd});
  }
  auto rep = coverage_curve(recs, default_coverage_levels());
  for (const auto& [p, cov] : rep.levels) EXPECT_NEAR(cov, p, 0.015) << p;
  EXPECT_LT(rep.value, 1e-3);

  // Doubling the predicted sigma strictly increases the CCE.
  auto wide = recs;
  for (auto& r : wide) r.sigma2 *= 4.0;
  EXPECT_GT(coverage_curve(wide, default_coverage_levels()).value, rep.value);
}

TEST(Coverage, RejectsBadVarianceAndEmptyLevels) {
  std::vector<RegressionRecord> recs = {{0, 0, 1}};
  EXPECT_THROW(coverage_curve(recs, {}), std::invalid_argument);
  std::vector<RegressionRecord> bad = {{0, 0, -1}};
  EXPECT_THROW(coverage_curve(bad, {0.5}), std::invalid_argument);
}

// --- ECE ---

ClassificationRecord rec(double p0, int true_class) {
  return {{p0, 1.0 - p0}, true_class};
}

TEST(Ece, AllConfidentCorrectGivesZero) {
  std::vector<ClassificationRecord> recs(5, rec(1.0, 0));
  EXPECT_NEAR(ece(recs).value, 0.0, 1e-12);
}

TEST(Ece, HandComputedSingleBin) {
  // Four records at confidence 0.8, three correct: ECE = |0.75 - 0.8|.
  std::vector<ClassificationRecord> recs = {rec(0.8, 0), rec(0.8, 0),
                                            rec(0.8, 0), rec(0.8, 1)};
  EXPECT_NEAR(ece(recs).value, 0.05, 1e-9);
}

TEST(Ece, HandComputedTwoBins) {
  // Bin (0.5, 0.6]: conf 0.6, acc 0.5, n = 2; bin (0.8, 0.9]: conf 0.9,
  // acc 1.0, n = 2 -> ECE = 0.5 * 0.1 + 0.5 * 0.1 = 0.1.
  std::vector<ClassificationRecord> recs = {rec(0.6, 0), rec(0.6, 1),
                                            rec(0.9, 0), rec(0.9, 0)};
  EXPECT_NEAR(ece(recs).value, 0.1, 1e-9);
}

TEST(Ece, PermutationInvariant) {
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<ClassificationRecord> recs;
  for (int i = 0; i < 200; ++i) recs.push_back(rec(d(gen), gen() % 2));
  const double before = ece(recs).value;
  std::shuffle(recs.begin(), recs.end(), gen);
  EXPECT_NEAR(ece(recs).value, before, 1e-12);
  EXPECT_GE(before, 0.0);
  EXPECT_LE(before, 1.0);
}

TEST(Ece, MalformedProbabilitiesRejected) {
  std::vector<ClassificationRecord> recs = {{{0.7, 0.7}, 0}};
  EXPECT_THROW(ece(recs), std::invalid_argument);
  std::vector<ClassificationRecord> neg = {{{1.2, -0.2}, 0}};
  EXPECT_THROW(ece(neg), std::invalid_argument);
}

// --- UCE ---

TEST(Uce, SlopeHalfPointIsPerfect) {
  // Every record at H = 1 with error rate 0.5.
  std::vector<UncertaintyRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back({1.0, i % 2 == 0});
  EXPECT_NEAR(uce(recs).value, 0.0, 1e-12);
}

TEST(Uce, HandComputedSingleBin) {
  // Ten records at H = 0.4, three wrong: UCE = |0.3 - 0.2| = 0.1.
  std::vector<UncertaintyRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back({0.4, i >= 3});
  EXPECT_NEAR(uce(recs).value, 0.1, 1e-9);
}

TEST(Uce, AllCorrectZeroUncertaintyIsPerfect) {
  std::vector<UncertaintyRecord> recs(8, {0.0, true});
  EXPECT_NEAR(uce(recs).value, 0.0, 1e-12);
}

TEST(Uce, OutOfRangeEntropyRejected) {
  std::vector<UncertaintyRecord> recs = {{1.5, true}};
  EXPECT_THROW(uce(recs), std::invalid_argument);
}

// --- per-class ---

TEST(PerClass, SingleClassEqualsTotal) {
  std::vector<ClassificationRecord> recs = {rec(0.9, 0), rec(0.7, 0),
                                            rec(0.6, 0)};
  std::vector<int> cls = {0, 0, 0};
  auto reports = per_class_reports<ClassificationRecord>(
      recs, cls, [](const std::vector<ClassificationRecord>& r) {
        return ece(r);
      });
  ASSERT_EQ(reports.size(), 2u);  // "all" + class 0; class 1 absent
  EXPECT_EQ(reports[0].class_scope, "all");
  EXPECT_EQ(reports[1].class_scope, "0");
  EXPECT_NEAR(reports[0].value, reports[1].value, 1e-12);
}

TEST(PerClass, DisjointBinsComposeByPopulationWeight) {
  // Class 0 lives in the (0.5, 0.6] confidence bin, class 1 in (0.8, 0.9]:
  // with global equal-width bins the total ECE is exactly the
  // population-weighted mean of the per-class values.
  std::vector<ClassificationRecord> recs;
  std::vector<int> cls;
  for (int i = 0; i < 6; ++i) {
    recs.push_back(rec(0.6, i < 2 ? 0 : 1));  // conf 0.6, pred 0
    cls.push_back(0);
  }
  for (int i = 0; i < 6; ++i) {
    recs.push_back(rec(0.1, 1));  // conf 0.9 for class 1, pred 1
    cls.push_back(1);
  }
  auto reports = per_class_reports<ClassificationRecord>(
      recs, cls,
      [](const std::vector<ClassificationRecord>& r) { return ece(r); });
  ASSERT_EQ(reports.size(), 3u);
  const double total = reports[0].value;
  const double c0 = reports[1].value, c1 = reports[2].value;
  EXPECT_NEAR(total, 0.5 * c0 + 0.5 * c1, 1e-12);
  EXPECT_LE(std::min(c0, c1), total);
  EXPECT_GE(std::max(c0, c1), total);
}

// --- bivariate histogram ---

TEST(Bivariate, SingleRecordLandsInItsCell) {
  auto h = bivariate_histogram({{1.5, 0.5}}, {0, 1, 2, 3}, {0, 1, 2});
  EXPECT_EQ(h.counts[0][1], 1);
  std::int64_t total = 0;
  for (const auto& row : h.counts)
    for (auto c : row) total += c;
  EXPECT_EQ(total, 1);
}

TEST(Bivariate, MarginalsMatchAxisHistograms) {
  std::mt19937 gen(13);
  std::uniform_real_distribution<double> dx(0.0, 3.0), dy(0.0, 2.0);
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < 5000; ++i) pts.emplace_back(dx(gen), dy(gen));
  std::vector<double> xe = {0, 0.5, 1, 1.5, 2, 2.5, 3.0001};
  std::vector<double> ye = {0, 0.4, 0.8, 1.2, 1.6, 2.0001};
  auto h = bivariate_histogram(pts, xe, ye);
  // 1-d reference histograms
  std::vector<std::int64_t> hx(xe.size() - 1, 0), hy(ye.size() - 1, 0);
  for (const auto& [x, y] : pts) {
    for (std::size_t i = 0; i + 1 < xe.size(); ++i)
      if (x >= xe[i] && x < xe[i + 1]) ++hx[i];
    for (std::size_t i = 0; i + 1 < ye.size(); ++i)
      if (y >= ye[i] && y < ye[i + 1]) ++hy[i];
  }
  EXPECT_EQ(h.marginal_x(), hx);
  EXPECT_EQ(h.marginal_y(), hy);
}

TEST(Bivariate, ErrorAxisClipsAndUncertaintyOverflows) {
  auto h = bivariate_histogram({{9.0, 0.5}, {-1.0, 0.5}, {0.5, 9.0}},
                               {0, 1, 2}, {0, 1});
  EXPECT_EQ(h.counts[0][1], 1);  // error clipped right into last cell
  EXPECT_EQ(h.counts[0][0], 1);  // error clipped left into first cell
  EXPECT_EQ(h.counts[1][0], 1);  // uncertainty overflow row
}

TEST(Bivariate, CountsWithinFourSigmaOfMultinomial) {
  std::mt19937_64 gen(17);
  std::normal_distribution<double> nerr(1.0, 0.7), nunc(1.2, 0.4);
  const int n = 10000;
  std::vector<std::pair<double, double>> pts;
  for (int i = 0; i < n; ++i) pts.emplace_back(nerr(gen), nunc(gen));
  std::vector<double> xe, ye;
  for (int i = 0; i <= 6; ++i) xe.push_back(-2.5 + i * 7.0 / 6.0);
  for (int i = 0; i <= 5; ++i) ye.push_back(-0.8 + i * 4.0 / 5.0);
  auto h = bivariate_histogram(pts, xe, ye);
  for (std::size_t iy = 0; iy + 1 < ye.size(); ++iy)
    for (std::size_t ix = 0; ix + 1 < xe.size(); ++ix) {
      const double px = normal_cdf((xe[ix + 1] - 1.0) / 0.7) -
                        normal_cdf((xe[ix] - 1.0) / 0.7);
      const double py = normal_cdf((ye[iy + 1] - 1.2) / 0.4) -
                        normal_cdf((ye[iy] - 1.2) / 0.4);
      const double expected = n * px * py;
      if (expected < 5.0) continue;  // skip cells too thin for the bound
      const double sd = std::sqrt(n * px * py * (1.0 - px * py));
      EXPECT_NEAR(h.counts[iy][ix], expected, 4.0 * sd)
          << "cell " << ix << "," << iy;
    }
}

// --- Pearson ---

TEST(Pearson, PerfectCorrelationExtremes) {
  std::vector<double> a = {1, 2, 3, 4};
  std::vector<double> b = {2, 4, 6, 8};
  EXPECT_NEAR(*pearson_r(a, b), 1.0, 1e-12);
  std::vector<double> c = {-1, -2, -3, -4};
  EXPECT_NEAR(*pearson_r(a, c), -1.0, 1e-12);
}

TEST(Pearson, ClosedFormHandInstance) {
  const std::vector<double> a = {1, 2, 3, 4, 5};
  const std::vector<double> b = {2, 1, 4, 3, 7};
  // closed form: cov 2.4, var_a 2, var_b 4.24
  const double expected = 2.4 / std::sqrt(2.0 * 4.24);
  EXPECT_NEAR(*pearson_r(a, b), expected, 1e-12);
}

TEST(Pearson, ZeroVarianceReportedAbsent) {
  std::vector<double> a = {1, 1, 1};
  std::vector<double> b = {1, 2, 3};
  EXPECT_FALSE(pearson_r(a, b).has_value());
  std::vector<double> single = {1};
  EXPECT_FALSE(pearson_r(single, single).has_value());
}

// --- performance metrics ---

TEST(Performance, PerfectSeparation) {
  std::vector<double> scores = {0.9, 0.8, 0.7, 0.3, 0.2, 0.1};
  std::vector<int> labels = {1, 1, 1, 0, 0, 0};
  auto p = performance_metrics(scores, labels);
  EXPECT_NEAR(*p.auc, 1.0, 1e-12);
  EXPECT_NEAR(*p.f1, 1.0, 1e-12);
}

TEST(Performance, AllTiedScoresGiveHalfAuc) {
  std::vector<double> scores(6, 0.5);
  std::vector<int> labels = {1, 0, 1, 0, 1, 0};
  EXPECT_NEAR(*performance_metrics(scores, labels).auc, 0.5, 1e-12);
}

TEST(Performance, SingleClassReportedAbsent) {
  std::vector<double> scores = {0.2, 0.4};
  std::vector<int> labels = {1, 1};
  auto p = performance_metrics(scores, labels);
  EXPECT_FALSE(p.auc.has_value());
  EXPECT_FALSE(p.f1.has_value());
}

TEST(Performance, SixExampleHandEnumeration) {
  // scores/labels: (0.9,1) (0.8,1) (0.7,0) (0.6,1) (0.4,0) (0.2,0).
  // Threshold walk by hand:
  //   sens >= 0.8 -> largest threshold 0.6: TP=3 FP=1 FN=0 TN=2,
  //     sens 1, spec 2/3, F1 = 6/7, MCC = 6/sqrt(72).
  //   spec >= 0.8 -> smallest threshold 0.8: TP=2 FP=0 FN=1 TN=3,
  //     sens 2/3, MCC = 6/sqrt(72).
  //   AUC: 8 of 9 positive/negative pairs correctly ordered.
  std::vector<double> scores = {0.9, 0.8, 0.7, 0.6, 0.4, 0.2};
  std::vector<int> labels = {1, 1, 0, 1, 0, 0};
  auto p = performance_metrics(scores, labels);
  EXPECT_NEAR(*p.auc, 8.0 / 9.0, 1e-12);
  EXPECT_NEAR(*p.threshold_sens, 0.6, 1e-12);
  EXPECT_NEAR(*p.f1, 6.0 / 7.0, 1e-12);
  EXPECT_NEAR(*p.mcc_at_sens, 6.0 / std::sqrt(72.0), 1e-12);
  EXPECT_NEAR(*p.spec_at_sens, 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(*p.threshold_spec, 0.8, 1e-12);
  EXPECT_NEAR(*p.mcc_at_spec, 6.0 / std::sqrt(72.0), 1e-12);
  EXPECT_NEAR(*p.sens_at_spec, 2.0 / 3.0, 1e-12);
}

TEST(Performance, MaeMatchesHandValue) {
  std::vector<double> y = {120, 80, 100};
  std::vector<double> yh = {118, 85, 100};
  EXPECT_NEAR(mean_absolute_error(y, yh), (2.0 + 5.0 + 0.0) / 3.0, 1e-12);
}

}  // namespace
}  // namespace pulseuq::calib
