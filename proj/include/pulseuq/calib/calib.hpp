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
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulseuq/core/tensor.hpp"  // check_arg

namespace pulseuq::calib {

/// One calibration bin. aggregate_a holds the "predicted" side (RMV, mean
/// confidence, or mean uncertainty); aggregate_b the "observed" side (RMSE,
/// accuracy, or error rate).
struct BinStats {
  int bin_index = 0;
  std::int64_t population = 0;
  double lower = 0.0, upper = 0.0;
  double aggregate_a = 0.0;
  double aggregate_b = 0.0;
};

struct CalibrationReport {
  std::string metric;
  double value = 0.0;
  std::optional<double> value_sum;  // coverage: sum-normalised CCE variant
  std::vector<BinStats> bins;
  std::vector<std::pair<double, double>> levels;  // (p, observed coverage)
  std::string class_scope = "all";
};

struct RegressionRecord {
  double y = 0.0;       // ground truth
  double mu = 0.0;      // predicted mean
  double sigma2 = 0.0;  // predicted variance
};

struct ClassificationRecord {
  std::vector<double> p;  // class probabilities
  int true_class = 0;
};

struct UncertaintyRecord {
  double h_total = 0.0;  // bits, in [0, 1] for binary tasks
  bool correct = false;
};

// ---------------------------------------------------------------------------
// Normal quantile (Acklam's rational approximation + one Halley refinement)
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

inline double inverse_normal_cdf(double p) {
  check_arg(p > 0.0 && p < 1.0,
            "inverse_normal_cdf needs p in (0, 1), got " + std::to_string(p));
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425, p_high = 1.0 - p_low;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= p_high) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the exact CDF.
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

// ---------------------------------------------------------------------------
// ENCE: equal-population variance bins, RMV vs RMSE
// ---------------------------------------------------------------------------

/// Sorts by predicted variance (stable: equal-variance records keep input
/// order), splits into n_bins equal-population bins with the remainder
/// spread one extra record each over the lowest bins, and averages
/// |RMV - RMSE| / RMV.
inline CalibrationReport ence(const std::vector<RegressionRecord>& records,
                              int n_bins = 10) {
  check_arg(n_bins >= 1, "ence: need at least one bin");
  check_arg(static_cast<int>(records.size()) >= n_bins,
            "ence: need at least n_bins records, got " +
                std::to_string(records.size()));
  for (const auto& r : records)
    check_arg(r.sigma2 > 0.0, "ence: predicted variance must be positive, got " +
                                  std::to_string(r.sigma2));
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) {
                     return records[i].sigma2 < records[j].sigma2;
                   });
  const std::int64_t n = static_cast<std::int64_t>(records.size());
  const std::int64_t base = n / n_bins, rem = n % n_bins;
  CalibrationReport rep;
  rep.metric = "ence";
  double total = 0.0;
  std::int64_t pos = 0;
  for (int bin = 0; bin < n_bins; ++bin) {
    const std::int64_t count = base + (bin < rem ? 1 : 0);
    double var_sum = 0.0, se_sum = 0.0;
    double lo = records[order[pos]].sigma2,
           hi = records[order[pos + count - 1]].sigma2;
    for (std::int64_t i = 0; i < count; ++i) {
      const auto& r = records[order[pos + i]];
      var_sum += r.sigma2;
      const double e = r.y - r.mu;
      se_sum += e * e;
    }
    pos += count;
    const double rmv = std::sqrt(var_sum / count);
    const double rmse = std::sqrt(se_sum / count);
    total += std::fabs(rmv - rmse) / rmv;
    rep.bins.push_back({bin, count, lo, hi, rmv, rmse});
  }
  rep.value = total / n_bins;
  return rep;
}

// ---------------------------------------------------------------------------
// Coverage curve and CCE
// ---------------------------------------------------------------------------

/// Observed frequency of y <= F^-1(p) under N(mu, sigma2) per level
/// (one-sided coverage). value = mean squared offset from the diagonal,
/// value_sum = summed squared offset.
inline CalibrationReport coverage_curve(
    const std::vector<RegressionRecord>& records,
    const std::vector<double>& levels) {
  check_arg(!levels.empty(), "coverage_curve: levels must be non-empty");
  check_arg(!records.empty(), "coverage_curve: no records");
  for (const auto& r : records)
    check_arg(r.sigma2 > 0.0,
              "coverage_curve: predicted variance must be positive");
  CalibrationReport rep;
  rep.metric = "coverage";
  double sq_sum = 0.0;
  for (double p : levels) {
    const double z = inverse_normal_cdf(p);
    std::int64_t hits = 0;
    for (const auto& r : records)
      if (r.y <= r.mu + std::sqrt(r.sigma2) * z) ++hits;
    const double cov = static_cast<double>(hits) / records.size();
    rep.levels.emplace_back(p, cov);
    sq_sum += (cov - p) * (cov - p);
  }
  rep.value = sq_sum / levels.size();
  rep.value_sum = sq_sum;
  return rep;
}

inline std::vector<double> default_coverage_levels() {
  std::vector<double> levels;
  for (int i = 1; i <= 19; ++i) levels.push_back(0.05 * i);
  return levels;
}

// ---------------------------------------------------------------------------
// ECE / UCE: equal-width, right-closed bins on [0, 1]
// ---------------------------------------------------------------------------

namespace detail {

inline int right_closed_bin(double v, int m_bins) {
  if (v <= 0.0) return 0;
  const int idx = static_cast<int>(std::ceil(v * m_bins)) - 1;
  return std::clamp(idx, 0, m_bins - 1);
}

}  // namespace detail

inline CalibrationReport ece(const std::vector<ClassificationRecord>& records,
                             int m_bins = 10) {
  check_arg(m_bins >= 1, "ece: need at least one bin");
  check_arg(!records.empty(), "ece: no records");
  for (const auto& r : records) {
    check_arg(!r.p.empty(), "ece: empty probability vector");
    double sum = 0.0;
    for (double v : r.p) {
      check_arg(v >= -1e-9, "ece: negative probability");
      sum += v;
    }
    check_arg(std::fabs(sum - 1.0) < 1e-6,
              "ece: probabilities sum to " + std::to_string(sum));
    check_arg(r.true_class >= 0 &&
                  r.true_class < static_cast<int>(r.p.size()),
              "ece: true class out of range");
  }
  struct Acc {
    std::int64_t n = 0, correct = 0;
    double conf = 0.0;
  };
  std::vector<Acc> bins(m_bins);
  for (const auto& r : records) {
    const int pred = static_cast<int>(
        std::max_element(r.p.begin(), r.p.end()) - r.p.begin());
    const double conf = r.p[pred];
    auto& b = bins[detail::right_closed_bin(conf, m_bins)];
    ++b.n;
    b.conf += conf;
    if (pred == r.true_class) ++b.correct;
  }
  CalibrationReport rep;
  rep.metric = "ece";
  double total = 0.0;
  for (int m = 0; m < m_bins; ++m) {
    if (bins[m].n == 0) continue;  // empty bins skipped
    const double acc = static_cast<double>(bins[m].correct) / bins[m].n;
    const double conf = bins[m].conf / bins[m].n;
    total += (static_cast<double>(bins[m].n) / records.size()) *
             std::fabs(acc - conf);
    rep.bins.push_back({m, bins[m].n, static_cast<double>(m) / m_bins,
                        static_cast<double>(m + 1) / m_bins, conf, acc});
  }
  rep.value = total;
  return rep;
}

/// Binary-task uncertainty calibration error with the slope-1/2 target:
/// sum_m (|B_m|/n) |err(B_m) - uncert(B_m)/2| over equal-width bins of the
/// total predictive entropy (bits).
inline CalibrationReport uce(const std::vector<UncertaintyRecord>& records,
                             int m_bins = 10) {
  check_arg(m_bins >= 1, "uce: need at least one bin");
  check_arg(!records.empty(), "uce: no records");
  for (const auto& r : records)
    check_arg(r.h_total >= 0.0 && r.h_total <= 1.0 + 1e-9,
              "uce: binary-task entropy must lie in [0, 1] bits, got " +
                  std::to_string(r.h_total));
  struct Acc {
    std::int64_t n = 0, wrong = 0;
    double h = 0.0;
  };
  std::vector<Acc> bins(m_bins);
  for (const auto& r : records) {
    auto& b = bins[detail::right_closed_bin(r.h_total, m_bins)];
    ++b.n;
    b.h += r.h_total;
    if (!r.correct) ++b.wrong;
  }
  CalibrationReport rep;
  rep.metric = "uce";
  double total = 0.0;
  for (int m = 0; m < m_bins; ++m) {
    if (bins[m].n == 0) continue;
    const double err = static_cast<double>(bins[m].wrong) / bins[m].n;
    const double uncert = bins[m].h / bins[m].n;
    total += (static_cast<double>(bins[m].n) / records.size()) *
             std::fabs(err - uncert / 2.0);
    rep.bins.push_back({m, bins[m].n, static_cast<double>(m) / m_bins,
                        static_cast<double>(m + 1) / m_bins, uncert, err});
  }
  rep.value = total;
  return rep;
}

// ---------------------------------------------------------------------------
// Per-class adaptivity
// ---------------------------------------------------------------------------

/// Recomputes a metric on the whole set ("all") and on each ground-truth
/// class partition. Empty partitions are absent from the result rather than
/// reported as zero.
template <typename Record>
std::vector<CalibrationReport> per_class_reports(
    const std::vector<Record>& records, const std::vector<int>& class_of,
    const std::function<CalibrationReport(const std::vector<Record>&)>&
        metric) {
  check_arg(records.size() == class_of.size(),
            "per_class_reports: class labels must align with records");
  std::vector<CalibrationReport> out;
  CalibrationReport all = metric(records);
  all.class_scope = "all";
  out.push_back(std::move(all));
  std::map<int, std::vector<Record>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i)
    by_class[class_of[i]].push_back(records[i]);
  for (auto& [cls, subset] : by_class) {
    CalibrationReport rep = metric(subset);
    rep.class_scope = std::to_string(cls);
    out.push_back(std::move(rep));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bivariate histogram of |error| vs predicted uncertainty
// ---------------------------------------------------------------------------

/// counts[iy][ix] over (error, uncertainty) cells. The error axis is
/// truncated: out-of-range values are clipped into the edge cells. The
/// uncertainty axis gets one extra overflow row (index n_y) for values
/// outside its edges.
struct BivariateHistogram {
  std::vector<double> x_edges, y_edges;
  std::vector<std::vector<std::int64_t>> counts;  // (n_y + 1) x n_x

  std::vector<std::int64_t> marginal_x() const {
    std::vector<std::int64_t> m(x_edges.size() - 1, 0);
    for (std::size_t iy = 0; iy + 1 < y_edges.size(); ++iy)
      for (std::size_t ix = 0; ix < m.size(); ++ix) m[ix] += counts[iy][ix];
    return m;
  }
  std::vector<std::int64_t> marginal_y() const {
    std::vector<std::int64_t> m(y_edges.size() - 1, 0);
    for (std::size_t iy = 0; iy < m.size(); ++iy)
      for (std::int64_t c : counts[iy]) m[iy] += c;
    return m;
  }
};

inline BivariateHistogram bivariate_histogram(
    const std::vector<std::pair<double, double>>& err_uncert,
    std::vector<double> x_edges, std::vector<double> y_edges) {
  check_arg(x_edges.size() >= 2 && y_edges.size() >= 2,
            "bivariate_histogram: need at least one cell per axis");
  for (std::size_t i = 1; i < x_edges.size(); ++i)
    check_arg(x_edges[i] > x_edges[i - 1],
              "bivariate_histogram: x edges must be strictly increasing");
  for (std::size_t i = 1; i < y_edges.size(); ++i)
    check_arg(y_edges[i] > y_edges[i - 1],
              "bivariate_histogram: y edges must be strictly increasing");
  const std::size_t nx = x_edges.size() - 1, ny = y_edges.size() - 1;
  BivariateHistogram h;
  h.counts.assign(ny + 1, std::vector<std::int64_t>(nx, 0));
  auto locate = [](const std::vector<double>& edges, double v) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), v);
    return static_cast<std::int64_t>(it - edges.begin()) - 1;
  };
  for (const auto& [err, uncert] : err_uncert) {
    std::int64_t ix = locate(x_edges, err);
    ix = std::clamp<std::int64_t>(ix, 0, nx - 1);  // truncated axis
    std::int64_t iy = locate(y_edges, uncert);
    if (iy < 0 || iy >= static_cast<std::int64_t>(ny))
      iy = ny;  // overflow row
    ++h.counts[iy][ix];
  }
  h.x_edges = std::move(x_edges);
  h.y_edges = std::move(y_edges);
  return h;
}

// ---------------------------------------------------------------------------
// Pearson correlation
// ---------------------------------------------------------------------------

inline std::optional<double> pearson_r(std::span<const double> a,
                                       std::span<const double> b) {
  check_arg(a.size() == b.size(), "pearson_r: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Predictive-performance metrics
// ---------------------------------------------------------------------------

struct BinaryPerformance {
  std::optional<double> auc;
  std::optional<double> f1;            // at the sensitivity-0.8 threshold
  std::optional<double> mcc_at_sens;   // MCC at sensitivity >= 0.8
  std::optional<double> mcc_at_spec;   // MCC at specificity >= 0.8
  std::optional<double> sens_at_spec;  // sensitivity at specificity >= 0.8
  std::optional<double> spec_at_sens;  // specificity at sensitivity >= 0.8
  std::optional<double> threshold_sens, threshold_spec;
};

namespace detail {

struct Confusion {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double sens() const { return tp + fn > 0 ? double(tp) / (tp + fn) : 0.0; }
  double spec() const { return tn + fp > 0 ? double(tn) / (tn + fp) : 0.0; }
  double f1() const {
    const double denom = 2.0 * tp + fp + fn;
    return denom > 0 ? 2.0 * tp / denom : 0.0;
  }
  double mcc() const {
    const double d = std::sqrt(double(tp + fp)) * std::sqrt(double(tp + fn)) *
                     std::sqrt(double(tn + fp)) * std::sqrt(double(tn + fn));
    return d > 0 ? (double(tp) * tn - double(fp) * fn) / d : 0.0;
  }
};

inline Confusion confusion_at(const std::vector<double>& scores,
                              const std::vector<int>& labels,
                              double threshold) {
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      pred ? ++c.tp : ++c.fn;
    else
      pred ? ++c.fp : ++c.tn;
  }
  return c;
}

}  // namespace detail

/// Rank-statistic AUC with tie averaging plus threshold metrics. The
/// sensitivity-side threshold is the largest achieving sensitivity >= 0.8
/// (maximising specificity); the specificity side is the smallest achieving
/// specificity >= 0.8 (maximising sensitivity). Scores are the positive-class
/// probabilities; prediction is positive when score >= threshold.
inline BinaryPerformance performance_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels,
                                             double target = 0.8) {
  check_arg(scores.size() == labels.size() && !scores.empty(),
            "performance_metrics: scores/labels mismatch");
  std::int64_t n_pos = 0, n_neg = 0;
  for (int y : labels) {
    check_arg(y == 0 || y == 1, "performance_metrics: labels must be 0/1");
    y == 1 ? ++n_pos : ++n_neg;
  }
  BinaryPerformance perf;
  if (n_pos == 0 || n_neg == 0) return perf;  // all absent

  // AUC via the Mann-Whitney rank statistic with average ranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return scores[i] < scores[j];
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]])
      ++j;
    const double avg_rank = 0.5 * (i + j) + 1.0;  // 1-based
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  perf.auc = (rank_sum_pos - 0.5 * n_pos * (n_pos + 1)) /
             (static_cast<double>(n_pos) * n_neg);

  // Candidate thresholds: each distinct score plus one above the maximum.
  std::vector<double> cand(scores.begin(), scores.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  cand.push_back(cand.back() + 1.0);

  std::optional<double> th_sens, th_spec;
  for (double th : cand) {
    const auto c = detail::confusion_at(scores, labels, th);
    if (c.sens() >= target) th_sens = th;  // keep the largest
    if (!th_spec && c.spec() >= target) th_spec = th;  // first = smallest
  }
  if (th_sens) {
    const auto c = detail::confusion_at(scores, labels, *th_sens);
    perf.threshold_sens = th_sens;
    perf.f1 = c.f1();
    perf.mcc_at_sens = c.mcc();
    perf.spec_at_sens = c.spec();
  }
  if (th_spec) {
    const auto c = detail::confusion_at(scores, labels, *th_spec);
    perf.threshold_spec = th_spec;
    perf.mcc_at_spec = c.mcc();
    perf.sens_at_spec = c.sens();
  }
  return perf;
}

inline double mean_absolute_error(std::span<const double> y,
                                  std::span<const double> y_hat) {
  check_arg(y.size() == y_hat.size() && !y.empty(),
            "mean_absolute_error: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::fabs(y[i] - y_hat[i]);
  return s / y.size();
}

}  // namespace pulseuq::calib
