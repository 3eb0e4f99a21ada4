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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "pulseuq/core/rng.hpp"
#include "pulseuq/core/tensor.hpp"
#include "pulseuq/io/container.hpp"

namespace pulseuq::data {

/// One synthetic example. Classification uses class_label; regression uses
/// target (observed, noisy) and latent (noise-free) SBP/DBP in mmHg.
struct SynthSignal {
  std::vector<float> samples;  // normalized to zero mean, unit variance
  int class_label = -1;
  std::array<float, 2> target{};
  std::array<float, 2> latent{};
  float true_noise_sigma = 0.0f;
  int subject = 0;
  float regularity_cv = 0.0f;  // inter-pulse interval coefficient of variation
  float pulse_rate_hz = 0.0f;
  bool artifact = false;
  bool boundary = false;  // interpolated-jitter (hard) example
  float wander = 0.0f;    // baseline-wander intensity in [0, 1]
};

struct Dataset {
  std::string task;  // "af" | "bp"
  std::int64_t signal_len = 0;
  std::vector<SynthSignal> examples;
};

namespace detail {

/// Raised-cosine bump with compact support [-width, width]; exact zeros
/// outside keep the regression encoding analytically invertible.
inline void add_bump(std::vector<float>& s, double center, double width,
                     double amp) {
  const std::int64_t lo =
      std::max<std::int64_t>(0, static_cast<std::int64_t>(
                                    std::ceil(center - width)));
  const std::int64_t hi = std::min<std::int64_t>(
      static_cast<std::int64_t>(s.size()) - 1,
      static_cast<std::int64_t>(std::floor(center + width)));
  for (std::int64_t t = lo; t <= hi; ++t) {
    const double d = (t - center) / width;
    s[t] += static_cast<float>(amp * 0.5 * (1.0 + std::cos(std::numbers::pi * d)));
  }
}

inline void normalize_signal(std::vector<float>& s) {
  double sum = 0.0, sum2 = 0.0;
  for (float v : s) {
    sum += v;
    sum2 += double(v) * v;
  }
  const double mean = sum / s.size();
  const double var = std::max(1e-12, sum2 / s.size() - mean * mean);
  const float inv = static_cast<float>(1.0 / std::sqrt(var));
  for (float& v : s) v = static_cast<float>((v - mean) * inv);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rhythm classification task
// ---------------------------------------------------------------------------

/// Class 0: near-constant inter-pulse intervals and stable pulse morphology.
/// Class 1: intervals and morphology drawn with high variance. A configurable
/// fraction of examples interpolates the jitter level across the class
/// boundary, giving genuinely ambiguous cases. The label is a deterministic
/// threshold on the sampled interval coefficient of variation.
struct RhythmTaskConfig {
  std::int64_t n = 10000;
  double class_balance = 0.5;      // target share of class 1 (easy regimes)
  double boundary_fraction = 0.12;
  double rate_lo_hz = 1.0, rate_hi_hz = 1.7;
  double jitter_regular_lo = 0.01, jitter_regular_hi = 0.06;
  double jitter_irregular_lo = 0.18, jitter_irregular_hi = 0.45;
  double jitter_threshold = 0.12;  // label = (cv > threshold)
  double noise_lo = 0.05, noise_hi = 0.25;
  std::int64_t length = 800;
  double sample_rate_hz = 32.0;
  int examples_per_subject = 10;
};

inline SynthSignal gen_rhythm_example(const RhythmTaskConfig& cfg,
                                      RngStream rng) {
  SynthSignal ex;
  const double rate =
      cfg.rate_lo_hz + rng.uniform() * (cfg.rate_hi_hz - cfg.rate_lo_hz);
  const double period = cfg.sample_rate_hz / rate;

  double cv;
  const double regime = rng.uniform();
  if (regime < cfg.boundary_fraction) {
    cv = cfg.jitter_regular_hi +
         rng.uniform() * (cfg.jitter_irregular_lo - cfg.jitter_regular_hi);
    ex.boundary = true;
  } else if (regime < cfg.boundary_fraction +
                          (1.0 - cfg.boundary_fraction) * cfg.class_balance) {
    cv = cfg.jitter_irregular_lo +
         rng.uniform() * (cfg.jitter_irregular_hi - cfg.jitter_irregular_lo);
  } else {
    cv = cfg.jitter_regular_lo +
         rng.uniform() * (cfg.jitter_regular_hi - cfg.jitter_regular_lo);
  }
  ex.class_label = cv > cfg.jitter_threshold ? 1 : 0;
  ex.regularity_cv = static_cast<float>(cv);
  ex.pulse_rate_hz = static_cast<float>(rate);

  ex.samples.assign(cfg.length, 0.0f);
  double t = rng.uniform() * period;
  const double base_width = 0.20 * period;
  while (t < cfg.length + 2.0 * period) {
    const double amp = std::max(0.25, 1.0 + cv * rng.normal());
    const double width =
        std::clamp(base_width * (1.0 + cv * rng.normal()), 2.0, period * 0.45);
    detail::add_bump(ex.samples, t, width, amp);
    detail::add_bump(ex.samples, t + 0.44 * period, width * 1.3, 0.35 * amp);
    const double interval = period * std::max(0.3, 1.0 + cv * rng.normal());
    t += interval;
  }

  const double sigma =
      cfg.noise_lo + rng.uniform() * (cfg.noise_hi - cfg.noise_lo);
  ex.true_noise_sigma = static_cast<float>(sigma);
  if (sigma > 0.0)
    for (auto& v : ex.samples) v += static_cast<float>(sigma * rng.normal());
  detail::normalize_signal(ex.samples);
  return ex;
}

inline Dataset gen_rhythm_task(const RhythmTaskConfig& cfg, RngStream rng) {
  check_arg(cfg.n >= 1, "gen_rhythm_task: n must be >= 1");
  Dataset ds;
  ds.task = "af";
  ds.signal_len = cfg.length;
  ds.examples.reserve(cfg.n);
  for (std::int64_t i = 0; i < cfg.n; ++i) {
    SynthSignal ex = gen_rhythm_example(cfg, rng.fork(i));
    ex.subject = static_cast<int>(i / cfg.examples_per_subject);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Heteroscedastic regression task
// ---------------------------------------------------------------------------

/// Latent (SBP, DBP) pairs drawn in physiological ranges and rendered into a
/// pulse train whose shape encodes the targets deterministically:
/// the systolic bump width encodes SBP, the diastolic-to-systolic amplitude
/// ratio encodes DBP, and both survive per-example normalization. Observed
/// targets carry additive Gaussian noise whose per-example sigma is driven
/// by a visible baseline-wander component and recorded in true_noise_sigma.
struct HeteroRegressionConfig {
  std::int64_t n = 10000;
  double sbp_center = 115.48, sbp_halfrange = 25.0;
  double dbp_center = 62.92, dbp_halfrange = 15.0;
  double noise_lo = 2.0, noise_hi = 12.0;  // mmHg
  double wander_amp = 0.25;
  std::int64_t length = 1250;
  int examples_per_subject = 10;
  bool zero_noise = false;  // diagnostic mode: no target noise, no wander
};

namespace detail {

inline constexpr double kBpPeriod = 125.0;
inline constexpr double kSysCenter = 30.0;   // offset within each period
inline constexpr double kDiaCenter = 85.0;
inline constexpr double kDiaWidth = 14.0;
inline constexpr double kSysWidthLo = 12.0, kSysWidthHi = 20.0;
inline constexpr double kDiaAmpLo = 0.30, kDiaAmpHi = 0.80;
inline constexpr double kWidthProbeOffset = 6.0;

inline double sys_width_for(double sbp, const HeteroRegressionConfig& cfg) {
  const double u =
      (sbp - (cfg.sbp_center - cfg.sbp_halfrange)) / (2.0 * cfg.sbp_halfrange);
  return kSysWidthLo + u * (kSysWidthHi - kSysWidthLo);
}

inline double dia_amp_for(double dbp, const HeteroRegressionConfig& cfg) {
  const double u =
      (dbp - (cfg.dbp_center - cfg.dbp_halfrange)) / (2.0 * cfg.dbp_halfrange);
  return kDiaAmpLo + u * (kDiaAmpHi - kDiaAmpLo);
}

}  // namespace detail

inline SynthSignal gen_hetero_example(const HeteroRegressionConfig& cfg,
                                      RngStream rng) {
  SynthSignal ex;
  const double sbp =
      cfg.sbp_center + (2.0 * rng.uniform() - 1.0) * cfg.sbp_halfrange;
  const double dbp =
      cfg.dbp_center + (2.0 * rng.uniform() - 1.0) * cfg.dbp_halfrange;
  ex.latent = {static_cast<float>(sbp), static_cast<float>(dbp)};
  ex.pulse_rate_hz = static_cast<float>(1.0 / detail::kBpPeriod);

  const double width = detail::sys_width_for(sbp, cfg);
  const double dia_amp = detail::dia_amp_for(dbp, cfg);
  ex.samples.assign(cfg.length, 0.0f);
  for (double start = 0.0; start < cfg.length; start += detail::kBpPeriod) {
    detail::add_bump(ex.samples, start + detail::kSysCenter, width, 1.0);
    detail::add_bump(ex.samples, start + detail::kDiaCenter,
                     detail::kDiaWidth, dia_amp);
  }

  const double wander_u = rng.uniform();
  const double phase = rng.uniform() * 2.0 * std::numbers::pi;
  double sigma = cfg.noise_lo + wander_u * (cfg.noise_hi - cfg.noise_lo);
  if (cfg.zero_noise) {
    sigma = 0.0;
  } else {
    ex.wander = static_cast<float>(wander_u);
    for (std::int64_t t = 0; t < cfg.length; ++t)
      ex.samples[t] += static_cast<float>(
          cfg.wander_amp * wander_u *
          std::sin(2.0 * std::numbers::pi * 2.5 * t / cfg.length + phase));
  }
  ex.true_noise_sigma = static_cast<float>(sigma);
  ex.target = {static_cast<float>(sbp + sigma * rng.normal()),
               static_cast<float>(dbp + sigma * rng.normal())};
  detail::normalize_signal(ex.samples);
  return ex;
}

inline Dataset gen_hetero_regression(const HeteroRegressionConfig& cfg,
                                     RngStream rng) {
  check_arg(cfg.n >= 1, "gen_hetero_regression: n must be >= 1");
  Dataset ds;
  ds.task = "bp";
  ds.signal_len = cfg.length;
  ds.examples.reserve(cfg.n);
  for (std::int64_t i = 0; i < cfg.n; ++i) {
    SynthSignal ex = gen_hetero_example(cfg, rng.fork(i));
    ex.subject = static_cast<int>(i / cfg.examples_per_subject);
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

/// Inverse of the zero-noise encoding: reads the normalized signal back into
/// (SBP, DBP). Valid only without wander/noise (compact-support pulses leave
/// exact zero regions, so the normalization offset drops out).
inline std::array<double, 2> decode_hetero_signal(
    std::span<const float> samples, const HeteroRegressionConfig& cfg) {
  using namespace detail;
  const auto at = [&](double idx) {
    return static_cast<double>(samples[static_cast<std::int64_t>(idx)]);
  };
  const double baseline = at(kDiaCenter + kDiaWidth + 1.0 + 10.0);  // flat gap
  const double sys_peak = at(kSysCenter) - baseline;
  const double probe = at(kSysCenter + kWidthProbeOffset) - baseline;
  const double q = std::clamp(probe / sys_peak, 1e-9, 1.0 - 1e-9);
  const double width =
      std::numbers::pi * kWidthProbeOffset / std::acos(2.0 * q - 1.0);
  const double dia_peak = at(kDiaCenter) - baseline;
  const double ratio = dia_peak / sys_peak;
  const double sbp =
      (cfg.sbp_center - cfg.sbp_halfrange) +
      (width - kSysWidthLo) / (kSysWidthHi - kSysWidthLo) * 2.0 *
          cfg.sbp_halfrange;
  const double dbp =
      (cfg.dbp_center - cfg.dbp_halfrange) +
      (ratio - kDiaAmpLo) / (kDiaAmpHi - kDiaAmpLo) * 2.0 * cfg.dbp_halfrange;
  return {sbp, dbp};
}

// ---------------------------------------------------------------------------
// Splitting and sampling
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train = 0.8, val = 0.1, test = 0.1;
  enum class Grouping { kPooled, kBySubject } grouping = Grouping::kPooled;
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::int64_t> train, val, test;
};

/// Disjoint index sets covering the dataset. Pooled mode hits the requested
/// sizes exactly (floor + remainder to train, then val, then test);
/// by-subject mode assigns whole subjects, so sizes are approximate.
inline SplitIndices split(const Dataset& ds, const SplitSpec& spec) {
  check_arg(std::fabs(spec.train + spec.val + spec.test - 1.0) < 1e-9,
            "split: fractions must sum to 1");
  check_arg(spec.train >= 0 && spec.val >= 0 && spec.test >= 0,
            "split: fractions must be non-negative");
  const std::int64_t n = static_cast<std::int64_t>(ds.examples.size());
  RngStream rng = RngStream(spec.seed, RngUse::kData).fork(0x5B17);
  SplitIndices out;
  if (spec.grouping == SplitSpec::Grouping::kPooled) {
    std::vector<std::int64_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = n - 1; i > 0; --i)
      std::swap(idx[i], idx[rng.below(i + 1)]);
    std::int64_t n_train = static_cast<std::int64_t>(spec.train * n);
    std::int64_t n_val = static_cast<std::int64_t>(spec.val * n);
    std::int64_t n_test = static_cast<std::int64_t>(spec.test * n);
    std::int64_t rem = n - n_train - n_val - n_test;
    if (rem > 0) { ++n_train; --rem; }
    if (rem > 0) { ++n_val; --rem; }
    if (rem > 0) n_test += rem;
    out.train.assign(idx.begin(), idx.begin() + n_train);
    out.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    out.test.assign(idx.begin() + n_train + n_val, idx.end());
  } else {
    std::vector<int> subjects;
    for (const auto& ex : ds.examples)
      if (std::find(subjects.begin(), subjects.end(), ex.subject) ==
          subjects.end())
        subjects.push_back(ex.subject);
    for (std::size_t i = subjects.size() - 1; i > 0; --i)
      std::swap(subjects[i], subjects[rng.below(i + 1)]);
    std::vector<std::vector<std::int64_t>> by_subject(subjects.size());
    for (std::int64_t i = 0; i < n; ++i) {
      const auto it =
          std::find(subjects.begin(), subjects.end(), ds.examples[i].subject);
      by_subject[it - subjects.begin()].push_back(i);
    }
    const double t_train = spec.train * n, t_val = (spec.train + spec.val) * n;
    std::int64_t assigned = 0;
    for (std::size_t s = 0; s < subjects.size(); ++s) {
      auto& dst = assigned < t_train ? out.train
                  : assigned < t_val ? out.val
                                     : out.test;
      for (auto i : by_subject[s]) dst.push_back(i);
      assigned += static_cast<std::int64_t>(by_subject[s].size());
    }
  }
  return out;
}

/// Sampling-with-replacement index stream where every class has equal
/// expected draw share (weights proportional to inverse class frequency).
class WeightedSampler {
 public:
  WeightedSampler(const std::vector<int>& labels, int n_classes,
                  RngStream rng)
      : rng_(rng) {
    check_arg(!labels.empty(), "weighted_sampler: no labels");
    std::vector<std::int64_t> count(n_classes, 0);
    for (int y : labels) {
      check_arg(y >= 0 && y < n_classes, "weighted_sampler: label out of range");
      ++count[y];
    }
    for (int c = 0; c < n_classes; ++c)
      check_arg(count[c] > 0, "weighted_sampler: class " + std::to_string(c) +
                                  " has no examples");
    cumulative_.reserve(labels.size());
    double acc = 0.0;
    for (int y : labels) {
      acc += 1.0 / count[y];
      cumulative_.push_back(acc);
    }
    total_ = acc;
  }

  std::int64_t next() {
    const double u = rng_.uniform() * total_;
    const auto it =
        std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::int64_t>(it - cumulative_.begin(),
                                  cumulative_.size() - 1);
  }

 private:
  RngStream rng_;
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

// ---------------------------------------------------------------------------
// Serialization (same container format as checkpoints)
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& path) {
  const auto n = static_cast<std::int64_t>(ds.examples.size());
  const std::int64_t L = ds.signal_len;
  std::vector<io::NamedArray> entries;
  io::NamedArray signals{"signals", {n, L}, {}};
  signals.values.reserve(n * L);
  auto col = [&](const char* name, auto getter) {
    io::NamedArray a{name, {n}, {}};
    a.values.reserve(n);
    for (const auto& ex : ds.examples)
      a.values.push_back(static_cast<float>(getter(ex)));
    entries.push_back(std::move(a));
  };
  for (const auto& ex : ds.examples)
    signals.values.insert(signals.values.end(), ex.samples.begin(),
                          ex.samples.end());
  entries.push_back(std::move(signals));
  entries.push_back({"task_id", {1}, {ds.task == "bp" ? 1.0f : 0.0f}});
  col("class_label", [](const SynthSignal& e) { return e.class_label; });
  io::NamedArray target{"target", {n, 2}, {}}, latent{"latent", {n, 2}, {}};
  for (const auto& ex : ds.examples) {
    target.values.insert(target.values.end(), ex.target.begin(),
                         ex.target.end());
    latent.values.insert(latent.values.end(), ex.latent.begin(),
                         ex.latent.end());
  }
  entries.push_back(std::move(target));
  entries.push_back(std::move(latent));
  col("true_noise_sigma",
      [](const SynthSignal& e) { return e.true_noise_sigma; });
  col("subject", [](const SynthSignal& e) { return e.subject; });
  col("regularity_cv", [](const SynthSignal& e) { return e.regularity_cv; });
  col("pulse_rate_hz", [](const SynthSignal& e) { return e.pulse_rate_hz; });
  col("boundary", [](const SynthSignal& e) { return e.boundary ? 1 : 0; });
  col("wander", [](const SynthSignal& e) { return e.wander; });
  io::write_container(path, entries);
}

inline Dataset load_dataset(const std::string& path) {
  const auto entries = io::read_container(path);
  auto need = [&](const char* name) {
    const auto* e = io::find_entry(entries, name);
    check_arg(e != nullptr,
              std::string("dataset file missing entry '") + name + "'");
    return e;
  };
  const auto* signals = need("signals");
  check_arg(signals->shape.size() == 2, "dataset signals must be 2-d");
  const std::int64_t n = signals->shape[0], L = signals->shape[1];
  Dataset ds;
  ds.task = need("task_id")->values[0] > 0.5f ? "bp" : "af";
  ds.signal_len = L;
  ds.examples.resize(n);
  const auto* cls = need("class_label");
  const auto* target = need("target");
  const auto* latent = need("latent");
  const auto* noise = need("true_noise_sigma");
  const auto* subject = need("subject");
  const auto* cv = need("regularity_cv");
  const auto* rate = need("pulse_rate_hz");
  const auto* boundary = need("boundary");
  const auto* wander = need("wander");
  for (std::int64_t i = 0; i < n; ++i) {
    auto& ex = ds.examples[i];
    ex.samples.assign(signals->values.begin() + i * L,
                      signals->values.begin() + (i + 1) * L);
    ex.class_label = static_cast<int>(cls->values[i]);
    ex.target = {target->values[2 * i], target->values[2 * i + 1]};
    ex.latent = {latent->values[2 * i], latent->values[2 * i + 1]};
    ex.true_noise_sigma = noise->values[i];
    ex.subject = static_cast<int>(subject->values[i]);
    ex.regularity_cv = cv->values[i];
    ex.pulse_rate_hz = rate->values[i];
    ex.boundary = boundary->values[i] > 0.5f;
    ex.wander = wander->values[i];
  }
  return ds;
}

}  // namespace pulseuq::data
