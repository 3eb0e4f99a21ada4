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
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "pulseuq/core/tensor.hpp"

namespace pulseuq::testing {

/// Independent finite-difference oracle for gradient checks. The graph
/// builder is re-invoked from scratch for every probe, so the oracle never
/// reuses the tape under test. Any stochastic op inside the builder must
/// draw from a stream the builder re-creates identically on each call.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;
};

/// builder: given leaf tensors (same shapes/data as `inputs`), returns a
/// scalar loss tensor.
///
/// `noise_floor` bounds the relative-error denominator from below: with
/// 32-bit forward arithmetic a central difference carries rounding noise of
/// roughly eps32 * |loss| / step, so gradients below that scale can only be
/// verified absolutely.
inline GradCheckResult finite_difference_check(
    const std::function<pulseuq::Tensor(std::vector<pulseuq::Tensor>&)>&
        builder,
    std::vector<std::vector<float>> input_data,
    std::vector<pulseuq::Shape> input_shapes, double step = 1e-3,
    int max_probes_per_input = 0, double noise_floor = 0.02) {
  using pulseuq::Shape;
  using pulseuq::Tensor;

  auto make_inputs = [&](bool requires_grad) {
    std::vector<Tensor> ts;
    for (std::size_t i = 0; i < input_data.size(); ++i)
      ts.push_back(Tensor::from_data(input_shapes[i], input_data[i],
                                     requires_grad));
    return ts;
  };

  // Analytic gradients.
  auto leaves = make_inputs(true);
  Tensor loss = builder(leaves);
  loss.backward();
  std::vector<std::vector<float>> analytic;
  for (auto& t : leaves) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0f);
  }

  auto eval_loss = [&](const std::vector<std::vector<float>>& values) {
    std::vector<Tensor> ts;
    for (std::size_t i = 0; i < values.size(); ++i)
      ts.push_back(Tensor::from_data(input_shapes[i], values[i], false));
    return static_cast<double>(builder(ts).item());
  };

  GradCheckResult res;
  std::mt19937_64 pick(12345);
  for (std::size_t t = 0; t < input_data.size(); ++t) {
    const std::int64_t n = static_cast<std::int64_t>(input_data[t].size());
    std::vector<std::int64_t> idx;
    if (max_probes_per_input > 0 && n > max_probes_per_input) {
      for (int k = 0; k < max_probes_per_input; ++k)
        idx.push_back(static_cast<std::int64_t>(pick() % n));
    } else {
      for (std::int64_t i = 0; i < n; ++i) idx.push_back(i);
    }
    for (std::int64_t i : idx) {
      auto probe = input_data;
      probe[t][i] = input_data[t][i] + static_cast<float>(step);
      const double lp = eval_loss(probe);
      probe[t][i] = input_data[t][i] - static_cast<float>(step);
      const double lm = eval_loss(probe);
      const double fd = (lp - lm) / (2.0 * step);
      const double an = analytic[t][i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), noise_floor});
      const double rel = std::fabs(fd - an) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = "input " + std::to_string(t) + " elem " +
                    std::to_string(i) + ": analytic " + std::to_string(an) +
                    " vs fd " + std::to_string(fd);
      }
    }
  }
  return res;
}

/// Uniform filler in [lo, hi] with a fixed std engine (test-side RNG, kept
/// separate from the library streams on purpose).
inline std::vector<float> random_values(std::size_t n, unsigned seed,
                                        float lo = -2.0f, float hi = 2.0f) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  std::vector<float> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

}  // namespace pulseuq::testing
