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

namespace pulseuq {

/// Purpose label for a random stream. Draws from one stream never perturb
/// another: adding dropout draws cannot shift data shuffling.
enum class RngUse : std::uint64_t {
  kInit = 1,
  kDropout = 2,
  kLogitNoise = 3,
  kIvonSample = 4,
  kData = 5,
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Counter-based random stream: the value at draw-index i is a pure function
/// of (seed, use, i), so identical triplets reproduce bit-identically across
/// runs and thread schedules. Sub-streams are derived with fork(), which
/// mixes a key into the seed instead of advancing a shared counter.
class RngStream {
 public:
  RngStream(std::uint64_t seed, RngUse use)
      : key_(detail::mix64(detail::mix64(seed + 0x9e3779b97f4a7c15ULL) ^
                           (static_cast<std::uint64_t>(use) *
                            0xda942042e4dd58b5ULL))) {}

  /// Derived independent stream; deterministic regardless of schedule.
  RngStream fork(std::uint64_t sub_key) const {
    RngStream s = *this;
    s.key_ = detail::mix64(key_ ^ detail::mix64(sub_key * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
    s.counter_ = 0;
    return s;
  }

  std::uint64_t bits_at(std::uint64_t index) const {
    return detail::mix64(key_ + (index + 1) * 0x9e3779b97f4a7c15ULL);
  }

  std::uint64_t next_bits() { return bits_at(counter_++); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_bits() >> 11) * 0x1.0p-53;
  }

  /// Uniform in (0, 1]; safe as a log() argument.
  double uniform_open() {
    return (static_cast<double>(next_bits() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; consumes two counters per draw.
  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n) (Lemire multiply-shift; bias < 2^-64).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_bits()) * n) >> 64);
  }

  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace pulseuq
