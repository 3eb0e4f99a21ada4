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

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pulseuq/core/tensor.hpp"

namespace pulseuq::io {

/// Container layout (little-endian):
///   8-byte magic, u32 format version, u64 entry count;
///   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank],
///   f32 payload.
inline constexpr char kMagic[8] = {'P', 'Q', 'T', 'E', 'N', 'S', 'R', '1'};
inline constexpr std::uint32_t kFormatVersion = 1;

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TruncatedError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NameSetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw TruncatedError("truncated container file: " + path);
  return v;
}

}  // namespace detail

inline void write_container(const std::string& path,
                            const std::vector<NamedArray>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  detail::write_pod<std::uint32_t>(os, kFormatVersion);
  detail::write_pod<std::uint64_t>(os, entries.size());
  for (const auto& e : entries) {
    check_arg(shape_numel(e.shape) ==
                  static_cast<std::int64_t>(e.values.size()),
              "container entry '" + e.name + "' shape/value mismatch");
    detail::write_pod<std::uint32_t>(os,
                                     static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_pod<std::uint32_t>(os,
                                     static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape)
      detail::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(e.values.data()),
             static_cast<std::streamsize>(e.values.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<NamedArray> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is) throw TruncatedError("truncated container file: " + path);
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw FormatError("bad magic bytes, not a tensor container: " + path);
  const auto version = detail::read_pod<std::uint32_t>(is, path);
  if (version != kFormatVersion)
    throw VersionError("unsupported container version " +
                       std::to_string(version) + " (expected " +
                       std::to_string(kFormatVersion) + "): " + path);
  const auto count = detail::read_pod<std::uint64_t>(is, path);
  std::vector<NamedArray> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray e;
    const auto name_len = detail::read_pod<std::uint32_t>(is, path);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    if (!is) throw TruncatedError("truncated container file: " + path);
    const auto rank = detail::read_pod<std::uint32_t>(is, path);
    e.shape.resize(rank);
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      e.shape[d] = static_cast<std::int64_t>(
          detail::read_pod<std::uint64_t>(is, path));
      numel *= e.shape[d];
    }
    e.values.resize(numel);
    is.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw TruncatedError("truncated container file: " + path);
    entries.push_back(std::move(e));
  }
  return entries;
}

inline const NamedArray* find_entry(const std::vector<NamedArray>& entries,
                                    const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

}  // namespace pulseuq::io
