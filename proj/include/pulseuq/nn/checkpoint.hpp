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
#include <string>
#include <vector>

#include "pulseuq/io/container.hpp"
#include "pulseuq/nn/layers.hpp"

namespace pulseuq::nn {

/// Writes every parameter and buffer (BN running stats included) so a load
/// restores bit-identical forward behaviour. `extra` lets callers append
/// optimizer state (e.g. a posterior Hessian) to the same file.
inline void save_checkpoint(const ParamSet& params, const std::string& path,
                            const std::vector<io::NamedArray>& extra = {}) {
  std::vector<io::NamedArray> entries;
  for (const auto& e : params.items()) {
    entries.push_back({e.name, e.tensor.shape(),
                       {e.tensor.data().begin(), e.tensor.data().end()}});
  }
  for (const auto& e : extra) entries.push_back(e);
  io::write_container(path, entries);
}

inline std::vector<io::NamedArray> load_checkpoint(const std::string& path) {
  return io::read_container(path);
}

/// Copies values into an existing model's parameters. The checkpoint's
/// parameter names must exactly match the model's (entries outside the
/// model that start with a reserved prefix, e.g. optimizer state, are
/// ignored when listed in `ignore_prefix`).
inline void load_into(ParamSet& params, const std::string& path,
                      const std::string& ignore_prefix = "opt/") {
  auto entries = io::read_container(path);
  std::vector<std::string> extra_names;
  for (const auto& e : entries) {
    if (!ignore_prefix.empty() &&
        e.name.rfind(ignore_prefix, 0) == 0)
      continue;
    if (!params.find(e.name)) extra_names.push_back(e.name);
  }
  std::vector<std::string> missing;
  for (const auto& p : params.items())
    if (!io::find_entry(entries, p.name)) missing.push_back(p.name);
  if (!extra_names.empty() || !missing.empty()) {
    std::string msg = "checkpoint name set does not match model";
    if (!missing.empty()) {
      msg += "; missing:";
      for (const auto& n : missing) msg += ' ' + n;
    }
    if (!extra_names.empty()) {
      msg += "; unexpected:";
      for (const auto& n : extra_names) msg += ' ' + n;
    }
    throw io::NameSetError(msg);
  }
  for (auto& p : params.items()) {
    const auto* e = io::find_entry(entries, p.name);
    check_arg(e->shape == p.tensor.shape(),
              "checkpoint entry '" + p.name + "' has shape " +
                  shape_str(e->shape) + ", model expects " +
                  shape_str(p.tensor.shape()));
    std::copy(e->values.begin(), e->values.end(), p.tensor.data().begin());
  }
}

}  // namespace pulseuq::nn
