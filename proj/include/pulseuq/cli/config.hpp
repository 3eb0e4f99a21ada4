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
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pulseuq::cli {

/// Raised on invalid run configuration; maps to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

/// Flat `key = value` config file; '#' starts a comment.
inline KeyValues read_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Fully resolved run settings. Defaults depend on (task, method) and follow
/// the published training protocols; anything a config file or flag sets
/// explicitly wins.
struct RunConfig {
  std::string task;    // "af" | "bp"
  std::string method;  // "mcd" | "ivon"
  float dropout_rate = 0.0f;
  double h0 = 0.01;
  int K = 0;   // MCD evaluation passes
  int T = 0;   // logit-noise samples
  int J = 0;   // IVON evaluation draws
  int ivon_train_samples = 60;
  int epochs = 0;
  int patience = 10;
  int batch_size = 0;
  float lr = 0.0f;
  float weight_decay = 0.0f;
  float momentum = 0.9f;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> dropout_seed;  // defaults to seed
  std::optional<double> ess;                  // defaults to train-set size
  std::optional<double> clip;                 // IVON update clip
  std::optional<std::int64_t> input_len;
  std::int64_t eval_batch = 256;
  std::string data;  // dataset manifest path
  std::string out;   // run directory

  std::uint64_t dropout_stream_seed() const {
    return dropout_seed.value_or(seed);
  }

  static RunConfig resolve(const KeyValues& kv);
  KeyValues to_key_values() const;
  std::string snapshot_text() const;
  std::uint64_t config_hash() const { return fnv1a64(snapshot_text()); }
};

namespace detail {

inline double parse_num(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': bad number '" + v + "'");
  }
}

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline RunConfig RunConfig::resolve(const KeyValues& kv) {
  static const std::set<std::string> known = {
      "task",   "method",       "dropout_rate", "h0",
      "K",      "T",            "J",            "ivon_train_samples",
      "epochs", "patience",     "batch_size",   "lr",
      "weight_decay",           "momentum",     "seed",
      "dropout_seed",           "ess",          "clip",
      "input_len",              "eval_batch",   "data",
      "out"};
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");

  auto get = [&](const char* key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
  };

  RunConfig c;
  c.task = get("task").value_or("");
  c.method = get("method").value_or("mcd");
  if (c.task != "af" && c.task != "bp")
    throw ConfigError("task must be 'af' or 'bp', got '" + c.task + "'");
  if (c.method != "mcd" && c.method != "ivon")
    throw ConfigError("method must be 'mcd' or 'ivon', got '" + c.method +
                      "'");
  const bool classification = c.task == "af";

  // Published-protocol defaults: classification SGD lr 1e-3 / wd 1e-10 /
  // batch 64 (IVON: lr 2e-2 / batch 128); regression Adam lr 5e-5 / wd 1e-8.
  c.dropout_rate = 0.05f;
  c.K = classification ? 100 : 50;
  c.T = 100;
  c.J = 100;
  c.epochs = classification ? 50 : 100;
  c.batch_size = c.method == "ivon" ? 128 : 64;
  c.lr = c.method == "ivon" ? 0.02f : (classification ? 1e-3f : 5e-5f);
  c.weight_decay = classification ? 1e-10f : 1e-8f;

  if (auto v = get("dropout_rate"))
    c.dropout_rate = static_cast<float>(detail::parse_num("dropout_rate", *v));
  if (auto v = get("h0")) c.h0 = detail::parse_num("h0", *v);
  if (auto v = get("K")) c.K = static_cast<int>(detail::parse_num("K", *v));
  if (auto v = get("T")) c.T = static_cast<int>(detail::parse_num("T", *v));
  if (auto v = get("J")) c.J = static_cast<int>(detail::parse_num("J", *v));
  if (auto v = get("ivon_train_samples"))
    c.ivon_train_samples =
        static_cast<int>(detail::parse_num("ivon_train_samples", *v));
  if (auto v = get("epochs"))
    c.epochs = static_cast<int>(detail::parse_num("epochs", *v));
  if (auto v = get("patience"))
    c.patience = static_cast<int>(detail::parse_num("patience", *v));
  if (auto v = get("batch_size"))
    c.batch_size = static_cast<int>(detail::parse_num("batch_size", *v));
  if (auto v = get("lr")) c.lr = static_cast<float>(detail::parse_num("lr", *v));
  if (auto v = get("weight_decay"))
    c.weight_decay = static_cast<float>(detail::parse_num("weight_decay", *v));
  if (auto v = get("momentum"))
    c.momentum = static_cast<float>(detail::parse_num("momentum", *v));
  if (auto v = get("seed"))
    c.seed = static_cast<std::uint64_t>(detail::parse_num("seed", *v));
  if (auto v = get("dropout_seed"))
    c.dropout_seed =
        static_cast<std::uint64_t>(detail::parse_num("dropout_seed", *v));
  if (auto v = get("ess")) c.ess = detail::parse_num("ess", *v);
  if (auto v = get("clip")) c.clip = detail::parse_num("clip", *v);
  if (auto v = get("input_len"))
    c.input_len =
        static_cast<std::int64_t>(detail::parse_num("input_len", *v));
  if (auto v = get("eval_batch"))
    c.eval_batch =
        static_cast<std::int64_t>(detail::parse_num("eval_batch", *v));
  if (auto v = get("data")) c.data = *v;
  if (auto v = get("out")) c.out = *v;

  // Invariants.
  if (c.method == "ivon" && c.task == "bp")
    throw ConfigError(
        "method 'ivon' cannot train the batch-norm regression network; use "
        "task 'af'");
  if (c.method == "mcd" && !(c.dropout_rate > 0.0f))
    throw ConfigError("method 'mcd' requires dropout_rate > 0");
  if (c.dropout_rate < 0.0f || c.dropout_rate >= 1.0f)
    throw ConfigError("dropout_rate must lie in [0, 1)");
  if (c.K < 2 && c.task == "bp")
    throw ConfigError("regression evaluation needs K >= 2");
  if (c.K < 1 || c.T < 1 || c.J < 1 || c.ivon_train_samples < 1)
    throw ConfigError("K, T, J and ivon_train_samples must be positive");
  if (c.epochs < 1 || c.batch_size < 1)
    throw ConfigError("epochs and batch_size must be positive");
  if (!(c.lr > 0.0f)) throw ConfigError("lr must be positive");
  if (c.h0 < 0.0) throw ConfigError("h0 must be non-negative");
  if (c.ess && !(*c.ess > 0.0)) throw ConfigError("ess must be positive");
  return c;
}

inline KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv["task"] = task;
  kv["method"] = method;
  kv["dropout_rate"] = detail::fmt_num(dropout_rate);
  kv["h0"] = detail::fmt_num(h0);
  kv["K"] = std::to_string(K);
  kv["T"] = std::to_string(T);
  kv["J"] = std::to_string(J);
  kv["ivon_train_samples"] = std::to_string(ivon_train_samples);
  kv["epochs"] = std::to_string(epochs);
  kv["patience"] = std::to_string(patience);
  kv["batch_size"] = std::to_string(batch_size);
  kv["lr"] = detail::fmt_num(lr);
  kv["weight_decay"] = detail::fmt_num(weight_decay);
  kv["momentum"] = detail::fmt_num(momentum);
  kv["seed"] = std::to_string(seed);
  if (dropout_seed) kv["dropout_seed"] = std::to_string(*dropout_seed);
  if (ess) kv["ess"] = detail::fmt_num(*ess);
  if (clip) kv["clip"] = detail::fmt_num(*clip);
  if (input_len) kv["input_len"] = std::to_string(*input_len);
  kv["eval_batch"] = std::to_string(eval_batch);
  kv["data"] = data;
  kv["out"] = out;
  return kv;
}

inline std::string RunConfig::snapshot_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : to_key_values()) os << k << " = " << v << "\n";
  return os.str();
}

/// Relative output paths resolve under PULSEUQ_OUT_ROOT when it is set.
inline std::filesystem::path resolve_out_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("PULSEUQ_OUT_ROOT"))
    return std::filesystem::path(root) / p;
  return p;
}

}  // namespace pulseuq::cli
