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
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pulseuq/core/tensor.hpp"

namespace pulseuq::cli {

/// Raised on malformed prediction files; maps to exit code 4.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kPredictionsVersion = "pulseuq-predictions-v1";

/// One disentangled per-example row. Classification fills p0/p1 and the
/// entropies; regression fills the per-head mean/variance columns. The
/// generator's noise level rides along for oracle studies.
struct PredictionRow {
  std::int64_t id = 0;
  // classification
  int true_class = -1;
  double p0 = 0, p1 = 0;
  int predicted_class = -1;
  double h_total = 0, h_ale = 0, h_epi = 0;
  bool boundary = false;
  // regression
  double y_sbp = 0, y_dbp = 0;
  double mu_sbp = 0, mu_dbp = 0;
  double s2_epi_sbp = 0, s2_ale_sbp = 0, s2_tot_sbp = 0;
  double s2_epi_dbp = 0, s2_ale_dbp = 0, s2_tot_dbp = 0;
  double true_noise_sigma = 0;
};

struct PredictionFile {
  std::string task;  // "af" | "bp"
  std::string method;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string split;
  std::vector<PredictionRow> rows;
};

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Comma-separated, header row, '.' decimal separator, LF line endings.
/// Line 1 is a versioned schema comment; readers reject unknown versions.
inline void write_predictions(const PredictionFile& pf,
                              const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);  // LF always
  if (!os) throw SchemaError("cannot open for writing: " + path);
  os << "# " << kPredictionsVersion << " task=" << pf.task
     << " method=" << pf.method << " split=" << pf.split
     << " seed=" << pf.seed << " config_hash=" << pf.config_hash << "\n";
  if (pf.task == "af") {
    os << "id,true_class,p0,p1,predicted_class,h_total_bits,h_ale_bits,"
          "h_epi_bits,true_noise_sigma,boundary\n";
    for (const auto& r : pf.rows) {
      os << r.id << ',' << r.true_class << ',' << detail::fmt_g17(r.p0) << ','
         << detail::fmt_g17(r.p1) << ',' << r.predicted_class << ','
         << detail::fmt_g17(r.h_total) << ',' << detail::fmt_g17(r.h_ale)
         << ',' << detail::fmt_g17(r.h_epi) << ','
         << detail::fmt_g17(r.true_noise_sigma) << ',' << (r.boundary ? 1 : 0)
         << "\n";
    }
  } else {
    os << "id,y_sbp,y_dbp,mu_sbp,mu_dbp,s2_epi_sbp,s2_ale_sbp,s2_tot_sbp,"
          "s2_epi_dbp,s2_ale_dbp,s2_tot_dbp,true_noise_sigma\n";
    for (const auto& r : pf.rows) {
      os << r.id << ',' << detail::fmt_g17(r.y_sbp) << ','
         << detail::fmt_g17(r.y_dbp) << ',' << detail::fmt_g17(r.mu_sbp)
         << ',' << detail::fmt_g17(r.mu_dbp) << ','
         << detail::fmt_g17(r.s2_epi_sbp) << ','
         << detail::fmt_g17(r.s2_ale_sbp) << ','
         << detail::fmt_g17(r.s2_tot_sbp) << ','
         << detail::fmt_g17(r.s2_epi_dbp) << ','
         << detail::fmt_g17(r.s2_ale_dbp) << ','
         << detail::fmt_g17(r.s2_tot_dbp) << ','
         << detail::fmt_g17(r.true_noise_sigma) << "\n";
    }
  }
  if (!os) throw SchemaError("write failed: " + path);
}

inline PredictionFile read_predictions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw SchemaError("cannot open predictions file: " + path);
  std::string line;
  if (!std::getline(is, line))
    throw SchemaError("empty predictions file: " + path);
  PredictionFile pf;
  {
    std::istringstream hs(line);
    std::string hash_mark, version, token;
    hs >> hash_mark >> version;
    if (hash_mark != "#" || version != kPredictionsVersion)
      throw SchemaError("unknown predictions schema version in " + path +
                        ": '" + line + "'");
    while (hs >> token) {
      const auto eq = token.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = token.substr(0, eq),
                        value = token.substr(eq + 1);
      if (key == "task") pf.task = value;
      if (key == "method") pf.method = value;
      if (key == "split") pf.split = value;
      if (key == "seed") pf.seed = std::stoull(value);
      if (key == "config_hash") pf.config_hash = value;
    }
  }
  if (pf.task != "af" && pf.task != "bp")
    throw SchemaError("predictions file has unknown task: " + path);
  if (!std::getline(is, line))
    throw SchemaError("predictions file has no header row: " + path);

  auto split_csv = [&](const std::string& s) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream cs(s);
    while (std::getline(cs, cell, ',')) cells.push_back(cell);
    return cells;
  };
  const std::size_t expected_cols = pf.task == "af" ? 10 : 12;
  int lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != expected_cols)
      throw SchemaError(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(expected_cols) + " columns, got " +
                        std::to_string(cells.size()));
    PredictionRow r;
    try {
      if (pf.task == "af") {
        r.id = std::stoll(cells[0]);
        r.true_class = std::stoi(cells[1]);
        r.p0 = std::stod(cells[2]);
        r.p1 = std::stod(cells[3]);
        r.predicted_class = std::stoi(cells[4]);
        r.h_total = std::stod(cells[5]);
        r.h_ale = std::stod(cells[6]);
        r.h_epi = std::stod(cells[7]);
        r.true_noise_sigma = std::stod(cells[8]);
        r.boundary = std::stoi(cells[9]) != 0;
      } else {
        r.id = std::stoll(cells[0]);
        r.y_sbp = std::stod(cells[1]);
        r.y_dbp = std::stod(cells[2]);
        r.mu_sbp = std::stod(cells[3]);
        r.mu_dbp = std::stod(cells[4]);
        r.s2_epi_sbp = std::stod(cells[5]);
        r.s2_ale_sbp = std::stod(cells[6]);
        r.s2_tot_sbp = std::stod(cells[7]);
        r.s2_epi_dbp = std::stod(cells[8]);
        r.s2_ale_dbp = std::stod(cells[9]);
        r.s2_tot_dbp = std::stod(cells[10]);
        r.true_noise_sigma = std::stod(cells[11]);
      }
    } catch (const std::exception&) {
      throw SchemaError(path + ":" + std::to_string(lineno) +
                        ": malformed numeric cell");
    }
    pf.rows.push_back(r);
  }
  return pf;
}

}  // namespace pulseuq::cli
