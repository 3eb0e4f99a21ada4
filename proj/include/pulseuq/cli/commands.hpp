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
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pulseuq/calib/calib.hpp"
#include "pulseuq/cli/config.hpp"
#include "pulseuq/cli/predictions.hpp"
#include "pulseuq/data/synth.hpp"
#include "pulseuq/losses/losses.hpp"
#include "pulseuq/nn/checkpoint.hpp"
#include "pulseuq/nn/models.hpp"
#include "pulseuq/optim/optim.hpp"
#include "pulseuq/uq/uq.hpp"

namespace pulseuq::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateOptions {
  std::string task;  // "af" | "bp"
  std::string out;
  std::int64_t n_train = 10000, n_val = 2000, n_test = 2000;
  std::uint64_t seed = 1;
  double class_balance = 0.5;
  std::optional<std::int64_t> input_len;
  double noise_lo = -1.0, noise_hi = -1.0;  // <0: task defaults
  bool force = false;
};

inline json generate_manifest_stub(const GenerateOptions& opt) {
  json m;
  m["format"] = "pulseuq-dataset-v1";
  m["task"] = opt.task;
  m["seed"] = opt.seed;
  return m;
}

/// Writes train/val/test containers plus a JSON manifest. Each split draws
/// from its own derived stream, so the bytes of one split never depend on
/// the sizes of the others; subjects are disjoint across splits.
inline void run_generate(const GenerateOptions& opt) {
  if (opt.task != "af" && opt.task != "bp")
    throw ConfigError("generate: task must be 'af' or 'bp'");
  if (opt.n_train < 1 || opt.n_val < 0 || opt.n_test < 0)
    throw ConfigError("generate: split sizes must be positive");
  const fs::path out_dir = resolve_out_path(opt.out);
  std::string previous_hash;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!opt.force)
      throw ConfigError("generate: output directory " + out_dir.string() +
                        " is not empty (use --force to overwrite)");
    const fs::path prior = out_dir / "manifest.json";
    if (fs::exists(prior)) {
      std::ifstream is(prior);
      json m = json::parse(is, nullptr, false);
      if (!m.is_discarded() && m.contains("manifest_hash"))
        previous_hash = m["manifest_hash"];
    }
  }
  fs::create_directories(out_dir);

  json manifest = generate_manifest_stub(opt);
  const struct {
    const char* name;
    std::int64_t n;
    std::uint64_t stream_key;
    int subject_offset;
  } splits[] = {{"train", opt.n_train, 0x7121, 0},
                {"val", opt.n_val, 0x7122, 1000000},
                {"test", opt.n_test, 0x7123, 2000000}};
  json split_info;
  json generator;
  for (const auto& sp : splits) {
    data::Dataset ds;
    RngStream rng = RngStream(opt.seed, RngUse::kData).fork(sp.stream_key);
    if (opt.task == "af") {
      data::RhythmTaskConfig cfg;
      cfg.n = std::max<std::int64_t>(sp.n, 1);
      cfg.class_balance = opt.class_balance;
      if (opt.input_len) cfg.length = *opt.input_len;
      if (opt.noise_lo >= 0) cfg.noise_lo = opt.noise_lo;
      if (opt.noise_hi >= 0) cfg.noise_hi = opt.noise_hi;
      ds = data::gen_rhythm_task(cfg, rng);
      generator = {{"kind", "rhythm"},
                   {"class_balance", cfg.class_balance},
                   {"boundary_fraction", cfg.boundary_fraction},
                   {"jitter_threshold", cfg.jitter_threshold},
                   {"noise", {cfg.noise_lo, cfg.noise_hi}},
                   {"length", cfg.length}};
    } else {
      data::HeteroRegressionConfig cfg;
      cfg.n = std::max<std::int64_t>(sp.n, 1);
      if (opt.input_len) cfg.length = *opt.input_len;
      if (opt.noise_lo >= 0) cfg.noise_lo = opt.noise_lo;
      if (opt.noise_hi >= 0) cfg.noise_hi = opt.noise_hi;
      ds = data::gen_hetero_regression(cfg, rng);
      generator = {{"kind", "hetero_regression"},
                   {"sbp", {cfg.sbp_center, cfg.sbp_halfrange}},
                   {"dbp", {cfg.dbp_center, cfg.dbp_halfrange}},
                   {"noise", {cfg.noise_lo, cfg.noise_hi}},
                   {"length", cfg.length}};
    }
    if (sp.n == 0) ds.examples.clear();
    for (auto& ex : ds.examples) ex.subject += sp.subject_offset;
    const std::string file = std::string(sp.name) + ".bin";
    data::save_dataset(ds, (out_dir / file).string());
    json info;
    info["file"] = file;
    info["n"] = ds.examples.size();
    if (opt.task == "af") {
      std::int64_t pos = 0, boundary = 0;
      for (const auto& ex : ds.examples) {
        pos += ex.class_label;
        boundary += ex.boundary ? 1 : 0;
      }
      info["class_counts"] = {static_cast<std::int64_t>(ds.examples.size()) -
                                  pos,
                              pos};
      info["boundary_count"] = boundary;
    }
    split_info[sp.name] = info;
  }
  manifest["splits"] = split_info;
  manifest["generator"] = generator;
  manifest["manifest_hash"] =
      std::to_string(fnv1a64(manifest.dump()));
  if (!previous_hash.empty()) manifest["previous_manifest_hash"] = previous_hash;
  std::ofstream os(out_dir / "manifest.json", std::ios::binary);
  os << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------------

namespace detail {

struct LoadedSplit {
  data::Dataset ds;
  fs::path dir;
};

inline data::Dataset load_split(const std::string& manifest_path,
                                const std::string& split) {
  std::ifstream is(manifest_path);
  if (!is) throw SchemaError("cannot open dataset manifest: " + manifest_path);
  json m = json::parse(is, nullptr, false);
  if (m.is_discarded() || m.value("format", "") != "pulseuq-dataset-v1")
    throw SchemaError("unrecognised dataset manifest: " + manifest_path);
  if (!m["splits"].contains(split))
    throw ConfigError("dataset manifest has no split '" + split + "'");
  const fs::path dir = fs::path(manifest_path).parent_path();
  const std::string file = m["splits"][split]["file"];
  return data::load_dataset((dir / file).string());
}

inline Tensor batch_from(const data::Dataset& ds,
                         std::span<const std::int64_t> indices) {
  const std::int64_t L = ds.signal_len;
  const auto B = static_cast<std::int64_t>(indices.size());
  std::vector<float> x(B * L);
  for (std::int64_t b = 0; b < B; ++b)
    std::copy(ds.examples[indices[b]].samples.begin(),
              ds.examples[indices[b]].samples.end(), x.begin() + b * L);
  return Tensor::from_data({B, 1, L}, std::move(x));
}

inline std::string param_norms(nn::ParamSet& params) {
  std::ostringstream os;
  os.precision(4);
  for (const auto& e : params.items()) {
    double n = 0;
    for (float v : e.tensor.data()) n += double(v) * v;
    os << ' ' << e.name << '=' << std::sqrt(n);
  }
  return os.str();
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
  int best_epoch = -1;
  double best_val_loss = 0.0;
  int epochs_run = 0;
  double seconds = 0.0;
};

/// Trains per the configured method, logs per-epoch train/val losses, and
/// keeps the checkpoint with the lowest validation loss.
inline TrainResult run_train(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("train: 'data' manifest is required");
  if (cfg.out.empty()) throw ConfigError("train: 'out' directory is required");
  const auto t_start = std::chrono::steady_clock::now();

  data::Dataset train = detail::load_split(cfg.data, "train");
  data::Dataset val = detail::load_split(cfg.data, "val");
  if (train.task != cfg.task)
    throw ConfigError("train: dataset task '" + train.task +
                      "' does not match configured task '" + cfg.task + "'");
  const auto n_train = static_cast<std::int64_t>(train.examples.size());

  const fs::path out_dir = resolve_out_path(cfg.out);
  fs::create_directories(out_dir);

  RunConfig resolved = cfg;
  if (cfg.method == "ivon" && !resolved.ess)
    resolved.ess = static_cast<double>(n_train);
  {
    std::ofstream os(out_dir / "config.resolved", std::ios::binary);
    os << "# pulseuq run config (resolved)\n# config_hash = "
       << detail::hash_hex(resolved.config_hash()) << "\n"
       << resolved.snapshot_text();
  }

  nn::ModelConfig mcfg;
  mcfg.task = cfg.task == "af" ? nn::Task::kClassification
                               : nn::Task::kRegression;
  mcfg.dropout_rate = cfg.dropout_rate;
  mcfg.input_len = train.signal_len;

  RngStream init_rng(cfg.seed, RngUse::kInit);
  RngStream dropout_rng(cfg.dropout_stream_seed(), RngUse::kDropout);
  RngStream logit_rng(cfg.seed, RngUse::kLogitNoise);
  RngStream ivon_rng(cfg.seed, RngUse::kIvonSample);
  RngStream data_rng(cfg.seed, RngUse::kData);

  std::ofstream log(out_dir / "train_log.csv", std::ios::binary);
  log << "epoch,train_loss,val_loss,is_best\n";

  TrainResult result;
  const std::string ckpt_path = (out_dir / "best.ckpt").string();
  const int steps_per_epoch =
      static_cast<int>((n_train + cfg.batch_size - 1) / cfg.batch_size);

  auto finish = [&](nn::ParamSet& params) {
    json run;
    run["task"] = cfg.task;
    run["method"] = cfg.method;
    run["seed"] = cfg.seed;
    run["config_hash"] = detail::hash_hex(resolved.config_hash());
    run["data"] = cfg.data;
    run["best_epoch"] = result.best_epoch;
    run["best_val_loss"] = result.best_val_loss;
    run["epochs_run"] = result.epochs_run;
    run["trainable_parameters"] = params.trainable_count();
    result.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t_start)
                         .count();
    run["train_seconds"] = result.seconds;
    std::ofstream os(out_dir / "run.json", std::ios::binary);
    os << run.dump(2) << "\n";
  };

  if (cfg.task == "af") {
    nn::ConvClassifier model(mcfg, init_rng);
    std::vector<int> labels(n_train);
    for (std::int64_t i = 0; i < n_train; ++i)
      labels[i] = train.examples[i].class_label;
    data::WeightedSampler sampler(labels, 2, data_rng.fork(0x5A3));

    std::optional<optim::Sgd> sgd;
    std::optional<optim::Ivon> ivon;
    if (cfg.method == "mcd") {
      sgd.emplace(model.params(),
                  optim::Sgd::Config{.lr = cfg.lr,
                                     .momentum = cfg.momentum,
                                     .weight_decay = cfg.weight_decay});
    } else {
      ivon.emplace(model.params(),
                   optim::Ivon::Config{.lr = cfg.lr,
                                       .beta1 = cfg.momentum,
                                       .weight_decay = cfg.weight_decay,
                                       .ess = *resolved.ess,
                                       .h0 = cfg.h0,
                                       .clip = cfg.clip});
    }

    auto val_loss_fn = [&] {
      model.params().set_requires_grad(false);
      RngStream val_logit =
          RngStream(cfg.seed, RngUse::kLogitNoise).fork(0xA11);
      double acc = 0.0;
      std::int64_t seen = 0;
      const auto n_val = static_cast<std::int64_t>(val.examples.size());
      for (std::int64_t b0 = 0; b0 < n_val; b0 += cfg.eval_batch) {
        const std::int64_t bsz = std::min<std::int64_t>(cfg.eval_batch,
                                                        n_val - b0);
        std::vector<std::int64_t> idx(bsz);
        std::iota(idx.begin(), idx.end(), b0);
        Tensor x = detail::batch_from(val, idx);
        Tensor out = model.forward(x, nn::ForwardMode{});
        auto [f, sigma] = nn::classifier_heads(out);
        std::vector<int> yb(bsz);
        for (std::int64_t b = 0; b < bsz; ++b)
          yb[b] = val.examples[b0 + b].class_label;
        acc += losses::mc_softmax_nll(f, sigma, yb, cfg.T, val_logit).item() *
               bsz;
        seen += bsz;
      }
      model.params().set_requires_grad(true);
      return acc / seen;
    };

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      double train_loss = 0.0;
      for (int step = 0; step < steps_per_epoch; ++step) {
        std::vector<std::int64_t> idx(cfg.batch_size);
        std::vector<int> yb(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) {
          idx[b] = sampler.next();
          yb[b] = labels[idx[b]];
        }
        Tensor x = detail::batch_from(train, idx);
        nn::ForwardMode mode{.dropout_active = true,
                             .bn_training = false,
                             .dropout_rng = &dropout_rng};
        double step_loss = 0.0;
        if (cfg.method == "mcd") {
          Tensor out = model.forward(x, mode);
          auto [f, sigma] = nn::classifier_heads(out);
          Tensor loss = losses::mc_softmax_nll(f, sigma, yb, cfg.T, logit_rng);
          step_loss = loss.item();
          model.params().zero_grad();
          loss.backward();
          sgd->step();
        } else {
          ivon->begin_step();
          double acc = 0.0;
          for (int j = 0; j < cfg.ivon_train_samples; ++j) {
            ivon->sample_params(ivon_rng);
            Tensor out = model.forward(x, mode);
            auto [f, sigma] = nn::classifier_heads(out);
            Tensor loss =
                losses::mc_softmax_nll(f, sigma, yb, cfg.T, logit_rng);
            acc += loss.item();
            model.params().zero_grad();
            loss.backward();
            ivon->accumulate();
          }
          ivon->step();
          step_loss = acc / cfg.ivon_train_samples;
        }
        if (!std::isfinite(step_loss))
          throw optim::NumericError(
              "train: non-finite loss at epoch " + std::to_string(epoch) +
              " batch " + std::to_string(step) +
              "; parameter norms:" + detail::param_norms(model.params()));
        train_loss += step_loss;
      }
      train_loss /= steps_per_epoch;
      const double vloss = val_loss_fn();
      const bool is_best = result.best_epoch < 0 || vloss < result.best_val_loss;
      if (is_best) {
        result.best_epoch = epoch;
        result.best_val_loss = vloss;
        nn::save_checkpoint(model.params(), ckpt_path,
                            ivon ? ivon->state_arrays()
                                 : std::vector<io::NamedArray>{});
      }
      log << epoch << ',' << train_loss << ',' << vloss << ','
          << (is_best ? 1 : 0) << "\n";
      log.flush();
      result.epochs_run = epoch;
      if (epoch - result.best_epoch >= cfg.patience) break;
    }
    finish(model.params());
  } else {
    nn::ResNet1d model(mcfg, init_rng);
    optim::Adam adam(model.params(),
                     optim::Adam::Config{.lr = cfg.lr,
                                         .beta1 = cfg.momentum,
                                         .weight_decay = cfg.weight_decay});

    auto val_loss_fn = [&] {
      model.params().set_requires_grad(false);
      double acc = 0.0;
      std::int64_t seen = 0;
      const auto n_val = static_cast<std::int64_t>(val.examples.size());
      for (std::int64_t b0 = 0; b0 < n_val; b0 += cfg.eval_batch) {
        const std::int64_t bsz = std::min<std::int64_t>(cfg.eval_batch,
                                                        n_val - b0);
        std::vector<std::int64_t> idx(bsz);
        std::iota(idx.begin(), idx.end(), b0);
        Tensor x = detail::batch_from(val, idx);
        Tensor out = model.forward(x, nn::ForwardMode{});
        std::vector<float> y(bsz * 2);
        for (std::int64_t b = 0; b < bsz; ++b) {
          y[2 * b] = val.examples[b0 + b].target[0];
          y[2 * b + 1] = val.examples[b0 + b].target[1];
        }
        acc += losses::bp_joint_loss(out,
                                     Tensor::from_data({bsz, 2}, std::move(y)))
                   .item() *
               bsz;
        seen += bsz;
      }
      model.params().set_requires_grad(true);
      return acc / seen;
    };

    std::vector<std::int64_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
      RngStream shuffle = data_rng.fork(0xE0 + epoch);
      for (std::int64_t i = n_train - 1; i > 0; --i)
        std::swap(order[i], order[shuffle.below(i + 1)]);
      double train_loss = 0.0;
      for (int step = 0; step < steps_per_epoch; ++step) {
        const std::int64_t b0 = std::int64_t(step) * cfg.batch_size;
        const std::int64_t bsz =
            std::min<std::int64_t>(cfg.batch_size, n_train - b0);
        if (bsz < 2) continue;  // batch norm needs more than one value
        std::vector<std::int64_t> idx(order.begin() + b0,
                                      order.begin() + b0 + bsz);
        Tensor x = detail::batch_from(train, idx);
        std::vector<float> y(bsz * 2);
        for (std::int64_t b = 0; b < bsz; ++b) {
          y[2 * b] = train.examples[idx[b]].target[0];
          y[2 * b + 1] = train.examples[idx[b]].target[1];
        }
        nn::ForwardMode mode{.dropout_active = true,
                             .bn_training = true,
                             .dropout_rng = &dropout_rng};
        Tensor out = model.forward(x, mode);
        Tensor loss =
            losses::bp_joint_loss(out, Tensor::from_data({bsz, 2}, std::move(y)));
        const double step_loss = loss.item();
        if (!std::isfinite(step_loss))
          throw optim::NumericError(
              "train: non-finite loss at epoch " + std::to_string(epoch) +
              " batch " + std::to_string(step) +
              "; parameter norms:" + detail::param_norms(model.params()));
        model.params().zero_grad();
        loss.backward();
        adam.step();
        train_loss += step_loss;
      }
      train_loss /= steps_per_epoch;
      const double vloss = val_loss_fn();
      const bool is_best = result.best_epoch < 0 || vloss < result.best_val_loss;
      if (is_best) {
        result.best_epoch = epoch;
        result.best_val_loss = vloss;
        nn::save_checkpoint(model.params(), ckpt_path);
      }
      log << epoch << ',' << train_loss << ',' << vloss << ','
          << (is_best ? 1 : 0) << "\n";
      log.flush();
      result.epochs_run = epoch;
      if (epoch - result.best_epoch >= cfg.patience) break;
    }
    finish(model.params());
  }
  return result;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
  std::string run_dir;
  std::string split = "test";
  std::optional<int> K, T, J;
  std::optional<std::uint64_t> seed, dropout_seed;
};

inline RunConfig load_run_config(const std::string& run_dir) {
  return RunConfig::resolve(
      read_key_values((resolve_out_path(run_dir) / "config.resolved").string()));
}

/// Runs the stochastic evaluation loop over a split and writes one
/// prediction row per example.
inline fs::path run_evaluate(const EvaluateOptions& opt) {
  const fs::path run_dir = resolve_out_path(opt.run_dir);
  RunConfig cfg = load_run_config(opt.run_dir);
  if (opt.K) cfg.K = *opt.K;
  if (opt.T) cfg.T = *opt.T;
  if (opt.J) cfg.J = *opt.J;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.dropout_seed) cfg.dropout_seed = *opt.dropout_seed;

  data::Dataset ds = detail::load_split(cfg.data, opt.split);
  if (ds.task != cfg.task)
    throw ConfigError("evaluate: split task '" + ds.task +
                      "' does not match run task '" + cfg.task + "'");
  const auto n = static_cast<std::int64_t>(ds.examples.size());

  nn::ModelConfig mcfg;
  mcfg.task = cfg.task == "af" ? nn::Task::kClassification
                               : nn::Task::kRegression;
  mcfg.dropout_rate = cfg.dropout_rate;
  mcfg.input_len = ds.signal_len;

  const std::string ckpt = (run_dir / "best.ckpt").string();
  PredictionFile pf;
  pf.task = cfg.task;
  pf.method = cfg.method;
  pf.seed = cfg.seed;
  pf.config_hash = detail::hash_hex(cfg.config_hash());
  pf.split = opt.split;
  pf.rows.reserve(n);

  RngStream drop_base(cfg.dropout_stream_seed(), RngUse::kDropout);
  RngStream logit_base(cfg.seed, RngUse::kLogitNoise);

  if (cfg.task == "af") {
    nn::ConvClassifier model(mcfg, RngStream(cfg.seed, RngUse::kInit));
    nn::load_into(model.params(), ckpt);
    model.params().set_requires_grad(false);
    if (cfg.method == "mcd") {
      for (std::int64_t i = 0; i < n; ++i) {
        RngStream drop = drop_base.fork(i);
        RngStream logit = logit_base.fork(i);
        auto r = uq::mcd_eval_classification(model, ds.examples[i].samples,
                                             cfg.K, cfg.T, drop, logit);
        PredictionRow row;
        row.id = i;
        row.true_class = ds.examples[i].class_label;
        row.p0 = r.p_mean[0];
        row.p1 = r.p_mean[1];
        row.predicted_class = r.predicted_class;
        row.h_total = r.H_total;
        row.h_ale = r.H_ale;
        row.h_epi = r.H_epi;
        row.true_noise_sigma = ds.examples[i].true_noise_sigma;
        row.boundary = ds.examples[i].boundary;
        pf.rows.push_back(row);
      }
    } else {
      optim::Ivon ivon(model.params(),
                       optim::Ivon::Config{.weight_decay = cfg.weight_decay,
                                           .ess = cfg.ess.value_or(1.0),
                                           .h0 = cfg.h0});
      ivon.load_state(nn::load_checkpoint(ckpt));
      std::vector<std::vector<float>> inputs;
      inputs.reserve(n);
      for (const auto& ex : ds.examples) inputs.push_back(ex.samples);
      RngStream sample = RngStream(cfg.seed, RngUse::kIvonSample).fork(0xEA);
      RngStream logit = logit_base.fork(0xEA);
      auto results = uq::ivon_eval(model, ivon, inputs, cfg.J, cfg.T, sample,
                                   logit, cfg.eval_batch);
      for (std::int64_t i = 0; i < n; ++i) {
        const auto& r = results[i];
        PredictionRow row;
        row.id = i;
        row.true_class = ds.examples[i].class_label;
        row.p0 = r.p_mean[0];
        row.p1 = r.p_mean[1];
        row.predicted_class = r.predicted_class;
        row.h_total = r.H_total;
        row.h_ale = r.H_ale;
        row.h_epi = r.H_epi;
        row.true_noise_sigma = ds.examples[i].true_noise_sigma;
        row.boundary = ds.examples[i].boundary;
        pf.rows.push_back(row);
      }
    }
  } else {
    nn::ResNet1d model(mcfg, RngStream(cfg.seed, RngUse::kInit));
    nn::load_into(model.params(), ckpt);
    model.params().set_requires_grad(false);
    for (std::int64_t i = 0; i < n; ++i) {
      RngStream drop = drop_base.fork(i);
      auto r = uq::mcd_eval_regression(model, ds.examples[i].samples, cfg.K,
                                       drop);
      PredictionRow row;
      row.id = i;
      row.y_sbp = ds.examples[i].target[0];
      row.y_dbp = ds.examples[i].target[1];
      row.mu_sbp = r.mu_mean[0];
      row.mu_dbp = r.mu_mean[1];
      row.s2_epi_sbp = r.sigma2_epi[0];
      row.s2_ale_sbp = r.sigma2_ale[0];
      row.s2_tot_sbp = r.sigma2_total[0];
      row.s2_epi_dbp = r.sigma2_epi[1];
      row.s2_ale_dbp = r.sigma2_ale[1];
      row.s2_tot_dbp = r.sigma2_total[1];
      row.true_noise_sigma = ds.examples[i].true_noise_sigma;
      pf.rows.push_back(row);
    }
  }
  const fs::path out = run_dir / ("predictions_" + opt.split + ".csv");
  write_predictions(pf, out.string());
  return out;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOptions {
  std::string predictions;
  std::string out;                   // report directory
  std::vector<std::string> metrics;  // empty: all applicable
  int bins = 10;
};

namespace detail {

inline void write_bins_csv(const calib::CalibrationReport& rep,
                           const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  os << "bin_index,lower,upper,population,aggregate_a,aggregate_b\n";
  for (const auto& b : rep.bins)
    os << b.bin_index << ',' << fmt_g17(b.lower) << ',' << fmt_g17(b.upper)
       << ',' << b.population << ',' << fmt_g17(b.aggregate_a) << ','
       << fmt_g17(b.aggregate_b) << "\n";
}

inline void write_levels_csv(const calib::CalibrationReport& rep,
                             const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  os << "level,coverage\n";
  for (const auto& [p, cov] : rep.levels)
    os << fmt_g17(p) << ',' << fmt_g17(cov) << "\n";
}

inline void write_bivar_csv(const calib::BivariateHistogram& h,
                            const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  os << "y_bin_lower,y_bin_upper";
  for (std::size_t ix = 0; ix + 1 < h.x_edges.size(); ++ix)
    os << ",x_" << fmt_g17(h.x_edges[ix]) << '_' << fmt_g17(h.x_edges[ix + 1]);
  os << "\n";
  for (std::size_t iy = 0; iy < h.counts.size(); ++iy) {
    if (iy + 1 < h.y_edges.size())
      os << fmt_g17(h.y_edges[iy]) << ',' << fmt_g17(h.y_edges[iy + 1]);
    else
      os << "overflow,overflow";
    for (auto c : h.counts[iy]) os << ',' << c;
    os << "\n";
  }
}

inline std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline json opt_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

}  // namespace detail

/// Computes the requested calibration / performance reports and writes the
/// summary plus one CSV per curve. Returns the process exit code (1 when a
/// class partition was empty and its per-class entries are absent).
inline int run_report(const ReportOptions& opt) {
  PredictionFile pf = read_predictions(opt.predictions);
  const fs::path out_dir = resolve_out_path(opt.out);
  fs::create_directories(out_dir);

  static const std::set<std::string> af_metrics = {"ece", "uce", "perf",
                                                   "pearson"};
  static const std::set<std::string> bp_metrics = {"ence", "coverage", "bivar",
                                                   "pearson", "perf"};
  const auto& applicable = pf.task == "af" ? af_metrics : bp_metrics;
  std::vector<std::string> metrics = opt.metrics;
  if (metrics.empty())
    metrics.assign(applicable.begin(), applicable.end());
  for (const auto& m : metrics)
    if (!applicable.count(m))
      throw ConfigError("metric '" + m + "' is not applicable to task '" +
                        pf.task + "' predictions");
  auto wants = [&](const char* m) {
    return std::find(metrics.begin(), metrics.end(), m) != metrics.end();
  };

  json summary;
  summary["task"] = pf.task;
  summary["method"] = pf.method;
  summary["seed"] = pf.seed;
  summary["config_hash"] = pf.config_hash;
  summary["split"] = pf.split;
  summary["n"] = pf.rows.size();
  bool missing_class = false;

  if (pf.task == "af") {
    std::vector<calib::ClassificationRecord> crecs;
    std::vector<calib::UncertaintyRecord> urecs;
    std::vector<int> class_of;
    std::vector<double> scores, hale, hepi, shares;
    std::vector<int> ytrue;
    for (const auto& r : pf.rows) {
      crecs.push_back({{r.p0, r.p1}, r.true_class});
      urecs.push_back({std::min(r.h_total, 1.0 + 1e-9),
                       r.predicted_class == r.true_class});
      class_of.push_back(r.true_class);
      scores.push_back(r.p1);
      ytrue.push_back(r.true_class);
      hale.push_back(r.h_ale);
      hepi.push_back(r.h_epi);
      if (auto s = uq::epistemic_share(r.h_epi, r.h_total)) shares.push_back(*s);
    }
    std::set<int> present(class_of.begin(), class_of.end());
    if (present.size() < 2) missing_class = true;

    if (wants("ece")) {
      auto reports = calib::per_class_reports<calib::ClassificationRecord>(
          crecs, class_of,
          [&](const std::vector<calib::ClassificationRecord>& r) {
            return calib::ece(r, opt.bins);
          });
      json j;
      for (const auto& rep : reports) {
        j[rep.class_scope] = rep.value;
        detail::write_bins_csv(
            rep, out_dir / ("ece_" + rep.class_scope + ".csv"));
      }
      summary["ece"] = j;
    }
    if (wants("uce")) {
      auto reports = calib::per_class_reports<calib::UncertaintyRecord>(
          urecs, class_of, [&](const std::vector<calib::UncertaintyRecord>& r) {
            return calib::uce(r, opt.bins);
          });
      json j;
      for (const auto& rep : reports) {
        j[rep.class_scope] = rep.value;
        detail::write_bins_csv(
            rep, out_dir / ("uce_" + rep.class_scope + ".csv"));
      }
      summary["uce"] = j;
    }
    if (wants("perf")) {
      auto p = calib::performance_metrics(scores, ytrue);
      summary["perf"] = {{"auc", detail::opt_json(p.auc)},
                         {"f1", detail::opt_json(p.f1)},
                         {"mcc_at_sens80", detail::opt_json(p.mcc_at_sens)},
                         {"mcc_at_spec80", detail::opt_json(p.mcc_at_spec)},
                         {"sens_at_spec80", detail::opt_json(p.sens_at_spec)},
                         {"spec_at_sens80", detail::opt_json(p.spec_at_sens)}};
    }
    if (wants("pearson"))
      summary["pearson_r_ale_epi"] =
          detail::opt_json(calib::pearson_r(hale, hepi));
    summary["epistemic_share_median"] = detail::opt_json(
        detail::median(shares));
  } else {
    struct Head {
      const char* name;
      double PredictionRow::* y;
      double PredictionRow::* mu;
      double PredictionRow::* epi;
      double PredictionRow::* ale;
      double PredictionRow::* tot;
    };
    const Head heads[2] = {
        {"sbp", &PredictionRow::y_sbp, &PredictionRow::mu_sbp,
         &PredictionRow::s2_epi_sbp, &PredictionRow::s2_ale_sbp,
         &PredictionRow::s2_tot_sbp},
        {"dbp", &PredictionRow::y_dbp, &PredictionRow::mu_dbp,
         &PredictionRow::s2_epi_dbp, &PredictionRow::s2_ale_dbp,
         &PredictionRow::s2_tot_dbp}};
    std::vector<double> pooled_shares;
    for (const auto& h : heads) {
      std::vector<calib::RegressionRecord> recs;
      std::vector<double> y, mu, ale, epi, shares;
      std::vector<std::pair<double, double>> err_sigma;
      for (const auto& r : pf.rows) {
        recs.push_back({r.*(h.y), r.*(h.mu), r.*(h.tot)});
        y.push_back(r.*(h.y));
        mu.push_back(r.*(h.mu));
        ale.push_back(r.*(h.ale));
        epi.push_back(r.*(h.epi));
        err_sigma.emplace_back(std::fabs(r.*(h.y) - r.*(h.mu)),
                               std::sqrt(r.*(h.tot)));
        if (auto s = uq::epistemic_share(r.*(h.epi), r.*(h.tot)))
          shares.push_back(*s);
      }
      json hj;
      if (wants("ence")) {
        auto rep = calib::ence(recs, opt.bins);
        hj["ence"] = rep.value;
        detail::write_bins_csv(rep,
                               out_dir / (std::string("ence_") + h.name +
                                          ".csv"));
      }
      if (wants("coverage")) {
        auto rep =
            calib::coverage_curve(recs, calib::default_coverage_levels());
        hj["cce_mean"] = rep.value;
        hj["cce_sum"] = *rep.value_sum;
        detail::write_levels_csv(rep, out_dir / (std::string("coverage_") +
                                                 h.name + ".csv"));
      }
      if (wants("bivar")) {
        std::vector<double> xe, ye;
        for (int i = 0; i <= 12; ++i) xe.push_back(i * 2.5);
        for (int i = 0; i <= 12; ++i) ye.push_back(i * 2.5);
        auto hist = calib::bivariate_histogram(err_sigma, xe, ye);
        detail::write_bivar_csv(hist, out_dir / (std::string("bivar_") +
                                                 h.name + ".csv"));
      }
      if (wants("pearson"))
        hj["pearson_r_ale_epi"] = detail::opt_json(calib::pearson_r(ale, epi));
      if (wants("perf"))
        hj["mae"] = calib::mean_absolute_error(y, mu);
      hj["epistemic_share_median"] =
          detail::opt_json(detail::median(shares));
      summary[h.name] = hj;
    }
    std::vector<double> pooled;
    for (const auto& r : pf.rows) {
      const double tot = r.s2_tot_sbp + r.s2_tot_dbp;
      if (auto s = uq::epistemic_share(r.s2_epi_sbp + r.s2_epi_dbp, tot))
        pooled.push_back(*s);
    }
    summary["epistemic_share_median"] = detail::opt_json(
        detail::median(pooled));
  }

  std::ofstream os(out_dir / "summary.json", std::ios::binary);
  os << summary.dump(2) << "\n";
  if (missing_class)
    std::cerr << "warning: a ground-truth class is absent from the "
                 "predictions; per-class entries are missing\n";
  return missing_class ? 1 : 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
  KeyValues base;                   // base run configuration
  std::string axis;                 // "dropout" | "h0"
  std::vector<double> values;
  std::string out;                  // sweep directory
  std::string eval_split = "test";
};

/// Trains/evaluates/reports one run per axis value (shared data manifest),
/// then emits a comparison table with the per-value epistemic-share medians.
/// Failed runs are recorded and do not abort the sweep.
inline json run_sweep(const SweepOptions& opt) {
  if (opt.values.empty()) throw ConfigError("sweep: no values given");
  if (opt.axis != "dropout" && opt.axis != "h0")
    throw ConfigError("sweep: axis must be 'dropout' or 'h0'");
  const std::string key = opt.axis == "dropout" ? "dropout_rate" : "h0";
  const fs::path sweep_dir = resolve_out_path(opt.out);
  fs::create_directories(sweep_dir);

  json table = json::array();
  for (double value : opt.values) {
    json row;
    row["axis"] = opt.axis;
    row["value"] = value;
    std::ostringstream name;
    name << opt.axis << '_' << value;
    const fs::path run_dir = sweep_dir / name.str();
    try {
      KeyValues kv = opt.base;
      kv[key] = detail::fmt_num(value);
      kv["out"] = run_dir.string();
      RunConfig cfg = RunConfig::resolve(kv);
      TrainResult tr = run_train(cfg);
      row["best_epoch"] = tr.best_epoch;
      row["best_val_loss"] = tr.best_val_loss;
      EvaluateOptions ev;
      ev.run_dir = run_dir.string();
      ev.split = opt.eval_split;
      const fs::path pred = run_evaluate(ev);
      ReportOptions rep;
      rep.predictions = pred.string();
      rep.out = (run_dir / "reports").string();
      run_report(rep);
      std::ifstream is(run_dir / "reports" / "summary.json");
      row["summary"] = json::parse(is);
      row["status"] = "ok";
    } catch (const std::exception& e) {
      row["status"] = "failed";
      row["error"] = e.what();
    }
    table.push_back(row);
  }

  json out;
  out["axis"] = opt.axis;
  out["runs"] = table;
  {
    std::ofstream os(sweep_dir / "sweep_summary.json", std::ios::binary);
    os << out.dump(2) << "\n";
  }
  {
    std::ofstream os(sweep_dir / "sweep_summary.csv", std::ios::binary);
    os << "value,status,epistemic_share_median\n";
    for (const auto& row : table) {
      os << row["value"].dump() << ',' << row["status"].get<std::string>()
         << ',';
      if (row["status"] == "ok" &&
          !row["summary"]["epistemic_share_median"].is_null())
        os << row["summary"]["epistemic_share_median"].dump();
      os << "\n";
    }
  }
  return out;
}

}  // namespace pulseuq::cli
