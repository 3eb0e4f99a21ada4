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
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "pulseuq/cli/commands.hpp"

namespace {

using pulseuq::cli::ConfigError;
using pulseuq::cli::KeyValues;

// exit codes: 0 success, 1 warning, 2 config validation, 3 numeric, 4 IO/schema
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

/// Collects `--set key=value` overrides plus an optional config file into one
/// key-value map (flags win over the file).
KeyValues merge_config(const std::string& config_file,
                       const std::vector<std::string>& sets) {
  KeyValues kv;
  if (!config_file.empty()) kv = pulseuq::cli::read_key_values(config_file);
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "pulseuq: train small 1-d time-series models with Monte Carlo Dropout "
      "or IVON, disentangle aleatoric/epistemic uncertainty, and score "
      "calibration (ENCE, CCE, ECE, UCE)"};
  app.require_subcommand(1);

  // --- generate ---
  pulseuq::cli::GenerateOptions gen;
  std::int64_t gen_input_len = 0;
  auto* cmd_gen = app.add_subcommand("generate", "write a synthetic dataset");
  cmd_gen->add_option("--task", gen.task, "af | bp")->required();
  cmd_gen->add_option("--out", gen.out, "output directory")->required();
  cmd_gen->add_option("--n-train", gen.n_train, "training examples");
  cmd_gen->add_option("--n-val", gen.n_val, "validation examples");
  cmd_gen->add_option("--n-test", gen.n_test, "test examples");
  cmd_gen->add_option("--seed", gen.seed, "generator seed");
  cmd_gen->add_option("--class-balance", gen.class_balance,
                      "share of the irregular class (af)");
  cmd_gen->add_option("--input-len", gen_input_len, "override signal length");
  cmd_gen->add_option("--noise-lo", gen.noise_lo, "noise sigma lower bound");
  cmd_gen->add_option("--noise-hi", gen.noise_hi, "noise sigma upper bound");
  cmd_gen->add_flag("--force", gen.force, "overwrite a non-empty directory");

  // --- train ---
  std::string train_config;
  std::vector<std::string> train_sets;
  auto* cmd_train = app.add_subcommand("train", "train a model");
  cmd_train->add_option("--config", train_config, "key = value config file");
  cmd_train->add_option("--set", train_sets,
                        "config override, e.g. --set lr=0.01");
  for (const char* key : {"task", "method", "data", "out"}) {
    cmd_train
        ->add_option_function<std::string>(
            std::string("--") + key,
            [key, &train_sets](const std::string& v) {
              train_sets.push_back(std::string(key) + "=" + v);
            })
        ->type_name("TEXT");
  }
  for (const char* key : {"dropout_rate", "h0", "K", "T", "J", "epochs",
                          "batch_size", "lr", "weight_decay", "momentum",
                          "seed", "dropout_seed", "ess", "clip",
                          "ivon_train_samples", "patience"}) {
    cmd_train
        ->add_option_function<std::string>(
            std::string("--") + key,
            [key, &train_sets](const std::string& v) {
              train_sets.push_back(std::string(key) + "=" + v);
            })
        ->type_name("NUM");
  }

  // --- evaluate ---
  pulseuq::cli::EvaluateOptions ev;
  int ev_K = 0, ev_T = 0, ev_J = 0;
  std::uint64_t ev_seed = 0, ev_dropout_seed = 0;
  auto* cmd_eval =
      app.add_subcommand("evaluate", "write per-example predictions");
  cmd_eval->add_option("--run", ev.run_dir, "run directory")->required();
  cmd_eval->add_option("--split", ev.split, "train | val | test");
  auto* oK = cmd_eval->add_option("--K", ev_K, "dropout passes");
  auto* oT = cmd_eval->add_option("--T", ev_T, "logit-noise samples");
  auto* oJ = cmd_eval->add_option("--J", ev_J, "posterior draws");
  auto* oS = cmd_eval->add_option("--seed", ev_seed, "evaluation seed");
  auto* oD = cmd_eval->add_option("--dropout_seed", ev_dropout_seed,
                                  "dropout stream seed");

  // --- report ---
  pulseuq::cli::ReportOptions rep;
  std::string rep_metrics;
  auto* cmd_rep = app.add_subcommand("report", "calibration reports");
  cmd_rep->add_option("--predictions", rep.predictions, "predictions CSV")
      ->required();
  cmd_rep->add_option("--out", rep.out, "report directory")->required();
  cmd_rep->add_option("--metrics", rep_metrics,
                      "comma list: ence,coverage,ece,uce,bivar,pearson,perf");
  cmd_rep->add_option("--bins", rep.bins, "bin count for binned metrics");

  // --- sweep ---
  std::string sweep_config, sweep_values;
  std::vector<std::string> sweep_sets;
  pulseuq::cli::SweepOptions sw;
  auto* cmd_sweep =
      app.add_subcommand("sweep", "train/evaluate/report across axis values");
  cmd_sweep->add_option("--config", sweep_config, "base config file");
  cmd_sweep->add_option("--set", sweep_sets, "base config override");
  cmd_sweep->add_option("--axis", sw.axis, "dropout | h0")->required();
  cmd_sweep->add_option("--values", sweep_values, "comma list of axis values")
      ->required();
  cmd_sweep->add_option("--out", sw.out, "sweep directory")->required();
  cmd_sweep->add_option("--eval-split", sw.eval_split, "split to evaluate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) {
      if (gen_input_len > 0) gen.input_len = gen_input_len;
      pulseuq::cli::run_generate(gen);
      std::cout << "wrote dataset to "
                << pulseuq::cli::resolve_out_path(gen.out).string() << "\n";
      return 0;
    }
    if (cmd_train->parsed()) {
      auto cfg = pulseuq::cli::RunConfig::resolve(
          merge_config(train_config, train_sets));
      auto result = pulseuq::cli::run_train(cfg);
      std::cout << "best epoch " << result.best_epoch << " (val loss "
                << result.best_val_loss << "), " << result.epochs_run
                << " epochs in " << result.seconds << "s\n";
      return 0;
    }
    if (cmd_eval->parsed()) {
      if (!oK->empty()) ev.K = ev_K;
      if (!oT->empty()) ev.T = ev_T;
      if (!oJ->empty()) ev.J = ev_J;
      if (!oS->empty()) ev.seed = ev_seed;
      if (!oD->empty()) ev.dropout_seed = ev_dropout_seed;
      const auto path = pulseuq::cli::run_evaluate(ev);
      std::cout << "wrote " << path.string() << "\n";
      return 0;
    }
    if (cmd_rep->parsed()) {
      if (!rep_metrics.empty()) {
        std::istringstream ms(rep_metrics);
        std::string m;
        while (std::getline(ms, m, ',')) rep.metrics.push_back(m);
      }
      return pulseuq::cli::run_report(rep);
    }
    if (cmd_sweep->parsed()) {
      sw.base = merge_config(sweep_config, sweep_sets);
      std::istringstream vs(sweep_values);
      std::string v;
      while (std::getline(vs, v, ',')) sw.values.push_back(std::stod(v));
      pulseuq::cli::run_sweep(sw);
      std::cout << "wrote sweep summary to "
                << pulseuq::cli::resolve_out_path(sw.out).string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const pulseuq::optim::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return 0;
}
