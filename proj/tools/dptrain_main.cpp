// Copyright 2026 The dptrain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// dptrain command line: training runs, accountant queries, tuning, fixed-ε
// sweeps, finetuning, and benchmarks. Success prints one line of JSON to
// stdout; failure prints one line of error JSON to stderr and exits nonzero.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dptrain/accountant.hpp"
#include "dptrain/harness.hpp"

namespace {

using dptrain::Json;

Json error_json(const std::string& msg) { return Json{{"error", msg}}; }

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    dptrain::check(!tok.empty(), "empty entry in list: " + s);
    out.push_back(std::stod(tok));
  }
  dptrain::check(!out.empty(), "empty list: " + s);
  return out;
}

std::vector<std::size_t> parse_size_list_arg(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    dptrain::check(!tok.empty(), "empty entry in list: " + s);
    out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
  dptrain::check(!out.empty(), "empty list: " + s);
  return out;
}

dptrain::RdpConversion parse_conversion(const std::string& s) {
  if (s == "tight") return dptrain::RdpConversion::kTight;
  if (s == "classic") return dptrain::RdpConversion::kClassic;
  dptrain::fail("conversion must be tight or classic, got " + s);
}

// Applies `--set path.to.key=value` overrides onto the raw config document.
void apply_override(Json& doc, const std::string& kv) {
  const std::size_t eq = kv.find('=');
  dptrain::check(eq != std::string::npos && eq > 0,
                 "--set expects key=value, got \"" + kv + "\"");
  const std::string path = kv.substr(0, eq);
  const std::string raw = kv.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const Json::parse_error&) {
    value = raw;  // unquoted strings pass through verbatim
  }
  Json* node = &doc;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) {
    dptrain::check(!part.empty(), "empty path segment in --set " + kv);
    parts.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    node = &(*node)[parts[i]];
  }
  (*node)[parts.back()] = value;
}

struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string output_dir;
  long long seed = -1;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON experiment config")
        ->required();
    cmd->add_option("--set", sets,
                    "override a config field, e.g. --set train.epochs=10");
    cmd->add_option("--output-dir", output_dir, "override output_dir");
    cmd->add_option("--seed", seed, "override seed");
  }

  dptrain::ExperimentConfig load() const {
    std::ifstream is(config_path);
    dptrain::check(bool(is), "cannot open config " + config_path);
    Json doc;
    is >> doc;
    for (const std::string& kv : sets) apply_override(doc, kv);
    if (!output_dir.empty()) doc["output_dir"] = output_dir;
    if (seed >= 0) doc["seed"] = static_cast<std::uint64_t>(seed);
    return dptrain::ExperimentConfig::from_json(doc);
  }
};

Json run_summary(const dptrain::RunRecord& rec) {
  Json j{{"final_test_acc", rec.final_test_acc},
         {"final_train_acc", rec.final_train_acc}};
  if (rec.dp) {
    j["epsilon"] = std::isfinite(rec.privacy.epsilon)
                       ? Json(rec.privacy.epsilon)
                       : Json("inf");
    j["delta"] = rec.privacy.delta;
    j["sigma"] = rec.privacy.sigma;
    j["steps"] = rec.privacy.steps;
    j["sampling_mismatch"] = rec.privacy.sampling_mismatch;
  } else {
    j["epsilon"] = nullptr;
  }
  return j;
}

void emit_csv(const std::string& body, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << body;
  } else {
    dptrain::write_text_file(out_path, body);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differentially private training and accounting"};
  app.require_subcommand(1);

  // train ------------------------------------------------------------------
  auto* cmd_train = app.add_subcommand("train", "run one training job");
  ConfigArgs train_args;
  train_args.attach(cmd_train);

  // accountant -------------------------------------------------------------
  auto* cmd_acc = app.add_subcommand("accountant", "privacy accounting");
  cmd_acc->require_subcommand(1);

  struct {
    double sigma = 0, q = 0, delta = 0;
    long steps = 0;
    std::string conversion = "tight";
  } eps_args;
  auto* acc_eps = cmd_acc->add_subcommand("epsilon", "epsilon from sigma");
  acc_eps->add_option("--sigma", eps_args.sigma)->required();
  acc_eps->add_option("--q", eps_args.q)->required();
  acc_eps->add_option("--steps", eps_args.steps)->required();
  acc_eps->add_option("--delta", eps_args.delta)->required();
  acc_eps->add_option("--conversion", eps_args.conversion,
                      "tight (default) or classic");

  struct {
    double epsilon = 0, q = 0, delta = 0;
    long steps = 0;
    std::string conversion = "tight";
  } sig_args;
  auto* acc_sig = cmd_acc->add_subcommand("sigma", "sigma from epsilon");
  acc_sig->add_option("--epsilon", sig_args.epsilon)->required();
  acc_sig->add_option("--q", sig_args.q)->required();
  acc_sig->add_option("--steps", sig_args.steps)->required();
  acc_sig->add_option("--delta", sig_args.delta)->required();
  acc_sig->add_option("--conversion", sig_args.conversion,
                      "tight (default) or classic");

  struct {
    double sigma = 0, q = 0;
    long steps = 0;
    std::string deltas, out;
  } dcurve_args;
  auto* acc_dcurve =
      cmd_acc->add_subcommand("delta-curve", "epsilon over a delta grid");
  acc_dcurve->add_option("--sigma", dcurve_args.sigma)->required();
  acc_dcurve->add_option("--q", dcurve_args.q)->required();
  acc_dcurve->add_option("--steps", dcurve_args.steps)->required();
  acc_dcurve->add_option("--deltas", dcurve_args.deltas,
                         "ascending comma list, e.g. 1e-9,1e-7,1e-5")
      ->required();
  acc_dcurve->add_option("--out", dcurve_args.out, "CSV path (default stdout)");

  struct {
    double base_sigma = 0, delta = 0;
    std::size_t base_batch = 0, n = 0;
    long steps = 0;
    std::string batches, out;
  } bcurve_args;
  auto* acc_bcurve = cmd_acc->add_subcommand(
      "batch-curve", "epsilon as batch grows at fixed noise/batch ratio");
  acc_bcurve->add_option("--base-sigma", bcurve_args.base_sigma)->required();
  acc_bcurve->add_option("--base-batch", bcurve_args.base_batch)->required();
  acc_bcurve->add_option("--n", bcurve_args.n, "dataset size")->required();
  acc_bcurve->add_option("--steps", bcurve_args.steps)->required();
  acc_bcurve->add_option("--delta", bcurve_args.delta)->required();
  acc_bcurve->add_option("--batches", bcurve_args.batches,
                         "comma list, e.g. 1024,4096,16384")
      ->required();
  acc_bcurve->add_option("--out", bcurve_args.out, "CSV path (default stdout)");

  // harness commands ---------------------------------------------------------
  auto* cmd_tune =
      app.add_subcommand("tune", "clip-then-learning-rate tuning procedure");
  ConfigArgs tune_args;
  tune_args.attach(cmd_tune);

  auto* cmd_sweep = app.add_subcommand(
      "fixed-eps-sweep", "epochs sweep at a fixed privacy budget");
  ConfigArgs sweep_args;
  sweep_args.attach(cmd_sweep);

  auto* cmd_finetune = app.add_subcommand(
      "finetune", "public pretrain, then private DP finetune");
  ConfigArgs finetune_args;
  finetune_args.attach(cmd_finetune);

  auto* cmd_bench =
      app.add_subcommand("bench", "epoch timing: plain vs DP fast vs naive");
  ConfigArgs bench_args;
  bench_args.attach(cmd_bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage/help text
    if (code != 0) {
      std::cerr << error_json(std::string("argument error: ") + e.what()).dump()
                << "\n";
    }
    return code;
  }

  try {
    if (*cmd_train) {
      const dptrain::RunRecord rec = dptrain::train_run(train_args.load());
      std::cout << run_summary(rec).dump() << "\n";
    } else if (*acc_eps) {
      const dptrain::EpsilonResult r = dptrain::compute_epsilon_full(
          eps_args.sigma, eps_args.q, eps_args.steps, eps_args.delta,
          dptrain::default_rdp_orders(), parse_conversion(eps_args.conversion));
      Json j;
      j["epsilon"] = std::isfinite(r.epsilon) ? Json(r.epsilon) : Json("inf");
      j["best_order"] = r.best_order;
      std::cout << j.dump() << "\n";
    } else if (*acc_sig) {
      const double sigma = dptrain::find_noise_multiplier(
          sig_args.epsilon, sig_args.q, sig_args.steps, sig_args.delta,
          parse_conversion(sig_args.conversion));
      const double achieved = dptrain::compute_epsilon(
          sigma, sig_args.q, sig_args.steps, sig_args.delta,
          parse_conversion(sig_args.conversion));
      std::cout << Json{{"sigma", sigma}, {"epsilon", achieved}}.dump()
                << "\n";
    } else if (*acc_dcurve) {
      const auto rows = dptrain::epsilon_curve(
          dcurve_args.sigma, dcurve_args.q, dcurve_args.steps,
          parse_double_list(dcurve_args.deltas));
      std::string csv = "# dptrain-csv delta-curve v1\ndelta,epsilon\n";
      for (const auto& [d, e] : rows) {
        csv += dptrain::format_g17(d) + "," + dptrain::format_g17(e) + "\n";
      }
      emit_csv(csv, dcurve_args.out);
    } else if (*acc_bcurve) {
      const auto rows = dptrain::batch_scaling_curve(
          bcurve_args.base_sigma, bcurve_args.base_batch, bcurve_args.n,
          bcurve_args.steps, bcurve_args.delta,
          parse_size_list_arg(bcurve_args.batches));
      std::string csv =
          "# dptrain-csv batch-curve v1\nbatch_size,sigma,epsilon\n";
      for (const auto& r : rows) {
        csv += std::to_string(r.batch) + "," + dptrain::format_g17(r.sigma) +
               "," + dptrain::format_g17(r.epsilon) + "\n";
      }
      emit_csv(csv, bcurve_args.out);
    } else if (*cmd_tune) {
      const dptrain::TuneResult t = dptrain::tune_run(tune_args.load());
      std::cout << t.to_json().dump() << "\n";
      if (!t.ok) {
        std::cerr << error_json("tune: empty feasible set at step 2; " +
                                t.diagnostics)
                         .dump()
                  << "\n";
        return 1;
      }
    } else if (*cmd_sweep) {
      const dptrain::SweepResult s = dptrain::fixed_eps_sweep(sweep_args.load());
      std::cout << s.to_json().dump() << "\n";
    } else if (*cmd_finetune) {
      const dptrain::FinetuneResult f =
          dptrain::finetune_run(finetune_args.load());
      Json j{{"pretrain", run_summary(f.pretrain)},
             {"finetune", run_summary(f.finetune)}};
      std::cout << j.dump() << "\n";
    } else if (*cmd_bench) {
      const dptrain::BenchResult b = dptrain::bench_run(bench_args.load());
      std::cout << b.to_json().dump() << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << error_json(e.what()).dump() << "\n";
    return 1;
  }
  return 0;
}
