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

#pragma once

// Experiment orchestration: configuration (one JSON document, echoed into
// every artifact), training runs, the clip-then-lr tuning procedure, fixed-ε
// epoch sweeps, public-pretrain/private-finetune runs, and timing benchmarks.
//
// Artifact contracts:
//   - run JSON carries the config snapshot, per-epoch metrics (including
//     wall times), and the privacy report; re-running from the snapshot
//     reproduces everything except the wall times.
//   - metrics CSV carries only the deterministic columns, so identical
//     config+seed gives byte-identical CSV.
//   - every CSV starts with a "# dptrain-csv <name> v<N>" schema line and a
//     header row.

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dptrain/accountant.hpp"
#include "dptrain/checkpoint.hpp"
#include "dptrain/data.hpp"
#include "dptrain/dp.hpp"
#include "dptrain/models.hpp"

namespace dptrain {

using Json = nlohmann::json;

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void expect_keys(const Json& j, const std::vector<std::string>& known,
                        const std::string& where) {
  check(j.is_object(), where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const auto& known_key : known) ok = ok || k == known_key;
    check(ok, "unknown key \"" + k + "\" in " + where);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Configuration.

struct SynthSpec {
  std::size_t n = 10000;
  std::size_t d = 20;
  int classes = 2;
  double separation = 10.0;
  std::size_t test_n = 2000;
};

struct DataConfig {
  std::string source = "synth";  // synth | mnist | cifar10
  std::string dir;               // falls back to $DPTRAIN_DATA_DIR/<source>
  double split_fraction = 0.0;   // 0 = no public/private split
  std::string split_side = "none";  // none | public | private
  std::size_t subset = 0;        // 0 = all; else stratified cap on train size
  SynthSpec synth;
};

struct ModelConfig {
  std::string kind = "logreg";  // logreg | mlp | convnet
  std::string arch;             // mlp: "64,64"; convnet: "32(2)-...-128"
  std::string activation = "tanh";
  std::size_t group_norm_groups = 0;
  std::string init_checkpoint;  // when set, the checkpoint defines the model
  std::size_t freeze_prefix = 0;
};

struct TrainConfig {
  std::size_t epochs = 5;
  std::size_t batch_size = 256;   // per sub-batch
  std::size_t virtual_steps = 1;
  std::string sampler = "poisson";  // poisson | shuffled
  double max_lr = 0.1;
  long long warmup_steps = -1;  // -1 = 1 epoch when epochs <= 10, else 5
  std::string lr_shape = "cosine";  // cosine | constant
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 0.0;
  std::string weight_decay_mode = "post_clip";  // post_clip | in_loss
  std::size_t eval_cap = 0;  // 0 = evaluate on the full train split
};

struct PrivacyConfig {
  bool enabled = false;
  double clip_norm = 1.0;
  double noise_multiplier = -1.0;  // -1 = not given
  double epsilon = -1.0;           // -1 = not given; else target at delta
  double delta = 1e-6;
  int shards = 1;
  std::string clip_path = "fast";  // fast | naive
};

struct TuneConfig {
  std::vector<double> clip_grid;
  std::vector<double> lr_grid;
  double alpha_pub = -1.0;  // -1 = sweep lr_grid non-privately first
  double tolerance = 0.01;  // accuracy points (fraction) allowed below ref
  bool refine = false;
};

struct SweepConfig {
  std::vector<std::size_t> epochs_grid;
};

struct FinetuneConfig {
  std::size_t pretrain_epochs = 5;
  double pretrain_lr = -1.0;        // -1 = train.max_lr
  long long freeze_prefix = -1;     // -1 = freeze everything but the head
  std::uint64_t head_seed = 77;
};

struct BenchConfig {
  std::size_t epochs = 3;
  std::size_t warmup_epochs = 1;  // excluded from the averages
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir;
  ModelConfig model;
  DataConfig data;
  TrainConfig train;
  PrivacyConfig privacy;
  TuneConfig tune;
  SweepConfig sweep;
  FinetuneConfig finetune;
  BenchConfig bench;

  void validate() const;
  Json to_json() const;
  static ExperimentConfig from_json(const Json& j);
  static ExperimentConfig from_file(const std::string& path);
};

inline void ExperimentConfig::validate() const {
  check(model.kind == "logreg" || model.kind == "mlp" ||
            model.kind == "convnet",
        "model.kind must be logreg, mlp, or convnet (got " + model.kind + ")");
  check(data.source == "synth" || data.source == "mnist" ||
            data.source == "cifar10",
        "data.source must be synth, mnist, or cifar10 (got " + data.source +
            ")");
  check(data.split_side == "none" || data.split_side == "public" ||
            data.split_side == "private",
        "data.split_side must be none, public, or private");
  if (data.split_side != "none") {
    check(data.split_fraction > 0.0 && data.split_fraction < 1.0,
          "data.split_fraction must be in (0,1) when split_side is set");
  }
  check(train.sampler == "poisson" || train.sampler == "shuffled",
        "train.sampler must be poisson or shuffled");
  check(train.lr_shape == "cosine" || train.lr_shape == "constant",
        "train.lr_shape must be cosine or constant");
  check(train.weight_decay_mode == "post_clip" ||
            train.weight_decay_mode == "in_loss",
        "train.weight_decay_mode must be post_clip or in_loss");
  check(train.epochs >= 1, "train.epochs must be >= 1");
  check(train.batch_size >= 1, "train.batch_size must be >= 1");
  check(train.virtual_steps >= 1, "train.virtual_steps must be >= 1");
  check(train.max_lr > 0, "train.max_lr must be positive");
  check(privacy.clip_path == "fast" || privacy.clip_path == "naive",
        "privacy.clip_path must be fast or naive");
  if (privacy.enabled) {
    const bool has_sigma = privacy.noise_multiplier >= 0;
    const bool has_eps = privacy.epsilon > 0;
    check(has_sigma != has_eps,
          "privacy needs exactly one of noise_multiplier or epsilon");
    check(privacy.delta > 0 && privacy.delta < 1,
          "privacy.delta must be in (0,1)");
    check(privacy.clip_norm > 0, "privacy.clip_norm must be positive");
    check(privacy.shards >= 1, "privacy.shards must be >= 1");
  }
}

inline Json ExperimentConfig::to_json() const {
  Json j;
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["model"] = {{"kind", model.kind},
                {"arch", model.arch},
                {"activation", model.activation},
                {"group_norm_groups", model.group_norm_groups},
                {"init_checkpoint", model.init_checkpoint},
                {"freeze_prefix", model.freeze_prefix}};
  j["data"] = {{"source", data.source},
               {"dir", data.dir},
               {"split_fraction", data.split_fraction},
               {"split_side", data.split_side},
               {"subset", data.subset},
               {"synth",
                {{"n", data.synth.n},
                 {"d", data.synth.d},
                 {"classes", data.synth.classes},
                 {"separation", data.synth.separation},
                 {"test_n", data.synth.test_n}}}};
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"virtual_steps", train.virtual_steps},
                {"sampler", train.sampler},
                {"max_lr", train.max_lr},
                {"warmup_steps", train.warmup_steps},
                {"lr_shape", train.lr_shape},
                {"momentum", train.momentum},
                {"nesterov", train.nesterov},
                {"weight_decay", train.weight_decay},
                {"weight_decay_mode", train.weight_decay_mode},
                {"eval_cap", train.eval_cap}};
  j["privacy"] = {{"enabled", privacy.enabled},
                  {"clip_norm", privacy.clip_norm},
                  {"noise_multiplier", privacy.noise_multiplier},
                  {"epsilon", privacy.epsilon},
                  {"delta", privacy.delta},
                  {"shards", privacy.shards},
                  {"clip_path", privacy.clip_path}};
  j["tune"] = {{"clip_grid", tune.clip_grid},
               {"lr_grid", tune.lr_grid},
               {"alpha_pub", tune.alpha_pub},
               {"tolerance", tune.tolerance},
               {"refine", tune.refine}};
  j["sweep"] = {{"epochs_grid", sweep.epochs_grid}};
  j["finetune"] = {{"pretrain_epochs", finetune.pretrain_epochs},
                   {"pretrain_lr", finetune.pretrain_lr},
                   {"freeze_prefix", finetune.freeze_prefix},
                   {"head_seed", finetune.head_seed}};
  j["bench"] = {{"epochs", bench.epochs},
                {"warmup_epochs", bench.warmup_epochs}};
  return j;
}

inline ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  detail::expect_keys(j,
                      {"seed", "output_dir", "model", "data", "train",
                       "privacy", "tune", "sweep", "finetune", "bench"},
                      "config");
  ExperimentConfig c;
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("model")) {
    const Json& m = j.at("model");
    detail::expect_keys(m,
                        {"kind", "arch", "activation", "group_norm_groups",
                         "init_checkpoint", "freeze_prefix"},
                        "config.model");
    c.model.kind = m.value("kind", c.model.kind);
    c.model.arch = m.value("arch", c.model.arch);
    c.model.activation = m.value("activation", c.model.activation);
    c.model.group_norm_groups =
        m.value("group_norm_groups", c.model.group_norm_groups);
    c.model.init_checkpoint =
        m.value("init_checkpoint", c.model.init_checkpoint);
    c.model.freeze_prefix = m.value("freeze_prefix", c.model.freeze_prefix);
  }
  if (j.contains("data")) {
    const Json& d = j.at("data");
    detail::expect_keys(
        d, {"source", "dir", "split_fraction", "split_side", "subset", "synth"},
        "config.data");
    c.data.source = d.value("source", c.data.source);
    c.data.dir = d.value("dir", c.data.dir);
    c.data.split_fraction = d.value("split_fraction", c.data.split_fraction);
    c.data.split_side = d.value("split_side", c.data.split_side);
    c.data.subset = d.value("subset", c.data.subset);
    if (d.contains("synth")) {
      const Json& s = d.at("synth");
      detail::expect_keys(s, {"n", "d", "classes", "separation", "test_n"},
                          "config.data.synth");
      c.data.synth.n = s.value("n", c.data.synth.n);
      c.data.synth.d = s.value("d", c.data.synth.d);
      c.data.synth.classes = s.value("classes", c.data.synth.classes);
      c.data.synth.separation = s.value("separation", c.data.synth.separation);
      c.data.synth.test_n = s.value("test_n", c.data.synth.test_n);
    }
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    detail::expect_keys(t,
                        {"epochs", "batch_size", "virtual_steps", "sampler",
                         "max_lr", "warmup_steps", "lr_shape", "momentum",
                         "nesterov", "weight_decay", "weight_decay_mode",
                         "eval_cap"},
                        "config.train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.virtual_steps = t.value("virtual_steps", c.train.virtual_steps);
    c.train.sampler = t.value("sampler", c.train.sampler);
    c.train.max_lr = t.value("max_lr", c.train.max_lr);
    c.train.warmup_steps = t.value("warmup_steps", c.train.warmup_steps);
    c.train.lr_shape = t.value("lr_shape", c.train.lr_shape);
    c.train.momentum = t.value("momentum", c.train.momentum);
    c.train.nesterov = t.value("nesterov", c.train.nesterov);
    c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
    c.train.weight_decay_mode =
        t.value("weight_decay_mode", c.train.weight_decay_mode);
    c.train.eval_cap = t.value("eval_cap", c.train.eval_cap);
  }
  if (j.contains("privacy")) {
    const Json& p = j.at("privacy");
    detail::expect_keys(p,
                        {"enabled", "clip_norm", "noise_multiplier", "epsilon",
                         "delta", "shards", "clip_path"},
                        "config.privacy");
    c.privacy.enabled = p.value("enabled", c.privacy.enabled);
    c.privacy.clip_norm = p.value("clip_norm", c.privacy.clip_norm);
    c.privacy.noise_multiplier =
        p.value("noise_multiplier", c.privacy.noise_multiplier);
    c.privacy.epsilon = p.value("epsilon", c.privacy.epsilon);
    c.privacy.delta = p.value("delta", c.privacy.delta);
    c.privacy.shards = p.value("shards", c.privacy.shards);
    c.privacy.clip_path = p.value("clip_path", c.privacy.clip_path);
  }
  if (j.contains("tune")) {
    const Json& t = j.at("tune");
    detail::expect_keys(
        t, {"clip_grid", "lr_grid", "alpha_pub", "tolerance", "refine"},
        "config.tune");
    c.tune.clip_grid =
        t.value("clip_grid", c.tune.clip_grid);
    c.tune.lr_grid = t.value("lr_grid", c.tune.lr_grid);
    c.tune.alpha_pub = t.value("alpha_pub", c.tune.alpha_pub);
    c.tune.tolerance = t.value("tolerance", c.tune.tolerance);
    c.tune.refine = t.value("refine", c.tune.refine);
  }
  if (j.contains("sweep")) {
    const Json& s = j.at("sweep");
    detail::expect_keys(s, {"epochs_grid"}, "config.sweep");
    c.sweep.epochs_grid = s.value("epochs_grid", c.sweep.epochs_grid);
  }
  if (j.contains("finetune")) {
    const Json& f = j.at("finetune");
    detail::expect_keys(
        f, {"pretrain_epochs", "pretrain_lr", "freeze_prefix", "head_seed"},
        "config.finetune");
    c.finetune.pretrain_epochs =
        f.value("pretrain_epochs", c.finetune.pretrain_epochs);
    c.finetune.pretrain_lr = f.value("pretrain_lr", c.finetune.pretrain_lr);
    c.finetune.freeze_prefix =
        f.value("freeze_prefix", c.finetune.freeze_prefix);
    c.finetune.head_seed = f.value("head_seed", c.finetune.head_seed);
  }
  if (j.contains("bench")) {
    const Json& b = j.at("bench");
    detail::expect_keys(b, {"epochs", "warmup_epochs"}, "config.bench");
    c.bench.epochs = b.value("epochs", c.bench.epochs);
    c.bench.warmup_epochs = b.value("warmup_epochs", c.bench.warmup_epochs);
  }
  c.validate();
  return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  check(bool(is), "cannot open config " + path);
  Json j;
  is >> j;
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Datasets for a config.

inline std::string dataset_root(const DataConfig& d) {
  if (!d.dir.empty()) return d.dir;
  const char* env = std::getenv("DPTRAIN_DATA_DIR");
  check(env != nullptr && *env != '\0',
        "data.dir not set and DPTRAIN_DATA_DIR is undefined");
  return std::string(env) + "/" + d.source;
}

namespace detail {

inline std::string find_data_file(const std::string& dir,
                                  const std::string& base) {
  for (const std::string& cand : {dir + "/" + base, dir + "/" + base + ".gz"}) {
    if (std::filesystem::exists(cand)) return cand;
  }
  fail("missing dataset file " + dir + "/" + base + " (also tried .gz)");
}

// Stratified head-take: keeps per-class proportions within one example.
template <typename Real>
Dataset<Real> stratified_subset(const Dataset<Real>& ds, std::size_t cap) {
  if (cap == 0 || cap >= ds.size()) return ds;
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    by_class[ds.labels[i]].push_back(i);
  const double frac = static_cast<double>(cap) / static_cast<double>(ds.size());
  std::vector<std::size_t> keep;
  for (const auto& idx : by_class) {
    const std::size_t k = std::min(
        idx.size(), static_cast<std::size_t>(
                        std::llround(frac * static_cast<double>(idx.size()))));
    keep.insert(keep.end(), idx.begin(), idx.begin() + k);
  }
  std::sort(keep.begin(), keep.end());
  Minibatch<Real> mb = gather(ds, keep);
  Dataset<Real> out;
  out.name = ds.name + "/subset" + std::to_string(keep.size());
  out.x = std::move(mb.x);
  out.labels = std::move(mb.y);
  out.num_classes = ds.num_classes;
  out.norm = ds.norm;
  return out;
}

}  // namespace detail

struct DataBundle {
  Dataset<double> train;
  Dataset<double> test;
};

inline DataBundle load_for_config(const ExperimentConfig& cfg) {
  DataBundle b;
  const DataConfig& d = cfg.data;
  if (d.source == "synth") {
    Dataset<double> all = synth_gaussian_mixture<double>(
        d.synth.n + d.synth.test_n, d.synth.d, d.synth.classes,
        d.synth.separation, cfg.seed);
    std::vector<std::size_t> head(d.synth.n), tail(d.synth.test_n);
    for (std::size_t i = 0; i < d.synth.n; ++i) head[i] = i;
    for (std::size_t i = 0; i < d.synth.test_n; ++i) tail[i] = d.synth.n + i;
    const auto take = [&](const std::vector<std::size_t>& idx,
                          const char* suffix) {
      Minibatch<double> mb = gather(all, idx);
      Dataset<double> out;
      out.name = all.name + suffix;
      out.x = std::move(mb.x);
      out.labels = std::move(mb.y);
      out.num_classes = all.num_classes;
      out.norm = all.norm;
      return out;
    };
    b.train = take(head, "/train");
    b.test = take(tail, "/test");
  } else if (d.source == "mnist") {
    const std::string root = dataset_root(d);
    b.train = load_mnist_idx<double>(
        detail::find_data_file(root, "train-images-idx3-ubyte"),
        detail::find_data_file(root, "train-labels-idx1-ubyte"));
    b.test = load_mnist_idx<double>(
        detail::find_data_file(root, "t10k-images-idx3-ubyte"),
        detail::find_data_file(root, "t10k-labels-idx1-ubyte"));
  } else {
    const std::string root = dataset_root(d);
    std::vector<std::string> train_paths;
    for (int i = 1; i <= 5; ++i) {
      train_paths.push_back(detail::find_data_file(
          root, "data_batch_" + std::to_string(i) + ".bin"));
    }
    b.train = load_cifar10_binary<double>(train_paths);
    b.test = load_cifar10_binary<double>(
        {detail::find_data_file(root, "test_batch.bin")}, &b.train.norm);
  }
  if (d.split_side != "none") {
    auto [pub, prv] = public_private_split(b.train, d.split_fraction, cfg.seed);
    b.train = d.split_side == "public" ? std::move(pub) : std::move(prv);
  }
  b.train = detail::stratified_subset(b.train, d.subset);
  if (cfg.model.kind != "convnet") {
    const std::size_t n_train = b.train.size(), n_test = b.test.size();
    b.train.x = b.train.x.reshaped({n_train, b.train.example_size()});
    b.test.x = b.test.x.reshaped({n_test, b.test.example_size()});
  }
  return b;
}

// ---------------------------------------------------------------------------
// Model for a config + dataset.

inline std::vector<std::size_t> parse_width_list(const std::string& s) {
  return detail::parse_size_list(s);
}

inline Model<double> build_for_config(const ExperimentConfig& cfg,
                                      const Dataset<double>& train) {
  Model<double> model;
  if (!cfg.model.init_checkpoint.empty()) {
    model = load_model_file<double>(cfg.model.init_checkpoint);
    check(model.num_classes == train.num_classes,
          "checkpoint classifies " + std::to_string(model.num_classes) +
              " classes but the dataset has " +
              std::to_string(train.num_classes));
  } else if (cfg.model.kind == "convnet") {
    check(train.x.rank() == 4, "convnet needs {N,C,H,W} data, got " +
                                   train.x.shape_str());
    ArchSpec spec = parse_arch_spec(cfg.model.arch);
    spec.activation = activation_from_name(cfg.model.activation);
    spec.group_norm_groups = cfg.model.group_norm_groups;
    model = build_convnet<double>(
        spec, {train.x.dim(1), train.x.dim(2), train.x.dim(3)},
        train.num_classes, cfg.seed);
  } else {
    const std::vector<std::size_t> hidden =
        cfg.model.kind == "logreg" ? std::vector<std::size_t>{}
                                   : parse_width_list(cfg.model.arch);
    check(cfg.model.kind == "logreg" || !hidden.empty(),
          "mlp model needs a non-empty arch width list");
    model = build_mlp<double>(train.example_size(), hidden, train.num_classes,
                              activation_from_name(cfg.model.activation),
                              cfg.seed);
  }
  apply_freeze(model, FreezePlan{cfg.model.freeze_prefix});
  return model;
}

// ---------------------------------------------------------------------------
// Run resolution and execution.

struct ResolvedRun {
  DpSgdConfig<double> dp;  // complete: sigma, steps, warmup all resolved
  bool dp_enabled = false;
  ClipPath path = ClipPath::kFast;
  bool poisson = true;
  std::size_t epochs = 0;
  std::size_t steps_per_epoch = 0;
  double q = 0;
  double delta = 0;
  double epsilon_target = -1;
  bool sampling_mismatch = false;
  std::size_t eval_cap = 0;
};

inline ResolvedRun resolve_run(const ExperimentConfig& cfg,
                               std::size_t n_train) {
  cfg.validate();
  check(n_train >= 1, "empty training set");
  ResolvedRun r;
  r.dp_enabled = cfg.privacy.enabled;
  r.path = cfg.privacy.clip_path == "fast" ? ClipPath::kFast : ClipPath::kNaive;
  r.poisson = cfg.train.sampler == "poisson";
  r.epochs = cfg.train.epochs;
  r.eval_cap = cfg.train.eval_cap;
  r.delta = cfg.privacy.delta;

  DpSgdConfig<double>& dp = r.dp;
  dp.clip_norm = cfg.privacy.clip_norm;
  dp.shards = cfg.privacy.shards;
  dp.batch_size = cfg.train.batch_size;
  dp.virtual_steps = cfg.train.virtual_steps;
  dp.max_lr = cfg.train.max_lr;
  dp.lr_shape =
      cfg.train.lr_shape == "cosine" ? LrShape::kCosine : LrShape::kConstant;
  dp.momentum = cfg.train.momentum;
  dp.nesterov = cfg.train.nesterov;
  dp.weight_decay = cfg.train.weight_decay;
  dp.weight_decay_mode = cfg.train.weight_decay_mode == "post_clip"
                             ? WeightDecayMode::kPostClip
                             : WeightDecayMode::kInLoss;
  dp.seed = cfg.seed;

  const std::size_t eff = dp.effective_batch();
  check(eff <= n_train, "effective batch " + std::to_string(eff) +
                            " exceeds the training set size " +
                            std::to_string(n_train));
  r.steps_per_epoch = n_train / eff;
  dp.total_steps = r.epochs * r.steps_per_epoch;
  r.q = static_cast<double>(eff) / static_cast<double>(n_train);

  if (cfg.train.warmup_steps >= 0) {
    dp.warmup_steps = static_cast<std::size_t>(cfg.train.warmup_steps);
    check(dp.warmup_steps <= dp.total_steps,
          "train.warmup_steps exceeds the total step count " +
              std::to_string(dp.total_steps));
  } else {
    const std::size_t warm_epochs = r.epochs <= 10 ? 1 : 5;
    dp.warmup_steps = std::min(dp.total_steps,
                               warm_epochs * r.steps_per_epoch);
  }

  if (r.dp_enabled) {
    if (cfg.privacy.epsilon > 0) {
      r.epsilon_target = cfg.privacy.epsilon;
      dp.noise_multiplier = find_noise_multiplier(
          cfg.privacy.epsilon, r.q, dp.total_steps, cfg.privacy.delta);
    } else {
      dp.noise_multiplier = cfg.privacy.noise_multiplier;
    }
    r.sampling_mismatch = !r.poisson;
  } else {
    dp.noise_multiplier = 0;
  }
  dp.validate();
  return r;
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0, train_acc = 0;
  double test_loss = 0, test_acc = 0;
  double lr = 0;
  double wall_seconds = 0;  // not part of the deterministic CSV
};

struct PrivacyReport {
  double epsilon = 0;
  double delta = 0;
  double sigma = 0;
  double q = 0;
  std::size_t steps = 0;
  double best_order = 0;
  bool sampling_mismatch = false;
};

struct RunRecord {
  Json config;
  std::uint64_t seed = 0;
  std::vector<EpochMetrics> epochs;
  bool dp = false;
  PrivacyReport privacy;
  double final_train_acc = 0, final_test_acc = 0;
  double final_train_loss = 0, final_test_loss = 0;
  double total_wall_seconds = 0;

  Json to_json() const {
    Json j;
    j["schema"] = "dptrain-run v1";
    j["seed"] = seed;
    j["config"] = config;
    Json rows = Json::array();
    for (const EpochMetrics& e : epochs) {
      rows.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_acc", e.train_acc},
                      {"test_loss", e.test_loss},
                      {"test_acc", e.test_acc},
                      {"lr", e.lr},
                      {"wall_seconds", e.wall_seconds}});
    }
    j["epochs"] = rows;
    j["final"] = {{"train_acc", final_train_acc},
                  {"test_acc", final_test_acc},
                  {"train_loss", final_train_loss},
                  {"test_loss", final_test_loss}};
    if (dp) {
      Json p = {{"delta", privacy.delta},
                {"sigma", privacy.sigma},
                {"q", privacy.q},
                {"steps", privacy.steps},
                {"best_order", privacy.best_order},
                {"sampling_mismatch", privacy.sampling_mismatch}};
      if (std::isfinite(privacy.epsilon)) {
        p["epsilon"] = privacy.epsilon;
      } else {
        p["epsilon"] = "inf";
      }
      j["privacy"] = p;
    } else {
      j["privacy"] = nullptr;
    }
    j["total_wall_seconds"] = total_wall_seconds;
    return j;
  }
};

inline std::string metrics_csv(const RunRecord& rec) {
  std::string out = "# dptrain-csv metrics v1\n";
  out += "epoch,train_loss,train_acc,test_loss,test_acc,lr\n";
  for (const EpochMetrics& e : rec.epochs) {
    out += std::to_string(e.epoch) + "," + format_g17(e.train_loss) + "," +
           format_g17(e.train_acc) + "," + format_g17(e.test_loss) + "," +
           format_g17(e.test_acc) + "," + format_g17(e.lr) + "\n";
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "cannot open " + path + " for writing");
  os << body;
  os.close();
  check(bool(os), "failed writing " + path);
}

inline void write_run_artifacts(const ExperimentConfig& cfg,
                                const RunRecord& rec,
                                const std::string& stem = "run") {
  if (cfg.output_dir.empty()) return;
  std::filesystem::create_directories(cfg.output_dir);
  write_text_file(cfg.output_dir + "/" + stem + ".json",
                  rec.to_json().dump(2) + "\n");
  write_text_file(cfg.output_dir + "/" + stem + "_metrics.csv",
                  metrics_csv(rec));
}

// Trains `model` in place and returns the record. Evaluation is top-1 on the
// held-out test split; train metrics are computed on (a deterministic cap of)
// the train split each epoch.
inline RunRecord execute_run(Model<double>& model,
                             const Dataset<double>& train_ds,
                             const Dataset<double>& test_ds,
                             const ExperimentConfig& cfg,
                             const ResolvedRun& r) {
  using clock = std::chrono::steady_clock;
  const std::size_t n = train_ds.size();
  OptimizerState<double> state = OptimizerState<double>::init(model.params);
  Sampler sampler = r.poisson
                        ? Sampler::poisson(r.q, cfg.seed)
                        : Sampler::shuffled(r.dp.effective_batch(), cfg.seed);

  const auto make_graph = [&](const Minibatch<double>& mb) {
    LossGraph<double> lg = build_loss_graph(model, mb.x, mb.y);
    return std::pair<Graph<double>, typename Graph<double>::NodeId>(
        std::move(lg.graph), lg.losses);
  };

  const Dataset<double>* train_eval = &train_ds;
  Dataset<double> train_eval_store;
  if (r.eval_cap > 0 && r.eval_cap < n) {
    train_eval_store = detail::stratified_subset(train_ds, r.eval_cap);
    train_eval = &train_eval_store;
  }

  RunRecord rec;
  rec.config = cfg.to_json();
  rec.seed = cfg.seed;
  rec.dp = r.dp_enabled;

  const auto run_start = clock::now();
  for (std::size_t epoch = 1; epoch <= r.epochs; ++epoch) {
    const auto epoch_start = clock::now();
    for (std::size_t s = 0; s < r.steps_per_epoch; ++s) {
      const std::vector<std::size_t> idx = sampler.next_indices(n);
      // Spread the realized batch over the configured sub-batch count.
      const std::size_t vs = r.dp.virtual_steps;
      std::vector<Minibatch<double>> subs;
      subs.reserve(vs);
      const std::size_t base = idx.size() / vs, rem = idx.size() % vs;
      std::size_t at = 0;
      for (std::size_t v = 0; v < vs; ++v) {
        const std::size_t len = base + (v < rem ? 1 : 0);
        subs.push_back(gather(
            train_ds, std::vector<std::size_t>(idx.begin() + at,
                                               idx.begin() + at + len)));
        at += len;
      }
      if (r.dp_enabled) {
        dp_sgd_step(model.params, make_graph, subs, r.dp, state, r.path);
      } else {
        sgd_step(model.params, make_graph, subs, r.dp, state);
      }
    }
    const EvalResult<double> tr = evaluate(model, train_eval->x,
                                           train_eval->labels);
    const EvalResult<double> te = evaluate(model, test_ds.x, test_ds.labels);
    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = tr.loss;
    em.train_acc = tr.accuracy;
    em.test_loss = te.loss;
    em.test_acc = te.accuracy;
    em.lr = lr_at(state.step, r.dp);
    em.wall_seconds =
        std::chrono::duration<double>(clock::now() - epoch_start).count();
    rec.epochs.push_back(em);
  }
  rec.total_wall_seconds =
      std::chrono::duration<double>(clock::now() - run_start).count();

  const EpochMetrics& last = rec.epochs.back();
  rec.final_train_acc = last.train_acc;
  rec.final_test_acc = last.test_acc;
  rec.final_train_loss = last.train_loss;
  rec.final_test_loss = last.test_loss;

  if (r.dp_enabled) {
    const EpsilonResult er = compute_epsilon_full(
        r.dp.noise_multiplier, r.q, r.dp.total_steps, r.delta);
    rec.privacy.epsilon = er.epsilon;
    rec.privacy.best_order = er.best_order;
    rec.privacy.delta = r.delta;
    rec.privacy.sigma = r.dp.noise_multiplier;
    rec.privacy.q = r.q;
    rec.privacy.steps = r.dp.total_steps;
    rec.privacy.sampling_mismatch = r.sampling_mismatch;
  }
  return rec;
}

// cmd_train: load data, build the model, resolve the privacy budget, train,
// write artifacts.
inline RunRecord train_run(const ExperimentConfig& cfg,
                           Model<double>* model_out = nullptr) {
  const DataBundle data = load_for_config(cfg);
  Model<double> model = build_for_config(cfg, data.train);
  const ResolvedRun r = resolve_run(cfg, data.train.size());
  RunRecord rec = execute_run(model, data.train, data.test, cfg, r);
  write_run_artifacts(cfg, rec);
  if (!cfg.output_dir.empty()) {
    save_model_file(cfg.output_dir + "/model.ckpt", model);
  }
  if (model_out) *model_out = std::move(model);
  return rec;
}

// ---------------------------------------------------------------------------
// cmd_tune: the four-step procedure. Step 1 fixes the non-private reference
// learning rate, step 2 picks the smallest clip norm whose sigma=0 accuracy
// stays within `tolerance` of the unclipped reference, step 3 sweeps the
// learning rate under the privacy budget at that clip norm, step 4 optionally
// refines both on a local grid.

struct TuneCell {
  std::string phase;  // lr_pub | clip_sweep | lr_sweep | refine
  double clip_norm = 0;  // 0 = unclipped
  double lr = 0;
  double sigma = 0;
  double accuracy = 0;
  bool selected = false;
};

struct TuneResult {
  bool ok = false;
  std::string diagnostics;
  double alpha_pub = 0;
  double reference_accuracy = 0;
  double c_tilde = 0;
  double alpha_tilde = 0;
  double sigma = 0;
  double best_clip = 0;  // after optional refinement
  double best_lr = 0;
  double best_accuracy = 0;
  std::vector<TuneCell> cells;

  Json to_json() const {
    Json j;
    j["schema"] = "dptrain-tune v1";
    j["ok"] = ok;
    if (!ok) j["diagnostics"] = diagnostics;
    j["alpha_pub"] = alpha_pub;
    j["reference_accuracy"] = reference_accuracy;
    j["c_tilde"] = c_tilde;
    j["alpha_tilde"] = alpha_tilde;
    j["sigma"] = sigma;
    j["best_clip"] = best_clip;
    j["best_lr"] = best_lr;
    j["best_accuracy"] = best_accuracy;
    Json rows = Json::array();
    for (const TuneCell& c : cells) {
      rows.push_back({{"phase", c.phase},
                      {"clip_norm", c.clip_norm},
                      {"lr", c.lr},
                      {"sigma", c.sigma},
                      {"accuracy", c.accuracy},
                      {"selected", c.selected}});
    }
    j["cells"] = rows;
    return j;
  }
};

inline std::string tune_heatmap_csv(const TuneResult& t) {
  std::string out = "# dptrain-csv tune-heatmap v1\n";
  out += "phase,clip_norm,lr,sigma,accuracy,selected\n";
  for (const TuneCell& c : t.cells) {
    out += c.phase + "," + format_g17(c.clip_norm) + "," + format_g17(c.lr) +
           "," + format_g17(c.sigma) + "," + format_g17(c.accuracy) + "," +
           (c.selected ? "1" : "0") + "\n";
  }
  return out;
}

inline TuneResult tune_run(const ExperimentConfig& cfg) {
  check(!cfg.tune.clip_grid.empty(), "tune.clip_grid must be non-empty");
  check(cfg.tune.alpha_pub > 0 || !cfg.tune.lr_grid.empty(),
        "tune needs either tune.alpha_pub or a non-empty tune.lr_grid");
  check(cfg.privacy.enabled,
        "tune needs a privacy budget (privacy.enabled=true)");
  for (const double c : cfg.tune.clip_grid)
    check(c > 0, "tune.clip_grid entries must be positive");
  for (const double lr : cfg.tune.lr_grid)
    check(lr > 0, "tune.lr_grid entries must be positive");

  const DataBundle data = load_for_config(cfg);

  // One full training run per cell; every cell reuses the loaded data and a
  // freshly built model with the same seed.
  const auto run_cell = [&](bool dp_enabled, double clip, double sigma,
                            double lr) {
    ExperimentConfig cell = cfg;
    cell.output_dir.clear();
    cell.train.max_lr = lr;
    cell.privacy.enabled = dp_enabled;
    cell.privacy.epsilon = -1;
    if (dp_enabled) {
      cell.privacy.clip_norm = clip;
      cell.privacy.noise_multiplier = sigma;
    }
    Model<double> model = build_for_config(cell, data.train);
    const ResolvedRun r = resolve_run(cell, data.train.size());
    return execute_run(model, data.train, data.test, cell, r);
  };

  TuneResult t;

  // Step 1: the non-private reference learning rate and reference accuracy.
  if (cfg.tune.alpha_pub > 0) {
    t.alpha_pub = cfg.tune.alpha_pub;
    const RunRecord rec = run_cell(false, 0, 0, t.alpha_pub);
    t.reference_accuracy = rec.final_test_acc;
    t.cells.push_back(
        {"lr_pub", 0, t.alpha_pub, 0, rec.final_test_acc, true});
  } else {
    double best = -1;
    for (const double lr : cfg.tune.lr_grid) {
      const RunRecord rec = run_cell(false, 0, 0, lr);
      t.cells.push_back({"lr_pub", 0, lr, 0, rec.final_test_acc, false});
      if (rec.final_test_acc > best) {
        best = rec.final_test_acc;
        t.alpha_pub = lr;
      }
    }
    t.reference_accuracy = best;
    for (TuneCell& c : t.cells)
      if (c.phase == "lr_pub" && c.lr == t.alpha_pub) c.selected = true;
  }

  // Step 2: smallest clip norm that stays close to the unclipped reference
  // at sigma=0 and the reference learning rate.
  std::vector<double> clips = cfg.tune.clip_grid;
  std::sort(clips.begin(), clips.end());
  double c_tilde = -1;
  for (const double c : clips) {
    const RunRecord rec = run_cell(true, c, 0, t.alpha_pub);
    t.cells.push_back({"clip_sweep", c, t.alpha_pub, 0, rec.final_test_acc,
                       false});
    if (c_tilde < 0 &&
        rec.final_test_acc >= t.reference_accuracy - cfg.tune.tolerance) {
      c_tilde = c;
    }
  }
  if (c_tilde < 0) {
    t.ok = false;
    std::string diag =
        "no clip norm reached the reference accuracy " +
        format_g17(t.reference_accuracy) + " minus tolerance " +
        format_g17(cfg.tune.tolerance) + "; sigma=0 sweep:";
    for (const TuneCell& c : t.cells) {
      if (c.phase != "clip_sweep") continue;
      diag += " C=" + format_g17(c.clip_norm) + " acc=" +
              format_g17(c.accuracy) + ";";
    }
    diag += " consider larger clip norms or more epochs";
    t.diagnostics = diag;
    return t;
  }
  t.c_tilde = c_tilde;
  for (TuneCell& c : t.cells)
    if (c.phase == "clip_sweep" && c.clip_norm == c_tilde) c.selected = true;

  // Step 3: resolve sigma from the budget, sweep the learning rate at C~.
  {
    ExperimentConfig probe = cfg;
    probe.privacy.clip_norm = c_tilde;
    const ResolvedRun r = resolve_run(probe, data.train.size());
    t.sigma = r.dp.noise_multiplier;
  }
  check(!cfg.tune.lr_grid.empty(),
        "tune.lr_grid must be non-empty for the private sweep");
  double best_dp = -1;
  for (const double lr : cfg.tune.lr_grid) {
    const RunRecord rec = run_cell(true, c_tilde, t.sigma, lr);
    t.cells.push_back({"lr_sweep", c_tilde, lr, t.sigma, rec.final_test_acc,
                       false});
    if (rec.final_test_acc > best_dp) {
      best_dp = rec.final_test_acc;
      t.alpha_tilde = lr;
    }
  }
  for (TuneCell& c : t.cells)
    if (c.phase == "lr_sweep" && c.lr == t.alpha_tilde) c.selected = true;
  t.best_clip = t.c_tilde;
  t.best_lr = t.alpha_tilde;
  t.best_accuracy = best_dp;

  // Step 4: optional local refinement around (C~, alpha~).
  if (cfg.tune.refine) {
    for (const double fc : {0.5, 1.0, 2.0}) {
      for (const double fl : {0.5, 1.0, 2.0}) {
        if (fc == 1.0 && fl == 1.0) continue;  // already measured
        const double c = t.c_tilde * fc, lr = t.alpha_tilde * fl;
        const RunRecord rec = run_cell(true, c, t.sigma, lr);
        t.cells.push_back({"refine", c, lr, t.sigma, rec.final_test_acc,
                           false});
        if (rec.final_test_acc > t.best_accuracy) {
          t.best_accuracy = rec.final_test_acc;
          t.best_clip = c;
          t.best_lr = lr;
        }
      }
    }
    for (TuneCell& c : t.cells) {
      if (c.phase == "refine" && c.clip_norm == t.best_clip &&
          c.lr == t.best_lr) {
        c.selected = true;
      }
    }
  }

  t.ok = true;
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/tune.json", t.to_json().dump(2) + "\n");
    write_text_file(cfg.output_dir + "/tune_heatmap.csv", tune_heatmap_csv(t));
  }
  return t;
}

// ---------------------------------------------------------------------------
// cmd_fixed_eps_sweep: per epoch count, resolve sigma at the fixed budget
// (strictly increasing with epochs), inner learning rate sweep, report the
// best accuracy. All rows share the target epsilon within the solver
// tolerance.

struct SweepRow {
  std::size_t epochs = 0;
  double sigma = 0;
  double best_lr = 0;
  double accuracy = 0;
  double epsilon = 0;  // recomputed from sigma, q, steps
};

struct SweepResult {
  std::vector<SweepRow> rows;

  Json to_json() const {
    Json j;
    j["schema"] = "dptrain-fixed-eps-sweep v1";
    Json rows_json = Json::array();
    for (const SweepRow& r : rows) {
      rows_json.push_back({{"epochs", r.epochs},
                           {"sigma", r.sigma},
                           {"best_lr", r.best_lr},
                           {"accuracy", r.accuracy},
                           {"epsilon", r.epsilon}});
    }
    j["rows"] = rows_json;
    return j;
  }
};

inline std::string sweep_csv(const SweepResult& s) {
  std::string out = "# dptrain-csv fixed-eps-sweep v1\n";
  out += "epochs,sigma,best_lr,accuracy,epsilon\n";
  for (const SweepRow& r : s.rows) {
    out += std::to_string(r.epochs) + "," + format_g17(r.sigma) + "," +
           format_g17(r.best_lr) + "," + format_g17(r.accuracy) + "," +
           format_g17(r.epsilon) + "\n";
  }
  return out;
}

inline SweepResult fixed_eps_sweep(const ExperimentConfig& cfg) {
  check(cfg.privacy.enabled && cfg.privacy.epsilon > 0,
        "fixed-eps sweep needs privacy.enabled with an epsilon target");
  check(!cfg.sweep.epochs_grid.empty(), "sweep.epochs_grid must be non-empty");
  check(!cfg.tune.lr_grid.empty(),
        "fixed-eps sweep needs tune.lr_grid for the inner learning rate sweep");
  std::vector<std::size_t> grid = cfg.sweep.epochs_grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const DataBundle data = load_for_config(cfg);

  SweepResult out;
  double prev_sigma = -1;
  for (const std::size_t epochs : grid) {
    ExperimentConfig ecfg = cfg;
    ecfg.output_dir.clear();
    ecfg.train.epochs = epochs;
    const ResolvedRun probe = resolve_run(ecfg, data.train.size());
    check(probe.dp.noise_multiplier > prev_sigma,
          "resolved sigma is not strictly increasing with epochs");
    prev_sigma = probe.dp.noise_multiplier;

    SweepRow row;
    row.epochs = epochs;
    row.sigma = probe.dp.noise_multiplier;
    row.epsilon = compute_epsilon(probe.dp.noise_multiplier, probe.q,
                                  probe.dp.total_steps, probe.delta);
    double best = -1;
    for (const double lr : cfg.tune.lr_grid) {
      ExperimentConfig cell = ecfg;
      cell.train.max_lr = lr;
      cell.privacy.epsilon = -1;
      cell.privacy.noise_multiplier = probe.dp.noise_multiplier;
      Model<double> model = build_for_config(cell, data.train);
      const ResolvedRun r = resolve_run(cell, data.train.size());
      const RunRecord rec = execute_run(model, data.train, data.test, cell, r);
      if (rec.final_test_acc > best) {
        best = rec.final_test_acc;
        row.best_lr = lr;
      }
    }
    row.accuracy = best;
    out.rows.push_back(row);
  }
  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/sweep.json",
                    out.to_json().dump(2) + "\n");
    write_text_file(cfg.output_dir + "/sweep.csv", sweep_csv(out));
  }
  return out;
}

// ---------------------------------------------------------------------------
// cmd_finetune: phase 1 trains non-privately on the public side of the
// split; phase 2 reinitializes the head, freezes the configured prefix, and
// DP-trains on the private side. The privacy report covers phase 2 only.

struct FinetuneResult {
  RunRecord pretrain;
  RunRecord finetune;
  Model<double> model;
};

inline FinetuneResult finetune_run(const ExperimentConfig& cfg) {
  check(cfg.data.split_fraction > 0 && cfg.data.split_fraction < 1,
        "finetune needs data.split_fraction in (0,1)");
  check(cfg.privacy.enabled, "finetune needs privacy.enabled for phase 2");

  ExperimentConfig pre_cfg = cfg;
  pre_cfg.output_dir.clear();
  pre_cfg.data.split_side = "public";
  pre_cfg.privacy.enabled = false;
  pre_cfg.train.epochs = cfg.finetune.pretrain_epochs;
  if (cfg.finetune.pretrain_lr > 0) {
    pre_cfg.train.max_lr = cfg.finetune.pretrain_lr;
  }
  pre_cfg.train.warmup_steps = -1;  // re-derive for the phase length
  const DataBundle pub = load_for_config(pre_cfg);
  Model<double> model = build_for_config(pre_cfg, pub.train);
  const ResolvedRun pre_r = resolve_run(pre_cfg, pub.train.size());
  FinetuneResult out;
  out.pretrain = execute_run(model, pub.train, pub.test, pre_cfg, pre_r);

  // Head surgery and freezing between the phases.
  replace_head(model, cfg.seed ^ cfg.finetune.head_seed);
  const std::size_t prefix =
      cfg.finetune.freeze_prefix >= 0
          ? static_cast<std::size_t>(cfg.finetune.freeze_prefix)
          : model.max_freeze_prefix();
  apply_freeze(model, FreezePlan{prefix});

  ExperimentConfig fin_cfg = cfg;
  fin_cfg.output_dir.clear();
  fin_cfg.data.split_side = "private";
  const DataBundle prv = load_for_config(fin_cfg);
  const ResolvedRun fin_r = resolve_run(fin_cfg, prv.train.size());
  out.finetune = execute_run(model, prv.train, prv.test, fin_cfg, fin_r);

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_run_artifacts(cfg, out.pretrain, "pretrain");
    write_run_artifacts(cfg, out.finetune, "finetune");
    save_model_file(cfg.output_dir + "/model.ckpt", model);
  }
  out.model = std::move(model);
  return out;
}

// ---------------------------------------------------------------------------
// cmd_bench: mean epoch wall time for plain SGD, the fast DP path, and the
// naive DP path, on identical data, batches, and initialization. Warmup
// epochs are excluded from the means. Also verifies both DP paths produce
// the same update on the first step.

struct BenchResult {
  double nonprivate_seconds = 0;
  double dp_fast_seconds = 0;
  double dp_naive_seconds = 0;
  double fast_vs_nonprivate = 0;
  double naive_vs_fast = 0;
  double naive_vs_nonprivate = 0;
  double update_max_abs_diff = 0;
  std::size_t batch_size = 0;
  std::size_t params = 0;

  Json to_json() const {
    return Json{{"schema", "dptrain-bench v1"},
                {"batch_size", batch_size},
                {"params", params},
                {"mean_epoch_seconds",
                 {{"nonprivate", nonprivate_seconds},
                  {"dp_fast", dp_fast_seconds},
                  {"dp_naive", dp_naive_seconds}}},
                {"ratios",
                 {{"fast_vs_nonprivate", fast_vs_nonprivate},
                  {"naive_vs_fast", naive_vs_fast},
                  {"naive_vs_nonprivate", naive_vs_nonprivate}}},
                {"update_max_abs_diff", update_max_abs_diff}};
  }
};

inline BenchResult bench_run(const ExperimentConfig& cfg) {
  check(cfg.bench.warmup_epochs < cfg.bench.epochs,
        "bench.warmup_epochs must leave at least one measured epoch");
  const DataBundle data = load_for_config(cfg);

  ExperimentConfig base = cfg;
  base.output_dir.clear();
  base.train.epochs = cfg.bench.epochs;
  base.privacy.epsilon = -1;
  if (base.privacy.noise_multiplier < 0) base.privacy.noise_multiplier = 1.0;

  struct ModeSpec {
    bool dp;
    ClipPath path;
  };
  const auto time_mode = [&](const ModeSpec mode) {
    ExperimentConfig mc = base;
    mc.privacy.enabled = mode.dp;
    mc.privacy.clip_path = mode.path == ClipPath::kFast ? "fast" : "naive";
    Model<double> model = build_for_config(mc, data.train);
    const ResolvedRun r = resolve_run(mc, data.train.size());
    RunRecord rec = execute_run(model, data.train, data.test, mc, r);
    double sum = 0;
    std::size_t counted = 0;
    for (std::size_t e = cfg.bench.warmup_epochs; e < rec.epochs.size(); ++e) {
      sum += rec.epochs[e].wall_seconds;
      ++counted;
    }
    return sum / static_cast<double>(counted);
  };

  BenchResult out;
  out.batch_size = cfg.train.batch_size;
  out.nonprivate_seconds = time_mode({false, ClipPath::kFast});
  out.dp_fast_seconds = time_mode({true, ClipPath::kFast});
  out.dp_naive_seconds = time_mode({true, ClipPath::kNaive});
  out.fast_vs_nonprivate = out.dp_fast_seconds / out.nonprivate_seconds;
  out.naive_vs_fast = out.dp_naive_seconds / out.dp_fast_seconds;
  out.naive_vs_nonprivate = out.dp_naive_seconds / out.nonprivate_seconds;

  // Single-step equivalence of the two DP paths on identical state.
  {
    ExperimentConfig mc = base;
    mc.privacy.enabled = true;
    const ResolvedRun r = resolve_run(mc, data.train.size());
    std::vector<double> params_after[2];
    for (int which = 0; which < 2; ++which) {
      Model<double> model = build_for_config(mc, data.train);
      out.params = model.params.trainable_size();
      OptimizerState<double> state =
          OptimizerState<double>::init(model.params);
      Sampler sampler = Sampler::shuffled(r.dp.effective_batch(), cfg.seed);
      const std::vector<std::size_t> idx =
          sampler.next_indices(data.train.size());
      std::vector<Minibatch<double>> subs;
      const std::size_t vs = r.dp.virtual_steps;
      const std::size_t base_len = idx.size() / vs, rem = idx.size() % vs;
      std::size_t at = 0;
      for (std::size_t v = 0; v < vs; ++v) {
        const std::size_t len = base_len + (v < rem ? 1 : 0);
        subs.push_back(gather(
            data.train, std::vector<std::size_t>(idx.begin() + at,
                                                 idx.begin() + at + len)));
        at += len;
      }
      const auto make_graph = [&](const Minibatch<double>& mb) {
        LossGraph<double> lg = build_loss_graph(model, mb.x, mb.y);
        return std::pair<Graph<double>, typename Graph<double>::NodeId>(
            std::move(lg.graph), lg.losses);
      };
      dp_sgd_step(model.params, make_graph, subs, r.dp, state,
                  which == 0 ? ClipPath::kFast : ClipPath::kNaive);
      params_after[which] = model.params.flatten_trainable();
    }
    double m = 0;
    for (std::size_t i = 0; i < params_after[0].size(); ++i) {
      m = std::max(m, std::fabs(params_after[0][i] - params_after[1][i]));
    }
    out.update_max_abs_diff = m;
  }

  if (!cfg.output_dir.empty()) {
    std::filesystem::create_directories(cfg.output_dir);
    write_text_file(cfg.output_dir + "/bench.json",
                    out.to_json().dump(2) + "\n");
  }
  return out;
}

}  // namespace dptrain
