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

// Release gate. Each group prints one line per criterion:
//
//   [C07] PASS post-clip per-example norm never exceeds C (...)
//
// and the binary exits 0 only if every criterion in the group passed.
// The CIFAR-10 group exits 77 when the dataset is not installed.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dptrain/accountant.hpp"
#include "dptrain/harness.hpp"

namespace dptrain {
namespace {

int failures = 0;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

void report(int num, bool pass, const std::string& desc,
            const std::string& detail = "") {
  std::string line = "[C";
  if (num < 10) line += "0";
  line += std::to_string(num) + "] " + (pass ? "PASS" : "FAIL") + " " + desc;
  if (!detail.empty()) line += " (" + detail + ")";
  std::puts(line.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

bool within(double got, double want, double rel) {
  return std::isfinite(got) && std::fabs(got - want) <= rel * std::fabs(want);
}

Tensor<double> random_tensor(const std::vector<std::size_t>& shape,
                             std::uint64_t stream, double scl = 1.0) {
  const CounterRng rng(4242, derive_stream(rng_stream::kTest, stream));
  Tensor<double> t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scl * rng.gaussian(i);
  return t;
}

double l2(const std::vector<double>& v) {
  double s = 0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a[i] - b[i]));
  }
  return m;
}

// ---------------------------------------------------------------------------
// accountant

void run_accountant() {
  {
    const double e1 = compute_epsilon(0.5, 0.01, 10000, 1e-5);
    const double e2 = compute_epsilon(1.5, 0.01, 10000, 1e-5);
    const double e3 = compute_epsilon(3.5, 0.01, 10000, 1e-5);
    const bool ok = within(e1, 47.41, 0.10) && within(e2, 3.45, 0.10) &&
                    within(e3, 1.20, 0.10);
    report(1, ok, "epsilon anchors at sigma 0.5/1.5/3.5, q=0.01, T=1e4",
           "got " + fmt(e1) + " / " + fmt(e2) + " / " + fmt(e3));
  }
  {
    const double q = 1024.0 / 1281167.0;
    const std::size_t steps = 12510;
    const double a = compute_epsilon(0.56, q, steps, 1e-6);
    const double b = compute_epsilon(0.42, q, steps, 1e-6);
    const double c = compute_epsilon(0.28, q, steps, 1e-6);
    const double d = compute_epsilon(2.8e-2, q, steps, 1e-6);
    const bool ok = within(a, 4.6, 0.10) && within(b, 13.2, 0.10) &&
                    within(c, 71.0, 0.10) && std::isfinite(d) && d > 1e6 &&
                    d < 1e8;
    report(2, ok,
           "large-corpus epsilon anchors and a large finite budget at tiny "
           "sigma",
           "got " + fmt(a) + " / " + fmt(b) + " / " + fmt(c) + " / " + fmt(d));
  }
  {
    const double q = 0.01, delta = 1e-6;
    const std::size_t steps = 2000;
    const CounterRng rng(515, derive_stream(rng_stream::kTest, 3));
    std::vector<double> targets;
    for (int i = 0; i < 50; ++i) {
      const double u = rng.uniform(static_cast<std::uint64_t>(i));
      targets.push_back(std::exp(std::log(0.1) +
                                 u * (std::log(50.0) - std::log(0.1))));
    }
    std::sort(targets.begin(), targets.end());
    bool ok = true;
    std::string detail = "50 round-trips within 1e-3";
    double prev_sigma = std::numeric_limits<double>::infinity();
    double worst = 0;
    for (const double target : targets) {
      const double sigma = find_noise_multiplier(target, q, steps, delta);
      const double back = compute_epsilon(sigma, q, steps, delta);
      worst = std::max(worst, std::fabs(back - target) / target);
      if (std::fabs(back - target) / target >= 1e-3) {
        ok = false;
        detail = "target " + fmt(target) + " came back as " + fmt(back);
        break;
      }
      if (!(sigma < prev_sigma)) {
        ok = false;
        detail = "sigma not strictly decreasing at target " + fmt(target);
        break;
      }
      prev_sigma = sigma;
    }
    if (ok) detail += ", worst rel err " + fmt(worst);
    report(3, ok, "noise search inverts the accountant, monotone in the target",
           detail);
  }
  {
    const std::vector<std::size_t> batches = {1024,   4096,   16384,
                                              65536,  262144, 1048576};
    const auto rows =
        batch_scaling_curve(0.56, 1024, 1281167, 12510, 1e-6, batches);
    bool ok = rows.size() == batches.size();
    std::string got;
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) {
      if (!got.empty()) got += " ";
      got += fmt(r.epsilon);
      ok = ok && std::isfinite(r.epsilon) && r.epsilon < prev;
      prev = r.epsilon;
    }
    report(4, ok,
           "epsilon strictly improves as batch grows at fixed noise/batch "
           "and steps",
           "eps " + got);
  }
}

// ---------------------------------------------------------------------------
// clipping

Model<double> random_case_model(int trial, std::uint64_t seed, bool conv) {
  if (conv) {
    ArchSpec spec = parse_arch_spec(trial % 4 == 1 ? "4(1)-8" : "4(2)-6(1)-8");
    spec.activation = trial % 3 == 0 ? Activation::kRelu : Activation::kTanh;
    if (trial % 8 == 1) spec.group_norm_groups = 2;
    return build_convnet<double>(spec, {2, 8, 8}, 3, seed);
  }
  const std::vector<std::size_t> hidden =
      trial % 4 == 2 ? std::vector<std::size_t>{5, 4}
                     : std::vector<std::size_t>{5};
  return build_mlp<double>(6, hidden, 3,
                           trial % 4 == 0 ? Activation::kRelu
                                          : Activation::kTanh,
                           seed);
}

void run_clipping() {
  {
    bool ok = true;
    std::string detail;
    double worst = 0;
    for (int trial = 0; trial < 100 && ok; ++trial) {
      const bool conv = trial % 2 == 1;
      const std::uint64_t seed = 9000 + static_cast<std::uint64_t>(trial);
      Model<double> model = random_case_model(trial, seed, conv);
      const std::size_t bsz = 2 + static_cast<std::size_t>(trial % 4);
      const std::vector<std::size_t> xshape =
          conv ? std::vector<std::size_t>{bsz, 2, 8, 8}
               : std::vector<std::size_t>{bsz, 6};
      const Tensor<double> x =
          random_tensor(xshape, 700 + static_cast<std::uint64_t>(trial));
      std::vector<int> labels(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        labels[i] = static_cast<int>((i * 7 + trial) % 3);
      }
      const CounterRng rng(seed, derive_stream(rng_stream::kTest, 77));
      const double c =
          std::exp(std::log(0.05) +
                   rng.uniform(0) * (std::log(5.0) - std::log(0.05)));

      LossGraph<double> fast_g = build_loss_graph(model, x, labels);
      const std::vector<double> fast = clipped_grad_sum(
          fast_g.graph, fast_g.losses, c, ClipPath::kFast);
      LossGraph<double> naive_g = build_loss_graph(model, x, labels);
      const std::vector<double> naive = clipped_grad_sum(
          naive_g.graph, naive_g.losses, c, ClipPath::kNaive);
      const double diff = max_abs_diff(fast, naive);
      worst = std::max(worst, diff);
      if (diff > 1e-10) {
        ok = false;
        detail = "trial " + std::to_string(trial) + " diff " + fmt(diff);
      }
    }
    if (ok) detail = "100 cases, worst diff " + fmt(worst);
    report(5, ok,
           "fast clipped gradient sum equals the per-example oracle on random "
           "models",
           detail);
  }
  {
    // Finite differences over every trainable coordinate, per kernel family.
    double worst = 0;
    std::string worst_where = "none";
    const auto check_graph = [&](const std::string& name,
                                 ParamTree<double>& params, Graph<double>& g,
                                 Graph<double>::NodeId losses) {
      const std::size_t b = g.value(losses).dim(0);
      const std::vector<double> analytic = weighted_backward(
          g, losses, std::vector<double>(b, 1.0));
      const double h = 1e-5;
      std::size_t off = 0;
      for (std::size_t e = 0; e < params.size(); ++e) {
        ParamEntry<double>& ent = params.entry(e);
        if (!ent.trainable) continue;
        for (std::size_t k = 0; k < ent.value.size(); ++k) {
          const double orig = ent.value[k];
          ent.value[k] = orig + h;
          g.recompute();
          double up = 0;
          for (std::size_t i = 0; i < b; ++i) up += g.value(losses)[i];
          ent.value[k] = orig - h;
          g.recompute();
          double dn = 0;
          for (std::size_t i = 0; i < b; ++i) dn += g.value(losses)[i];
          ent.value[k] = orig;
          const double fd = (up - dn) / (2 * h);
          const double an = analytic[off + k];
          const double rel = std::fabs(fd - an) /
                             std::max({1.0, std::fabs(fd), std::fabs(an)});
          if (rel > worst) {
            worst = rel;
            worst_where = name;
          }
        }
        off += ent.value.size();
      }
      g.recompute();
    };

    {  // dense + bias + tanh
      ParamTree<double> p;
      const std::size_t w1 = p.add("w1", random_tensor({4, 6}, 20, 0.5));
      const std::size_t b1 = p.add("b1", random_tensor({6}, 21, 0.2));
      const std::size_t w2 = p.add("w2", random_tensor({6, 3}, 22, 0.5));
      const std::size_t b2 = p.add("b2", random_tensor({3}, 23, 0.2));
      Graph<double> g(&p);
      const auto x = g.input(random_tensor({5, 4}, 24));
      const auto h1 = g.tanh(g.dense(x, g.param(w1), g.param(b1)));
      const auto logits = g.dense(h1, g.param(w2), g.param(b2));
      const auto losses =
          g.softmax_cross_entropy(logits, {0, 2, 1, 2, 0});
      check_graph("dense/tanh", p, g, losses);
    }
    {  // relu
      ParamTree<double> p;
      const std::size_t w1 = p.add("w1", random_tensor({4, 6}, 30, 0.5));
      const std::size_t b1 = p.add("b1", random_tensor({6}, 31, 0.3));
      const std::size_t w2 = p.add("w2", random_tensor({6, 3}, 32, 0.5));
      Graph<double> g(&p);
      const auto x = g.input(random_tensor({5, 4}, 34));
      const auto h1 = g.relu(g.dense(x, g.param(w1), g.param(b1)));
      const auto logits = g.dense(h1, g.param(w2), Graph<double>::NodeId(-1));
      const auto losses =
          g.softmax_cross_entropy(logits, {1, 0, 2, 1, 1});
      check_graph("dense/relu", p, g, losses);
    }
    {  // conv + bias + pool + flatten + dense
      ParamTree<double> p;
      const std::size_t cw = p.add("cw", random_tensor({3, 2, 3, 3}, 40, 0.4));
      const std::size_t cb = p.add("cb", random_tensor({3}, 41, 0.2));
      const std::size_t fw = p.add("fw", random_tensor({27, 4}, 42, 0.4));
      const std::size_t fb = p.add("fb", random_tensor({4}, 43, 0.2));
      Graph<double> g(&p);
      const auto x = g.input(random_tensor({2, 2, 6, 6}, 44));
      const auto c1 = g.tanh(g.conv2d(x, g.param(cw), g.param(cb), 1, 1));
      const auto pooled = g.max_pool2d(c1, 2, 2);
      const auto flat = g.flatten(pooled);
      const auto logits = g.dense(flat, g.param(fw), g.param(fb));
      const auto losses = g.softmax_cross_entropy(logits, {3, 1});
      check_graph("conv/pool", p, g, losses);
    }
    {  // conv + group norm
      ParamTree<double> p;
      const std::size_t cw = p.add("cw", random_tensor({4, 2, 3, 3}, 50, 0.4));
      const std::size_t gg = p.add("gg", random_tensor({4}, 51, 0.1));
      const std::size_t gb = p.add("gb", random_tensor({4}, 52, 0.1));
      const std::size_t fw = p.add("fw", random_tensor({64, 3}, 53, 0.3));
      for (std::size_t k = 0; k < 4; ++k) p.entry(gg).value[k] += 1.0;
      Graph<double> g(&p);
      const auto x = g.input(random_tensor({2, 2, 4, 4}, 54));
      const auto c1 = g.conv2d(x, g.param(cw), Graph<double>::NodeId(-1), 1, 1);
      const auto gn =
          g.group_norm(c1, g.param(gg), g.param(gb), 2, 1e-5);
      const auto flat = g.flatten(g.tanh(gn));
      const auto logits = g.dense(flat, g.param(fw), Graph<double>::NodeId(-1));
      const auto losses = g.softmax_cross_entropy(logits, {2, 0});
      check_graph("group_norm", p, g, losses);
    }
    {  // elementwise add/mul/scale
      ParamTree<double> p;
      const std::size_t w1 = p.add("w1", random_tensor({4, 3}, 60, 0.5));
      const std::size_t b1 = p.add("b1", random_tensor({3}, 61, 0.2));
      Graph<double> g(&p);
      const auto x = g.input(random_tensor({5, 4}, 62));
      const auto h = g.dense(x, g.param(w1), g.param(b1));
      const auto logits = g.scale(g.add(g.mul(h, h), h), 0.5);
      const auto losses =
          g.softmax_cross_entropy(logits, {0, 1, 2, 1, 0});
      check_graph("elementwise", p, g, losses);
    }
    report(6, worst < 1e-6,
           "per-example gradients match central finite differences on every "
           "kernel",
           "worst rel err " + fmt(worst) + " in " + worst_where);
  }
  {
    const CounterRng rng(616, derive_stream(rng_stream::kTest, 7));
    bool ok = true;
    std::string detail = "1e4 trials";
    std::uint64_t ctr = 0;
    for (int trial = 0; trial < 10000 && ok; ++trial) {
      const std::size_t dim = 1 + static_cast<std::size_t>(
                                      rng.uniform(ctr++) * 63.0);
      const double scl = std::exp(std::log(1e-3) +
                                  rng.uniform(ctr++) *
                                      (std::log(1e3) - std::log(1e-3)));
      const double c = std::exp(std::log(1e-3) +
                                rng.uniform(ctr++) *
                                    (std::log(1e2) - std::log(1e-3)));
      std::vector<double> v(dim);
      for (std::size_t i = 0; i < dim; ++i) {
        v[i] = scl * rng.gaussian(ctr++);
      }
      const std::vector<double> clipped = clip(v, c);
      if (l2(clipped) > c + 1e-12) {
        ok = false;
        detail = "trial " + std::to_string(trial) + " norm " +
                 fmt(l2(clipped)) + " > C " + fmt(c);
      }
      if (l2(v) <= c && clipped != v) {
        ok = false;
        detail = "short vector modified at trial " + std::to_string(trial);
      }
    }
    report(7, ok, "post-clip per-example norm never exceeds C", detail);
  }
  {
    bool ok = true;
    std::string detail;
    double worst = 0;
    const std::size_t bsz = 5;
    for (const bool conv : {false, true}) {
      Model<double> model = random_case_model(conv ? 1 : 2, 313, conv);
      const std::vector<std::size_t> xshape =
          conv ? std::vector<std::size_t>{bsz, 2, 8, 8}
               : std::vector<std::size_t>{bsz, 6};
      const Tensor<double> x = random_tensor(xshape, 80);
      const Tensor<double> base = predict_logits(model, x);
      const std::size_t row = x.size() / bsz;
      const std::size_t cls = base.size() / bsz;
      for (std::size_t i = 0; i < bsz; ++i) {
        Tensor<double> poked = x;
        const Tensor<double> other =
            random_tensor(xshape, 81 + i, 3.0);
        for (std::size_t j = 0; j < bsz; ++j) {
          if (j == i) continue;
          std::copy(other.data() + j * row, other.data() + (j + 1) * row,
                    poked.data() + j * row);
        }
        const Tensor<double> out = predict_logits(model, poked);
        for (std::size_t k = 0; k < cls; ++k) {
          worst = std::max(worst, std::fabs(out[i * cls + k] -
                                            base[i * cls + k]));
        }
      }
    }
    ok = worst <= 1e-10;
    detail = "worst logit shift " + fmt(worst);
    report(11, ok,
           "forward outputs per example ignore the rest of the batch, "
           "including group norm",
           detail);
  }
}

// ---------------------------------------------------------------------------
// noise

void run_noise() {
  const double sigma = 1.3, c = 1.7;
  const std::size_t n = 1000000;
  bool ok = true;
  std::string detail;
  for (const int shards : {1, 8}) {
    std::vector<double> g(n, 0.0);
    add_noise(g, c, sigma, shards, NoiseKey{77, 5});
    double mean = 0;
    for (const double v : g) mean += v;
    mean /= static_cast<double>(n);
    double var = 0;
    for (const double v : g) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n - 1);
    const double want = (sigma * c) * (sigma * c);
    if (!detail.empty()) detail += ", ";
    detail += "k=" + std::to_string(shards) + " var " + fmt(var) + " vs " +
              fmt(want);
    ok = ok && std::fabs(var - want) <= 0.01 * want;
  }
  report(9, ok,
         "noise variance over 1e6 coordinates matches (sigma*C)^2 within 1% "
         "for 1 and 8 shards",
         detail);
}

// ---------------------------------------------------------------------------
// steps

void run_steps() {
  {
    // One step over 4x256 accumulated sub-batches vs one 1024 batch.
    const std::size_t n = 1024, d = 12;
    const Tensor<double> x = random_tensor({n, d}, 90);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 3);
    Dataset<double> ds;
    ds.name = "virtual";
    ds.x = x;
    ds.labels = labels;
    ds.num_classes = 3;

    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;

    const auto run_variant = [&](std::size_t batch, std::size_t vsteps) {
      Model<double> model =
          build_mlp<double>(d, {8}, 3, Activation::kTanh, 55);
      DpSgdConfig<double> cfg;
      cfg.clip_norm = 0.4;
      cfg.noise_multiplier = 0;
      cfg.batch_size = batch;
      cfg.virtual_steps = vsteps;
      cfg.max_lr = 0.3;
      cfg.lr_shape = LrShape::kConstant;
      cfg.warmup_steps = 0;
      cfg.total_steps = 1;
      cfg.seed = 55;
      OptimizerState<double> state = OptimizerState<double>::init(model.params);
      std::vector<Minibatch<double>> subs;
      for (std::size_t v = 0; v < vsteps; ++v) {
        subs.push_back(gather(
            ds, std::vector<std::size_t>(all.begin() + v * batch,
                                         all.begin() + (v + 1) * batch)));
      }
      const auto make_graph = [&](const Minibatch<double>& mb) {
        LossGraph<double> lg = build_loss_graph(model, mb.x, mb.y);
        return std::pair<Graph<double>, Graph<double>::NodeId>(
            std::move(lg.graph), lg.losses);
      };
      dp_sgd_step(model.params, make_graph, subs, cfg, state);
      return model.params.flatten_trainable();
    };

    const double diff = max_abs_diff(run_variant(256, 4), run_variant(1024, 1));
    report(8, diff <= 1e-12,
           "4x256 virtual accumulation equals one 1024 batch at sigma=0",
           "max update diff " + fmt(diff));
  }
  {
    // (C, lr) vs (C/5, 5 lr) with shared noise draws in the fully-clipped
    // regime.
    const std::size_t n = 64, d = 10;
    const Tensor<double> x = random_tensor({n, d}, 95, 2.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
    Dataset<double> ds;
    ds.name = "invariance";
    ds.x = x;
    ds.labels = labels;
    ds.num_classes = 2;
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    const Minibatch<double> mb = gather(ds, all);

    bool always_clipped = true;
    const auto run_variant = [&](double clip_norm, double lr) {
      Model<double> model = build_logreg<double>(d, 2, 77);
      DpSgdConfig<double> cfg;
      cfg.clip_norm = clip_norm;
      cfg.noise_multiplier = 1.0;
      cfg.batch_size = n;
      cfg.max_lr = lr;
      cfg.lr_shape = LrShape::kConstant;
      cfg.warmup_steps = 0;
      cfg.total_steps = 50;
      cfg.seed = 77;
      OptimizerState<double> state = OptimizerState<double>::init(model.params);
      const auto make_graph = [&](const Minibatch<double>& batch) {
        LossGraph<double> lg = build_loss_graph(model, batch.x, batch.y);
        return std::pair<Graph<double>, Graph<double>::NodeId>(
            std::move(lg.graph), lg.losses);
      };
      for (int s = 0; s < 50; ++s) {
        const StepInfo<double> info =
            dp_sgd_step(model.params, make_graph, {mb}, cfg, state);
        always_clipped = always_clipped && info.fraction_clipped == 1.0;
      }
      return model.params.flatten_trainable();
    };

    const std::vector<double> a = run_variant(1e-3, 0.4);
    const std::vector<double> b = run_variant(1e-3 / 5.0, 5.0 * 0.4);
    const double diff = max_abs_diff(a, b);
    report(10, always_clipped && diff <= 1e-8,
           "learning-rate/clip-norm product fixes the trajectory when every "
           "gradient clips",
           always_clipped ? "max param diff over 50 steps " + fmt(diff)
                          : "a gradient fell below the clip norm");
  }
}

// ---------------------------------------------------------------------------
// train_synth

void run_train_synth() {
  ExperimentConfig cfg;
  cfg.seed = 7;
  cfg.model.kind = "logreg";
  cfg.data.source = "synth";
  cfg.data.synth.n = 10000;
  cfg.data.synth.d = 20;
  cfg.data.synth.classes = 2;
  cfg.data.synth.separation = 10.0;
  cfg.data.synth.test_n = 2000;
  cfg.train.epochs = 4;
  cfg.train.batch_size = 500;
  cfg.train.max_lr = 0.5;
  cfg.train.lr_shape = "constant";
  cfg.train.warmup_steps = 0;
  cfg.privacy.enabled = true;
  cfg.privacy.epsilon = 10.0;
  cfg.privacy.delta = 1e-6;
  cfg.privacy.clip_norm = 1.0;

  const RunRecord rec = train_run(cfg);
  const bool ok = rec.final_test_acc >= 0.95 && rec.privacy.epsilon <= 10.01;
  report(13, ok,
         "private logistic regression reaches 95% on separable synthetic "
         "data at epsilon=10",
         "test acc " + fmt(rec.final_test_acc) + ", eps " +
             fmt(rec.privacy.epsilon) + ", sigma " + fmt(rec.privacy.sigma));
}

// ---------------------------------------------------------------------------
// train_cifar

int run_train_cifar() {
  const char* env = std::getenv("DPTRAIN_DATA_DIR");
  const std::string root =
      (env && *env ? std::string(env) : std::string("/root/data")) +
      "/cifar10";
  bool have = true;
  std::vector<std::string> bases;
  for (int i = 1; i <= 5; ++i) {
    bases.push_back("data_batch_" + std::to_string(i) + ".bin");
  }
  bases.push_back("test_batch.bin");
  for (const std::string& base : bases) {
    have = have && (std::filesystem::exists(root + "/" + base) ||
                    std::filesystem::exists(root + "/" + base + ".gz"));
  }
  if (!have) {
    std::printf(
        "[C12] SKIP non-private convnet on CIFAR-10 (dataset not found "
        "under %s)\n",
        root.c_str());
    return 77;
  }

  ExperimentConfig cfg;
  cfg.seed = 3;
  cfg.model.kind = "convnet";
  cfg.model.arch = "32(2)-64(2)-128(2)-128";
  cfg.model.activation = "tanh";
  cfg.data.source = "cifar10";
  cfg.data.dir = root;
  cfg.train.epochs = 20;
  cfg.train.batch_size = 128;
  cfg.train.max_lr = 0.05;
  cfg.train.lr_shape = "cosine";
  cfg.train.eval_cap = 2000;

  const RunRecord rec = train_run(cfg);
  report(12, rec.final_test_acc >= 0.70,
         "non-private 32(2)-64(2)-128(2)-128 convnet reaches 70% on CIFAR-10 "
         "in 20 epochs",
         "test acc " + fmt(rec.final_test_acc));
  return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// finetune

void run_finetune() {
  bool ok = true;
  std::string detail;
  for (const std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.model.kind = "mlp";
    cfg.model.arch = "16";
    cfg.data.source = "synth";
    cfg.data.synth.n = 4000;
    cfg.data.synth.d = 16;
    cfg.data.synth.classes = 4;
    cfg.data.synth.separation = 2.5;
    cfg.data.synth.test_n = 1000;
    cfg.data.split_fraction = 0.5;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 200;
    cfg.train.max_lr = 0.5;
    cfg.train.lr_shape = "constant";
    cfg.train.warmup_steps = 0;
    cfg.privacy.enabled = true;
    cfg.privacy.noise_multiplier = 8.0;
    cfg.privacy.clip_norm = 1.0;
    cfg.privacy.delta = 1e-6;
    cfg.finetune.pretrain_epochs = 6;

    const FinetuneResult ft = finetune_run(cfg);

    ExperimentConfig scratch_cfg = cfg;
    scratch_cfg.data.split_side = "private";
    const RunRecord scratch = train_run(scratch_cfg);

    if (!detail.empty()) detail += ", ";
    detail += "seed " + std::to_string(seed) + ": " +
              fmt(ft.finetune.final_test_acc) + " vs " +
              fmt(scratch.final_test_acc);
    ok = ok && ft.finetune.final_test_acc > scratch.final_test_acc &&
         ft.finetune.privacy.steps == scratch.privacy.steps;
  }
  report(14, ok,
         "private finetune beats private from-scratch on the same split and "
         "budget across 3 seeds",
         detail);
}

// ---------------------------------------------------------------------------
// bench

void run_bench() {
  ExperimentConfig cfg;
  cfg.seed = 5;
  cfg.model.kind = "mlp";
  cfg.model.arch = "128";
  cfg.data.source = "synth";
  cfg.data.synth.n = 4096;
  cfg.data.synth.d = 784;
  cfg.data.synth.classes = 10;
  cfg.data.synth.separation = 4.0;
  cfg.data.synth.test_n = 512;
  cfg.train.batch_size = 256;
  cfg.train.eval_cap = 512;
  cfg.privacy.noise_multiplier = 1.0;
  cfg.privacy.clip_norm = 1.0;
  cfg.bench.epochs = 3;
  cfg.bench.warmup_epochs = 1;

  const BenchResult b = bench_run(cfg);
  const bool ok = b.fast_vs_nonprivate <= 3.0 && b.naive_vs_fast > 1.0 &&
                  b.update_max_abs_diff <= 1e-8;
  report(15, ok,
         "fast DP epoch within 3x of non-private and ahead of the naive path "
         "at batch 256",
         "fast/nonprivate " + fmt(b.fast_vs_nonprivate) + ", naive/fast " +
             fmt(b.naive_vs_fast) + ", update diff " +
             fmt(b.update_max_abs_diff));
}

}  // namespace
}  // namespace dptrain

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr,
                 "usage: acceptance "
                 "{accountant|clipping|noise|steps|train_synth|train_cifar|"
                 "finetune|bench}\n");
    return 2;
  }
  const std::string group = argv[1];
  try {
    if (group == "accountant") {
      dptrain::run_accountant();
    } else if (group == "clipping") {
      dptrain::run_clipping();
    } else if (group == "noise") {
      dptrain::run_noise();
    } else if (group == "steps") {
      dptrain::run_steps();
    } else if (group == "train_synth") {
      dptrain::run_train_synth();
    } else if (group == "train_cifar") {
      return dptrain::run_train_cifar();
    } else if (group == "finetune") {
      dptrain::run_finetune();
    } else if (group == "bench") {
      dptrain::run_bench();
    } else {
      std::fprintf(stderr, "unknown group %s\n", group.c_str());
      return 2;
    }
  } catch (const std::exception& e) {
    std::printf("[C--] FAIL unhandled exception: %s\n", e.what());
    return 1;
  }
  return dptrain::failures == 0 ? 0 : 1;
}
