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

// The DP-SGD optimizer: per-example clipping, sharded Gaussian noising,
// virtual-step accumulation, cosine schedule with warmup, Nesterov momentum.
//
// One step:
//   g   <- sum over sub-batches of sum_i clip(grad_i, C)
//   g   <- g + N(0, (sigma*C)^2) per coordinate (k independent shards of
//          std (sigma/sqrt(k))*C each)
//   g   <- g / (batch_size * virtual_steps)
//   g   <- g + weight_decay * theta          (post_clip mode)
//   v   <- momentum*v + g;  theta <- theta - lr_t*(g + momentum*v)
//
// Normalizing by the configured effective batch (not the realized Poisson
// batch size) keeps the sensitivity analysis intact and makes the noise std
// per coordinate after normalization sigma*C/effective_batch, which is the
// scaling that justifies growing sigma proportionally to batch size.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dptrain/autodiff.hpp"
#include "dptrain/rng.hpp"
#include "dptrain/tensor.hpp"

namespace dptrain {

enum class LrShape { kCosine, kConstant };
enum class WeightDecayMode { kPostClip, kInLoss };

template <typename Real>
struct DpSgdConfig {
  Real clip_norm = 1;             // C
  double noise_multiplier = 0;    // sigma, total across shards
  int shards = 1;                 // k
  std::size_t batch_size = 0;     // per sub-batch
  std::size_t virtual_steps = 1;  // sub-batches accumulated per step

  Real max_lr = Real(0.1);
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 1;
  LrShape lr_shape = LrShape::kCosine;

  Real momentum = Real(0.9);
  bool nesterov = true;
  Real weight_decay = 0;
  WeightDecayMode weight_decay_mode = WeightDecayMode::kPostClip;
  std::uint64_t seed = 1;

  std::size_t effective_batch() const { return batch_size * virtual_steps; }

  void validate() const {
    check(clip_norm > 0, "clip_norm must be positive");
    check(noise_multiplier >= 0, "noise_multiplier must be non-negative");
    check(shards >= 1, "shards must be >= 1");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(virtual_steps >= 1, "virtual_steps must be >= 1");
    check(momentum >= 0 && momentum < 1, "momentum must be in [0,1)");
    check(weight_decay >= 0, "weight_decay must be non-negative");
    check(warmup_steps <= total_steps, "warmup_steps must be <= total_steps");
    check(total_steps >= 1, "total_steps must be >= 1");
  }
};

template <typename Real>
struct OptimizerState {
  std::vector<Real> velocity;  // over flattened trainable params
  std::size_t step = 0;

  static OptimizerState init(const ParamTree<Real>& params) {
    OptimizerState s;
    s.velocity.assign(params.trainable_size(), Real(0));
    return s;
  }
};

// Linear ramp 0 -> max_lr over warmup_steps, then cosine decay to zero at
// total_steps (or flat max_lr for the constant shape).
template <typename Real>
Real lr_at(std::size_t t, const DpSgdConfig<Real>& cfg) {
  check(t <= cfg.total_steps, "step index " + std::to_string(t) +
                                  " outside schedule [0, " +
                                  std::to_string(cfg.total_steps) + "]");
  if (cfg.warmup_steps > 0 && t < cfg.warmup_steps) {
    return cfg.max_lr * static_cast<Real>(t) /
           static_cast<Real>(cfg.warmup_steps);
  }
  if (cfg.lr_shape == LrShape::kConstant) return cfg.max_lr;
  if (cfg.total_steps == cfg.warmup_steps) return cfg.max_lr;
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double pos = static_cast<double>(t - cfg.warmup_steps);
  return cfg.max_lr *
         static_cast<Real>(0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                                 pos / span)));
}

template <typename Real>
Real l2_norm(const std::vector<Real>& v) {
  Real s = 0;
  for (const Real x : v) s += x * x;
  return std::sqrt(s);
}

// v * min{1, C/|v|}. Zero vectors pass through untouched.
template <typename Real>
std::vector<Real> clip(const std::vector<Real>& v, Real c) {
  check(c > 0, "clip norm must be positive");
  const Real n = l2_norm(v);
  if (n <= c) return v;
  std::vector<Real> out = v;
  const Real f = c / n;
  for (Real& x : out) x *= f;
  return out;
}

struct NoiseKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

// Adds k independent Gaussian draws of per-coordinate std (sigma/sqrt(k))*C,
// total per-coordinate std sigma*C. Each (seed, step, shard, coordinate)
// addresses one fixed value, so any shard execution order gives identical
// results.
template <typename Real>
void add_noise(std::vector<Real>& g, Real c, double sigma, int shards,
               NoiseKey key) {
  check(sigma >= 0, "noise multiplier must be non-negative");
  check(shards >= 1, "shard count must be >= 1");
  if (sigma == 0) return;
  const double shard_std =
      sigma * static_cast<double>(c) / std::sqrt(static_cast<double>(shards));
  for (int s = 0; s < shards; ++s) {
    const CounterRng rng(key.seed,
                         derive_stream(rng_stream::kNoise, key.step,
                                       static_cast<std::uint64_t>(s)));
    for (std::size_t j = 0; j < g.size(); ++j) {
      g[j] += static_cast<Real>(shard_std * rng.gaussian(j));
    }
  }
}

enum class ClipPath { kFast, kNaive };

// Sum of clipped per-example gradients for one recorded graph.
// Fast path: one norms pass + one weighted pass. Naive path: materialize
// every per-example gradient, clip, sum. `extra_per_example` (may be empty)
// is added to each example's gradient before clipping; the in-loss weight
// decay mode uses it, and it forces the naive path.
template <typename Real>
std::vector<Real> clipped_grad_sum(Graph<Real>& g,
                                   typename Graph<Real>::NodeId losses, Real c,
                                   ClipPath path = ClipPath::kFast,
                                   std::vector<Real>* norms_out = nullptr,
                                   const std::vector<Real>& extra_per_example =
                                       {}) {
  check(c > 0, "clip norm must be positive");
  const std::size_t b = g.value(losses).dim(0);
  const std::size_t p = g.params().trainable_size();
  if (!extra_per_example.empty()) {
    check(extra_per_example.size() == p,
          "per-example gradient offset has wrong length");
    check(path == ClipPath::kNaive,
          "per-example gradient offsets require the naive path");
  }
  if (path == ClipPath::kFast) {
    std::vector<Real> norms = per_example_grad_norms(g, losses);
    std::vector<Real> weights(b);
    for (std::size_t i = 0; i < b; ++i) {
      weights[i] =
          norms[i] > c ? c / norms[i] : Real(1);  // zero-grad examples get 1
    }
    if (norms_out) *norms_out = std::move(norms);
    return weighted_backward(g, losses, weights);
  }
  std::vector<std::vector<Real>> grads = per_example_grads(g, losses);
  std::vector<Real> out(p, Real(0));
  if (norms_out) norms_out->assign(b, Real(0));
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Real>& gi = grads[i];
    if (!extra_per_example.empty()) {
      for (std::size_t j = 0; j < p; ++j) gi[j] += extra_per_example[j];
    }
    const Real n = l2_norm(gi);
    if (norms_out) (*norms_out)[i] = n;
    const Real w = n > c ? c / n : Real(1);
    for (std::size_t j = 0; j < p; ++j) out[j] += w * gi[j];
  }
  return out;
}

template <typename Real>
struct StepInfo {
  std::size_t examples = 0;        // realized examples across sub-batches
  Real lr = 0;
  double fraction_clipped = 0;     // share of examples with norm > C
  double noise_std_per_coord = 0;  // after batch normalization
};

// One DP-SGD step over cfg.virtual_steps sub-batches. `make_graph` records a
// fresh loss graph for a sub-batch: (const Minibatch&) ->
// std::pair<Graph<Real>, NodeId of per-example losses>.
template <typename Real, typename GraphFactory>
StepInfo<Real> dp_sgd_step(ParamTree<Real>& params, GraphFactory&& make_graph,
                           const std::vector<Minibatch<Real>>& batches,
                           const DpSgdConfig<Real>& cfg,
                           OptimizerState<Real>& state,
                           ClipPath path = ClipPath::kFast) {
  cfg.validate();
  check(batches.size() == cfg.virtual_steps,
        "expected " + std::to_string(cfg.virtual_steps) +
            " sub-batches, got " + std::to_string(batches.size()));
  const std::size_t p = params.trainable_size();
  check(state.velocity.size() == p,
        "optimizer state does not match trainable parameters; reinitialize "
        "after changing trainable flags");

  const bool in_loss_wd =
      cfg.weight_decay > 0 &&
      cfg.weight_decay_mode == WeightDecayMode::kInLoss;
  std::vector<Real> reg;
  if (in_loss_wd) {
    // d/dtheta of (weight_decay/2)*|theta|^2, identical for every example;
    // it participates in clipping, which requires the naive path.
    reg = params.flatten_trainable();
    for (Real& v : reg) v *= cfg.weight_decay;
    path = ClipPath::kNaive;
  }

  StepInfo<Real> info;
  std::vector<Real> g(p, Real(0));
  std::size_t clipped = 0, total = 0;
  for (const Minibatch<Real>& mb : batches) {
    if (mb.size() == 0) continue;  // empty Poisson draw contributes nothing
    auto [graph, losses] = make_graph(mb);
    std::vector<Real> norms;
    std::vector<Real> part =
        clipped_grad_sum(graph, losses, cfg.clip_norm, path, &norms, reg);
    for (std::size_t j = 0; j < p; ++j) g[j] += part[j];
    for (const Real n : norms)
      if (n > cfg.clip_norm) ++clipped;
    total += mb.size();
  }

  add_noise(g, cfg.clip_norm, cfg.noise_multiplier, cfg.shards,
            NoiseKey{cfg.seed, state.step});

  const Real denom = static_cast<Real>(cfg.effective_batch());
  for (Real& v : g) v /= denom;
  info.noise_std_per_coord = cfg.noise_multiplier *
                             static_cast<double>(cfg.clip_norm) /
                             static_cast<double>(cfg.effective_batch());

  if (cfg.weight_decay > 0 &&
      cfg.weight_decay_mode == WeightDecayMode::kPostClip) {
    const std::vector<Real> theta = params.flatten_trainable();
    for (std::size_t j = 0; j < p; ++j) g[j] += cfg.weight_decay * theta[j];
  }

  const Real lr = lr_at(state.step, cfg);
  std::vector<Real> update(p);
  for (std::size_t j = 0; j < p; ++j) {
    state.velocity[j] = cfg.momentum * state.velocity[j] + g[j];
    update[j] = cfg.nesterov ? g[j] + cfg.momentum * state.velocity[j]
                             : state.velocity[j];
  }
  params.add_flat_to_trainable(update, -lr);

  state.step += 1;
  info.examples = total;
  info.lr = lr;
  info.fraction_clipped = total ? static_cast<double>(clipped) / total : 0.0;
  return info;
}

// Plain (non-private) mini-batch SGD step with the same optimizer and
// schedule: mean gradient over the realized examples, no clipping, no noise.
template <typename Real, typename GraphFactory>
StepInfo<Real> sgd_step(ParamTree<Real>& params, GraphFactory&& make_graph,
                        const std::vector<Minibatch<Real>>& batches,
                        const DpSgdConfig<Real>& cfg,
                        OptimizerState<Real>& state) {
  check(batches.size() >= 1, "need at least one sub-batch");
  const std::size_t p = params.trainable_size();
  check(state.velocity.size() == p,
        "optimizer state does not match trainable parameters; reinitialize "
        "after changing trainable flags");
  std::size_t total = 0;
  for (const auto& mb : batches) total += mb.size();
  std::vector<Real> g(p, Real(0));
  for (const Minibatch<Real>& mb : batches) {
    if (mb.size() == 0) continue;
    auto [graph, losses] = make_graph(mb);
    const std::vector<Real> w(mb.size(), Real(1));
    std::vector<Real> part = weighted_backward(graph, losses, w);
    for (std::size_t j = 0; j < p; ++j) g[j] += part[j];
  }
  if (total > 0) {
    for (Real& v : g) v /= static_cast<Real>(total);
  }
  if (cfg.weight_decay > 0) {
    const std::vector<Real> theta = params.flatten_trainable();
    for (std::size_t j = 0; j < p; ++j) g[j] += cfg.weight_decay * theta[j];
  }
  const Real lr = lr_at(state.step, cfg);
  std::vector<Real> update(p);
  for (std::size_t j = 0; j < p; ++j) {
    state.velocity[j] = cfg.momentum * state.velocity[j] + g[j];
    update[j] = cfg.nesterov ? g[j] + cfg.momentum * state.velocity[j]
                             : state.velocity[j];
  }
  params.add_flat_to_trainable(update, -lr);
  state.step += 1;
  StepInfo<Real> info;
  info.examples = total;
  info.lr = lr;
  return info;
}

}  // namespace dptrain
