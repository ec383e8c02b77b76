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

// Desk-scale model zoo: logistic regression, MLPs, and the parameterized
// conv-block family written as "32(2)-64(2)-128(2)-128": blocks of 3x3
// stride-1 same-padded convolutions (channel count per block, conv count in
// parentheses), a 2x2/2 max-pool after every block, one hidden fully
// connected layer (the trailing bare integer), and a linear classification
// head. tanh activations and no normalization by default; group norm is
// optional. Geometry assumptions (kernel 3, stride 1, pad 1, pool after each
// block) are pinned here because the spec string does not carry them.
//
// Freezing works on unit prefixes: units are [block_1 .. block_n, hidden_fc]
// for conv nets and the hidden layers for MLPs; freezing the maximum prefix
// leaves only the classification head trainable.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dptrain/autodiff.hpp"
#include "dptrain/rng.hpp"
#include "dptrain/tensor.hpp"

namespace dptrain {

enum class Activation { kTanh, kRelu };

inline std::string activation_name(Activation a) {
  return a == Activation::kTanh ? "tanh" : "relu";
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  fail("unknown activation: " + s);
}

struct ArchSpec {
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // (channels, convs)
  std::size_t fc_width = 0;
  Activation activation = Activation::kTanh;
  std::size_t group_norm_groups = 0;  // 0 = no normalization
};

// Grammar: spec := block ('-' block)* '-' INT ; block := INT '(' INT ')'
inline ArchSpec parse_arch_spec(const std::string& text) {
  ArchSpec spec;
  std::size_t pos = 0;
  const auto parse_error = [&](const std::string& what) -> void {
    fail("arch spec parse error at position " + std::to_string(pos) + ": " +
         what + " in \"" + text + "\"");
  };
  const auto parse_int = [&]() -> std::size_t {
    if (pos >= text.size() || !std::isdigit(text[pos]))
      parse_error("expected integer");
    std::size_t v = 0;
    while (pos < text.size() && std::isdigit(text[pos])) {
      v = v * 10 + (text[pos] - '0');
      ++pos;
    }
    return v;
  };
  while (true) {
    const std::size_t v = parse_int();
    if (pos < text.size() && text[pos] == '(') {
      ++pos;
      const std::size_t convs = parse_int();
      if (pos >= text.size() || text[pos] != ')') parse_error("expected ')'");
      ++pos;
      if (v == 0 || convs == 0) parse_error("channels and counts must be positive");
      spec.blocks.emplace_back(v, convs);
      if (pos >= text.size() || text[pos] != '-')
        parse_error("expected '-' separator");
      ++pos;
    } else {
      if (pos != text.size()) parse_error("expected '(' or end of spec");
      if (v == 0) parse_error("fc width must be positive");
      spec.fc_width = v;
      break;
    }
  }
  if (spec.blocks.empty()) {
    pos = 0;
    parse_error("spec needs at least one block");
  }
  return spec;
}

inline std::string format_arch_spec(const ArchSpec& spec) {
  std::string s;
  for (const auto& [ch, cv] : spec.blocks) {
    s += std::to_string(ch) + "(" + std::to_string(cv) + ")-";
  }
  s += std::to_string(spec.fc_width);
  return s;
}

struct FreezePlan {
  std::size_t frozen_prefix = 0;
};

// ---------------------------------------------------------------------------

template <typename Real>
struct Model {
  std::string kind;  // "logreg" | "mlp" | "convnet"
  std::string arch;  // arch-spec string (convnet) or hidden widths (mlp)
  Activation activation = Activation::kTanh;
  std::size_t group_norm_groups = 0;
  std::vector<std::size_t> input_shape;  // per example, e.g. {3,32,32} or {20}
  int num_classes = 0;

  ParamTree<Real> params;
  // Unit prefixes for freezing; each unit lists param entry indices.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> freeze_units;
  std::vector<std::size_t> head_entries;

  std::function<typename Graph<Real>::NodeId(Graph<Real>&,
                                             typename Graph<Real>::NodeId)>
      forward;

  std::size_t max_freeze_prefix() const { return freeze_units.size(); }
};

template <typename Real>
struct LossGraph {
  Graph<Real> graph;
  typename Graph<Real>::NodeId logits;
  typename Graph<Real>::NodeId losses;
};

// Records a fresh tape: per-example losses over (batch, labels).
template <typename Real>
LossGraph<Real> build_loss_graph(const Model<Real>& model,
                                 const Tensor<Real>& batch,
                                 const std::vector<int>& labels) {
  check(batch.rank() >= 1, "batch must have a leading example axis");
  std::vector<std::size_t> expected = {batch.dim(0)};
  expected.insert(expected.end(), model.input_shape.begin(),
                  model.input_shape.end());
  check(batch.shape() == expected,
        "batch shape " + batch.shape_str() + " does not match model input " +
            shape_string(expected));
  Graph<Real> g(&model.params);
  const auto x = g.input(batch);
  const auto logits = model.forward(g, x);
  const auto losses = g.softmax_cross_entropy(logits, labels);
  return LossGraph<Real>{std::move(g), logits, losses};
}

template <typename Real>
Tensor<Real> predict_logits(const Model<Real>& model,
                            const Tensor<Real>& batch) {
  Graph<Real> g(&model.params);
  const auto x = g.input(batch);
  const auto logits = model.forward(g, x);
  return g.value(logits);
}

// ---------------------------------------------------------------------------
// Initialization: uniform fan-in scaling for weights, zeros for biases, ones
// and zeros for group-norm gamma/beta.

namespace detail {

template <typename Real>
Tensor<Real> uniform_fan_in(std::vector<std::size_t> shape,
                            std::size_t fan_in, std::uint64_t seed,
                            std::uint64_t ordinal) {
  const CounterRng rng(seed, derive_stream(rng_stream::kInit, ordinal));
  Tensor<Real> t(std::move(shape));
  const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<Real>((2.0 * rng.uniform(i) - 1.0) * r);
  }
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MLP / logistic regression. Empty hidden width list = logistic regression.

template <typename Real>
Model<Real> build_mlp(std::size_t input_dim,
                      const std::vector<std::size_t>& hidden,
                      int num_classes, Activation act, std::uint64_t seed) {
  check(input_dim >= 1 && num_classes >= 1, "degenerate mlp dimensions");
  Model<Real> m;
  m.kind = hidden.empty() ? "logreg" : "mlp";
  m.activation = act;
  m.input_shape = {input_dim};
  m.num_classes = num_classes;
  {
    std::string a;
    for (std::size_t i = 0; i < hidden.size(); ++i)
      a += (i ? "," : "") + std::to_string(hidden[i]);
    m.arch = a;
  }

  struct Layer {
    std::size_t w, b;
  };
  std::vector<Layer> layers;
  std::size_t in = input_dim;
  std::uint64_t ordinal = 0;
  for (std::size_t li = 0; li < hidden.size(); ++li) {
    const std::size_t out = hidden[li];
    check(out >= 1, "hidden width must be positive");
    const std::string base = "layer" + std::to_string(li + 1);
    Layer l;
    l.w = m.params.add(base + ".weight", detail::uniform_fan_in<Real>(
                                             {in, out}, in, seed, ordinal++));
    l.b = m.params.add(base + ".bias", Tensor<Real>({out}));
    m.freeze_units.push_back({base, {l.w, l.b}});
    layers.push_back(l);
    in = out;
  }
  Layer head;
  head.w = m.params.add(
      "head.weight", detail::uniform_fan_in<Real>(
                         {in, static_cast<std::size_t>(num_classes)}, in, seed,
                         ordinal++));
  head.b = m.params.add("head.bias",
                        Tensor<Real>({static_cast<std::size_t>(num_classes)}));
  m.head_entries = {head.w, head.b};
  layers.push_back(head);

  const Activation activation = act;
  m.forward = [layers, activation](Graph<Real>& g,
                                   typename Graph<Real>::NodeId x) {
    auto h = x;
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto w = g.param(layers[li].w);
      const auto b = g.param(layers[li].b);
      h = g.dense(h, w, b);
      if (li + 1 < layers.size()) {
        h = activation == Activation::kTanh ? g.tanh(h) : g.relu(h);
      }
    }
    return h;
  };
  return m;
}

template <typename Real>
Model<Real> build_logreg(std::size_t input_dim, int num_classes,
                         std::uint64_t seed) {
  return build_mlp<Real>(input_dim, {}, num_classes, Activation::kTanh, seed);
}

// ---------------------------------------------------------------------------
// Conv-block family.

template <typename Real>
Model<Real> build_convnet(const ArchSpec& spec,
                          const std::vector<std::size_t>& input_shape,
                          int num_classes, std::uint64_t seed) {
  check(input_shape.size() == 3, "conv net input shape must be {C,H,W}, got " +
                                     shape_string(input_shape));
  check(!spec.blocks.empty(), "arch spec needs at least one block");
  check(num_classes >= 1, "num_classes must be positive");

  Model<Real> m;
  m.kind = "convnet";
  m.arch = format_arch_spec(spec);
  m.activation = spec.activation;
  m.group_norm_groups = spec.group_norm_groups;
  m.input_shape = input_shape;
  m.num_classes = num_classes;

  struct ConvLayer {
    std::size_t w, b;
    std::size_t gn_gamma = ParamTree<Real>::npos;
    std::size_t gn_beta = ParamTree<Real>::npos;
  };
  std::vector<std::vector<ConvLayer>> blocks;

  std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  std::uint64_t ordinal = 0;
  for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
    const auto [channels, convs] = spec.blocks[bi];
    std::vector<ConvLayer> block;
    std::vector<std::size_t> unit_entries;
    for (std::size_t ci = 0; ci < convs; ++ci) {
      const std::string base = "block" + std::to_string(bi + 1) + ".conv" +
                               std::to_string(ci + 1);
      ConvLayer l;
      l.w = m.params.add(
          base + ".weight",
          detail::uniform_fan_in<Real>({channels, c, 3, 3}, c * 9, seed,
                                       ordinal++));
      l.b = m.params.add(base + ".bias", Tensor<Real>({channels}));
      unit_entries.push_back(l.w);
      unit_entries.push_back(l.b);
      if (spec.group_norm_groups > 0) {
        check(channels % spec.group_norm_groups == 0,
              "block " + std::to_string(bi + 1) + " channels " +
                  std::to_string(channels) + " not divisible by " +
                  std::to_string(spec.group_norm_groups) + " norm groups");
        l.gn_gamma = m.params.add(base + ".gn_gamma",
                                  Tensor<Real>::full({channels}, Real(1)));
        l.gn_beta = m.params.add(base + ".gn_beta", Tensor<Real>({channels}));
        unit_entries.push_back(l.gn_gamma);
        unit_entries.push_back(l.gn_beta);
      }
      block.push_back(l);
      c = channels;
    }
    // 2x2 stride-2 max-pool after every block (the hidden linear layer is
    // also "connected by" a pool).
    check(h >= 2 && w >= 2, "spatial extent collapsed before the pool of "
                            "block " +
                                std::to_string(bi + 1) + " (have " +
                                std::to_string(h) + "x" + std::to_string(w) +
                                ")");
    h = (h - 2) / 2 + 1;
    w = (w - 2) / 2 + 1;
    blocks.push_back(std::move(block));
    m.freeze_units.push_back(
        {"block" + std::to_string(bi + 1), std::move(unit_entries)});
  }

  const std::size_t flat_dim = c * h * w;
  check(flat_dim >= 1, "flattened feature dimension is zero");
  const std::size_t fc_w = m.params.add(
      "fc.weight", detail::uniform_fan_in<Real>({flat_dim, spec.fc_width},
                                                flat_dim, seed, ordinal++));
  const std::size_t fc_b =
      m.params.add("fc.bias", Tensor<Real>({spec.fc_width}));
  m.freeze_units.push_back({"fc", {fc_w, fc_b}});
  const std::size_t head_w = m.params.add(
      "head.weight",
      detail::uniform_fan_in<Real>(
          {spec.fc_width, static_cast<std::size_t>(num_classes)}, spec.fc_width,
          seed, ordinal++));
  const std::size_t head_b = m.params.add(
      "head.bias", Tensor<Real>({static_cast<std::size_t>(num_classes)}));
  m.head_entries = {head_w, head_b};

  const Activation act = spec.activation;
  const std::size_t gn_groups = spec.group_norm_groups;
  m.forward = [blocks, fc_w, fc_b, head_w, head_b, act, gn_groups](
                  Graph<Real>& g, typename Graph<Real>::NodeId x) {
    auto h = x;
    for (const auto& block : blocks) {
      for (const ConvLayer& l : block) {
        const auto w = g.param(l.w);
        const auto b = g.param(l.b);
        h = g.conv2d(h, w, b, 1, 1);
        if (gn_groups > 0) {
          const auto ga = g.param(l.gn_gamma);
          const auto be = g.param(l.gn_beta);
          h = g.group_norm(h, ga, be, gn_groups, Real(1e-5));
        }
        h = act == Activation::kTanh ? g.tanh(h) : g.relu(h);
      }
      h = g.max_pool2d(h, 2, 2);
    }
    h = g.flatten(h);
    h = g.dense(h, g.param(fc_w), g.param(fc_b));
    h = act == Activation::kTanh ? g.tanh(h) : g.relu(h);
    return g.dense(h, g.param(head_w), g.param(head_b));
  };
  return m;
}

// ---------------------------------------------------------------------------
// Freezing and head surgery.

template <typename Real>
void apply_freeze(Model<Real>& model, const FreezePlan& plan) {
  check(plan.frozen_prefix <= model.max_freeze_prefix(),
        "frozen_prefix " + std::to_string(plan.frozen_prefix) +
            " out of range [0, " +
            std::to_string(model.max_freeze_prefix()) + "]");
  for (std::size_t u = 0; u < model.freeze_units.size(); ++u) {
    const bool frozen = u < plan.frozen_prefix;
    for (const std::size_t e : model.freeze_units[u].second) {
      model.params.set_trainable(e, !frozen);
    }
  }
}

// Reinitializes only the classification head (fresh seed); every other
// tensor is left bit-identical. Used when transferring a pretrained trunk to
// a new label space or a new private dataset.
template <typename Real>
void replace_head(Model<Real>& model, std::uint64_t seed) {
  check(model.head_entries.size() == 2, "model has no standard head");
  ParamEntry<Real>& w = model.params.entry(model.head_entries[0]);
  ParamEntry<Real>& b = model.params.entry(model.head_entries[1]);
  const std::size_t fan_in = w.value.dim(0);
  w.value = detail::uniform_fan_in<Real>(w.value.shape(), fan_in, seed,
                                         /*ordinal=*/0xbead);
  b.value = Tensor<Real>(b.value.shape());
}

// ---------------------------------------------------------------------------
// Evaluation.

template <typename Real>
struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

template <typename Real>
EvalResult<Real> evaluate(const Model<Real>& model, const Tensor<Real>& x,
                          const std::vector<int>& y,
                          std::size_t eval_batch = 512) {
  const std::size_t n = y.size();
  check(n >= 1, "evaluate needs at least one example");
  double loss_sum = 0;
  std::size_t correct = 0;
  const std::size_t row = x.size() / x.dim(0);
  for (std::size_t start = 0; start < n; start += eval_batch) {
    const std::size_t b = std::min(eval_batch, n - start);
    std::vector<std::size_t> shape = x.shape();
    shape[0] = b;
    Tensor<Real> xb(shape);
    std::copy(x.data() + start * row, x.data() + (start + b) * row, xb.data());
    const std::vector<int> yb(y.begin() + start, y.begin() + start + b);
    const Tensor<Real> logits = predict_logits(model, xb);
    const Tensor<Real> losses = softmax_cross_entropy(logits, yb);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < b; ++i) {
      loss_sum += static_cast<double>(losses[i]);
      std::size_t arg = 0;
      for (std::size_t j = 1; j < k; ++j) {
        if (logits[i * k + j] > logits[i * k + arg]) arg = j;
      }
      if (static_cast<int>(arg) == yb[i]) ++correct;
    }
  }
  return {loss_sum / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

}  // namespace dptrain
