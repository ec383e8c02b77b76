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

// Reverse-mode differentiation with first-class per-example gradients.
//
// A Graph is a tape of ops recorded during one forward evaluation over a
// batch. Every op keeps the batch axis separable: example i's output never
// depends on example j. That property is what makes the two fast backward
// entry points sound:
//
//   per_example_grad_norms  seeds the backward pass with all-ones and
//     accumulates, per op, the squared norm of each example's parameter
//     gradient (closed form for dense layers, materialize-and-reduce per
//     layer for conv), never holding the full per-example gradient set.
//   weighted_backward       seeds with caller weights and accumulates the
//     weighted gradient sum in one pass.
//
// per_example_grads is the deliberate naive path (one backward pass per
// example); it is the testing oracle and the fallback for configurations the
// factored norms do not cover.

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dptrain/kernels.hpp"
#include "dptrain/tensor.hpp"

namespace dptrain {

// ---------------------------------------------------------------------------
// ParamTree: named, ordered parameters with trainable flags.

template <typename Real>
struct ParamEntry {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
};

template <typename Real>
class ParamTree {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t add(std::string name, Tensor<Real> value, bool trainable = true) {
    check(index_.find(name) == index_.end(),
          "duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), std::move(value), trainable});
    return entries_.size() - 1;
  }

  std::size_t size() const { return entries_.size(); }

  ParamEntry<Real>& entry(std::size_t i) { return entries_.at(i); }
  const ParamEntry<Real>& entry(std::size_t i) const { return entries_.at(i); }

  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "no parameter named " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  void set_trainable(std::size_t i, bool trainable) {
    entries_.at(i).trainable = trainable;
  }

  // Offsets of each entry inside the flattened trainable vector (npos for
  // frozen entries).
  std::vector<std::size_t> trainable_offsets() const {
    std::vector<std::size_t> off(entries_.size(), npos);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (!entries_[i].trainable) continue;
      off[i] = pos;
      pos += entries_[i].value.size();
    }
    return off;
  }

  std::size_t trainable_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  std::vector<Real> flatten_trainable() const {
    std::vector<Real> flat;
    flat.reserve(trainable_size());
    for (const auto& e : entries_) {
      if (!e.trainable) continue;
      flat.insert(flat.end(), e.value.storage().begin(),
                  e.value.storage().end());
    }
    return flat;
  }

  void assign_flat_to_trainable(const std::vector<Real>& flat) {
    check(flat.size() == trainable_size(),
          "flat vector length does not match trainable parameter count");
    std::size_t pos = 0;
    for (auto& e : entries_) {
      if (!e.trainable) continue;
      std::copy(flat.begin() + pos, flat.begin() + pos + e.value.size(),
                e.value.storage().begin());
      pos += e.value.size();
    }
  }

  // theta += coeff * delta over trainable entries.
  void add_flat_to_trainable(const std::vector<Real>& delta, Real coeff) {
    check(delta.size() == trainable_size(),
          "flat vector length does not match trainable parameter count");
    std::size_t pos = 0;
    for (auto& e : entries_) {
      if (!e.trainable) continue;
      Real* v = e.value.data();
      for (std::size_t t = 0; t < e.value.size(); ++t) v[t] += coeff * delta[pos + t];
      pos += e.value.size();
    }
  }

 private:
  std::vector<ParamEntry<Real>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Graph.

enum class GradMode { kAccumulate, kPerExampleNormSq };

template <typename Real>
class Graph;

template <typename Real>
struct BackwardCtx {
  GradMode mode = GradMode::kAccumulate;
  // Adjoints per node; empty tensor means "zero so far".
  std::vector<Tensor<Real>> adjoint;
  // kAccumulate: flattened gradient over trainable params.
  std::vector<Real>* flat = nullptr;
  // kPerExampleNormSq: per-example squared-norm accumulator, length B.
  std::vector<Real>* norm_sq = nullptr;
  std::vector<std::size_t> entry_offset;  // per param entry; npos if frozen
  std::vector<char> param_consumed;       // norms mode: one consumer per param

  void accumulate(int node, const Tensor<Real>& g) {
    if (adjoint[node].size() == 0) {
      adjoint[node] = g;
    } else {
      Real* a = adjoint[node].data();
      for (std::size_t i = 0; i < g.size(); ++i) a[i] += g[i];
    }
  }

  Tensor<Real>& ensure(int node, const std::vector<std::size_t>& shape) {
    if (adjoint[node].size() == 0) adjoint[node] = Tensor<Real>(shape);
    return adjoint[node];
  }

  bool sinks_param(std::size_t entry) const {
    return entry_offset[entry] != ParamTree<Real>::npos;
  }

  void add_param_grad_flat(std::size_t entry, const Tensor<Real>& g) {
    const std::size_t off = entry_offset[entry];
    Real* dst = flat->data() + off;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  void mark_consumed(std::size_t entry, const char* op_kind) {
    check(!param_consumed[entry],
          std::string("fast per-example norms require each parameter to feed "
                      "exactly one op; parameter entry ") +
              std::to_string(entry) + " reused by " + op_kind);
    param_consumed[entry] = 1;
  }
};

template <typename Real>
struct Node {
  Tensor<Real> value;
  std::vector<int> ins;
  int param_entry = -1;  // >= 0 for parameter leaves
  bool needs_grad = false;

  virtual ~Node() = default;
  virtual const char* kind() const = 0;
  // Recomputes value from input values (and current parameter values).
  virtual void forward(Graph<Real>& g) = 0;
  // Consumes own adjoint; pushes input adjoints and parameter gradients.
  virtual void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) {}
};

template <typename Real>
class Graph {
 public:
  using NodeId = int;

  explicit Graph(const ParamTree<Real>* params) : params_(params) {}
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;
  Graph(const Graph&) = delete;

  const ParamTree<Real>& params() const {
    check(params_ != nullptr, "graph has no parameter tree bound");
    return *params_;
  }

  NodeId input(Tensor<Real> v, bool requires_grad = false);
  NodeId param(std::size_t entry_index);
  NodeId dense(NodeId x, NodeId w, NodeId b);  // b = -1 for no bias
  NodeId conv2d(NodeId x, NodeId w, NodeId b, std::size_t stride,
                std::size_t pad);
  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, std::size_t groups,
                    Real eps);
  NodeId tanh(NodeId x);
  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, Real c);
  NodeId max_pool2d(NodeId x, std::size_t kernel, std::size_t stride);
  NodeId flatten(NodeId x);
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);

  const Tensor<Real>& value(NodeId id) const { return nodes_.at(id)->value; }
  std::size_t num_nodes() const { return nodes_.size(); }
  bool needs_grad(NodeId id) const { return nodes_.at(id)->needs_grad; }

  // Replays the tape in recording order against current parameter values.
  void recompute() {
    for (auto& n : nodes_) n->forward(*this);
  }

  // Adjoint of `node` after the most recent backward call, for kernel tests.
  const Tensor<Real>& last_adjoint(NodeId id) const {
    check(!last_ctx_.adjoint.empty(), "no backward pass has run yet");
    return last_ctx_.adjoint.at(id);
  }

  // Core reverse sweep. seed is d(objective)/d(value(seed_node)).
  void run_backward(NodeId seed_node, const Tensor<Real>& seed, GradMode mode,
                    std::vector<Real>* flat, std::vector<Real>* norm_sq) {
    BackwardCtx<Real>& ctx = last_ctx_;
    ctx = BackwardCtx<Real>();
    ctx.mode = mode;
    ctx.flat = flat;
    ctx.norm_sq = norm_sq;
    ctx.adjoint.assign(nodes_.size(), Tensor<Real>());
    ctx.entry_offset = params().trainable_offsets();
    ctx.param_consumed.assign(params().size(), 0);
    check(seed.same_shape(value(seed_node)),
          "backward seed shape " + seed.shape_str() + " does not match node " +
              value(seed_node).shape_str());
    ctx.adjoint[seed_node] = seed;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      if (ctx.adjoint[id].size() == 0) continue;
      nodes_[id]->backward(*this, id, ctx);
    }
  }

  Node<Real>& node(NodeId id) { return *nodes_.at(id); }

 private:
  template <typename T>
  NodeId push(std::unique_ptr<T> n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  bool any_needs_grad(const std::vector<int>& ins) const {
    for (int i : ins)
      if (i >= 0 && nodes_[i]->needs_grad) return true;
    return false;
  }

  const ParamTree<Real>* params_;
  std::vector<std::unique_ptr<Node<Real>>> nodes_;
  BackwardCtx<Real> last_ctx_;

  template <typename R>
  friend struct Node;
};

// ---------------------------------------------------------------------------
// Node implementations.

namespace nodes {

template <typename Real>
struct Input : Node<Real> {
  const char* kind() const override { return "input"; }
  void forward(Graph<Real>&) override {}
};

template <typename Real>
struct Param : Node<Real> {
  const char* kind() const override { return "param"; }
  void forward(Graph<Real>& g) override {
    this->value = g.params().entry(this->param_entry).value;
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    // Adjoints arrive here only when a parameter feeds a generic elementwise
    // op. The parameter-aware ops (dense/conv/group_norm) sink their
    // gradients directly and never push an adjoint to the leaf.
    if (!this->needs_grad) return;
    if (ctx.mode == GradMode::kAccumulate) {
      if (ctx.sinks_param(this->param_entry))
        ctx.add_param_grad_flat(this->param_entry, ctx.adjoint[self]);
    } else {
      fail(std::string("fast per-example norms support parameters consumed by "
                       "dense/conv2d/group_norm only; use the naive "
                       "per-example path for this graph"));
    }
  }
};

template <typename Real>
struct Dense : Node<Real> {
  const char* kind() const override { return "dense"; }
  void forward(Graph<Real>& g) override {
    const Tensor<Real>& x = g.value(this->ins[0]);
    const Tensor<Real>& w = g.value(this->ins[1]);
    this->value = matmul(x, w);
    if (this->ins[2] >= 0)
      this->value = add_row_bias(this->value, g.value(this->ins[2]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    const Tensor<Real>& gy = ctx.adjoint[self];  // [B,O]
    const Tensor<Real>& x = g.value(this->ins[0]);
    const Tensor<Real>& w = g.value(this->ins[1]);
    const std::size_t b = x.dim(0), in = x.dim(1), out = w.dim(1);
    if (g.needs_grad(this->ins[0]) && b) {
      Tensor<Real>& gx = ctx.ensure(this->ins[0], x.shape());
      gemm<Real>(false, true, b, in, out, Real(1), gy.data(), out, w.data(),
                 out, Real(1), gx.data(), in);
    }
    const int wi = g.node(this->ins[1]).param_entry;
    const int bi = this->ins[2] >= 0 ? g.node(this->ins[2]).param_entry : -1;
    const bool w_train = wi >= 0 && ctx.sinks_param(wi);
    const bool b_train = bi >= 0 && ctx.sinks_param(bi);
    if (ctx.mode == GradMode::kAccumulate) {
      if (w_train && b) {
        gemm<Real>(true, false, in, out, b, Real(1), x.data(), in, gy.data(),
                   out, Real(1), ctx.flat->data() + ctx.entry_offset[wi], out);
      }
      if (b_train) {
        Real* dst = ctx.flat->data() + ctx.entry_offset[bi];
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t j = 0; j < out; ++j) dst[j] += gy[i * out + j];
      }
    } else {
      // Per-example gradient of W for example i is outer(x_i, gy_i), whose
      // squared Frobenius norm factors as |x_i|^2 * |gy_i|^2.
      if (w_train) ctx.mark_consumed(wi, kind());
      if (b_train) ctx.mark_consumed(bi, kind());
      for (std::size_t i = 0; i < b; ++i) {
        Real g2 = 0;
        const Real* gr = gy.data() + i * out;
        for (std::size_t j = 0; j < out; ++j) g2 += gr[j] * gr[j];
        if (w_train) {
          Real a2 = 0;
          const Real* xr = x.data() + i * in;
          for (std::size_t j = 0; j < in; ++j) a2 += xr[j] * xr[j];
          (*ctx.norm_sq)[i] += a2 * g2;
        }
        if (b_train) (*ctx.norm_sq)[i] += g2;
      }
    }
  }
};

template <typename Real>
struct Conv2d : Node<Real> {
  std::size_t stride, pad;
  Conv2dGeom geom;
  const char* kind() const override { return "conv2d"; }
  void forward(Graph<Real>& g) override {
    const Tensor<Real>& x = g.value(this->ins[0]);
    const Tensor<Real>& w = g.value(this->ins[1]);
    geom = Conv2dGeom::resolve(x.shape(), w.shape(), stride, pad);
    this->value = dptrain::conv2d(x, w, stride, pad);
    if (this->ins[2] >= 0) add_channel_bias(this->value, g.value(this->ins[2]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    const Tensor<Real>& gy = ctx.adjoint[self];  // [B,F,OH,OW]
    const Tensor<Real>& x = g.value(this->ins[0]);
    const Tensor<Real>& w = g.value(this->ins[1]);
    const Conv2dGeom& gm = geom;
    const std::size_t ckk = gm.col_rows(), ohw = gm.col_cols();
    const std::size_t f = gm.out_channels;
    const std::size_t x_stride = gm.in_channels * gm.in_h * gm.in_w;
    const std::size_t y_stride = f * ohw;
    const int wi = g.node(this->ins[1]).param_entry;
    const int bi = this->ins[2] >= 0 ? g.node(this->ins[2]).param_entry : -1;
    const bool w_train = wi >= 0 && ctx.sinks_param(wi);
    const bool b_train = bi >= 0 && ctx.sinks_param(bi);
    const bool x_needs = g.needs_grad(this->ins[0]);

    std::vector<Real> col(ckk * ohw);
    std::vector<Real> scratch;  // per-example weight gradient when needed
    const bool need_col = w_train;
    if (ctx.mode == GradMode::kPerExampleNormSq && w_train)
      scratch.resize(f * ckk);
    if (w_train) ctx.mark_consumed(wi, kind());
    if (b_train) ctx.mark_consumed(bi, kind());

    Tensor<Real>* gx = nullptr;
    if (x_needs) gx = &ctx.ensure(this->ins[0], x.shape());

    for (std::size_t i = 0; i < gm.batch; ++i) {
      const Real* gyi = gy.data() + i * y_stride;
      if (x_needs) {
        // dcol = W^T (F x CKK)^T * gy_i
        std::vector<Real> dcol(ckk * ohw);
        gemm<Real>(true, false, ckk, ohw, f, Real(1), w.data(), ckk, gyi, ohw,
                   Real(0), dcol.data(), ohw);
        col2im_accumulate(dcol.data(), gm, gx->data() + i * x_stride);
      }
      if (need_col) im2col(x.data() + i * x_stride, gm, col.data());
      if (ctx.mode == GradMode::kAccumulate) {
        if (w_train) {
          gemm<Real>(false, true, f, ckk, ohw, Real(1), gyi, ohw, col.data(),
                     ohw, Real(1), ctx.flat->data() + ctx.entry_offset[wi],
                     ckk);
        }
        if (b_train) {
          Real* dst = ctx.flat->data() + ctx.entry_offset[bi];
          for (std::size_t ch = 0; ch < f; ++ch) {
            Real s = 0;
            const Real* row = gyi + ch * ohw;
            for (std::size_t t = 0; t < ohw; ++t) s += row[t];
            dst[ch] += s;
          }
        }
      } else {
        if (w_train) {
          gemm<Real>(false, true, f, ckk, ohw, Real(1), gyi, ohw, col.data(),
                     ohw, Real(0), scratch.data(), ckk);
          Real s2 = 0;
          for (const Real v : scratch) s2 += v * v;
          (*ctx.norm_sq)[i] += s2;
        }
        if (b_train) {
          Real s2 = 0;
          for (std::size_t ch = 0; ch < f; ++ch) {
            Real s = 0;
            const Real* row = gyi + ch * ohw;
            for (std::size_t t = 0; t < ohw; ++t) s += row[t];
            s2 += s * s;
          }
          (*ctx.norm_sq)[i] += s2;
        }
      }
    }
  }
};

template <typename Real>
struct GroupNorm : Node<Real> {
  std::size_t groups;
  Real eps;
  Tensor<Real> mean, rstd;  // [B,G], cached by forward
  const char* kind() const override { return "group_norm"; }
  void forward(Graph<Real>& g) override {
    group_norm_forward(g.value(this->ins[0]), groups, g.value(this->ins[1]),
                       g.value(this->ins[2]), eps, &this->value, &mean, &rstd);
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    const Tensor<Real>& gy = ctx.adjoint[self];
    const Tensor<Real>& x = g.value(this->ins[0]);
    const Tensor<Real>& gamma = g.value(this->ins[1]);
    const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    const std::size_t cg = c / groups;
    const std::size_t m = cg * hw;
    const int gi = g.node(this->ins[1]).param_entry;
    const int bi = g.node(this->ins[2]).param_entry;
    const bool ga_train = gi >= 0 && ctx.sinks_param(gi);
    const bool be_train = bi >= 0 && ctx.sinks_param(bi);
    const bool x_needs = g.needs_grad(this->ins[0]);
    if (ctx.mode == GradMode::kPerExampleNormSq) {
      if (ga_train) ctx.mark_consumed(gi, kind());
      if (be_train) ctx.mark_consumed(bi, kind());
    }
    Tensor<Real>* gx = nullptr;
    if (x_needs) gx = &ctx.ensure(this->ins[0], x.shape());
    std::vector<Real> dgamma(ga_train ? c : 0);
    std::vector<Real> dbeta(be_train ? c : 0);
    for (std::size_t i = 0; i < b; ++i) {
      if (ctx.mode == GradMode::kPerExampleNormSq) {
        std::fill(dgamma.begin(), dgamma.end(), Real(0));
        std::fill(dbeta.begin(), dbeta.end(), Real(0));
      }
      for (std::size_t grp = 0; grp < groups; ++grp) {
        const Real mu = mean[i * groups + grp];
        const Real rs = rstd[i * groups + grp];
        const Real* xs = x.data() + (i * c + grp * cg) * hw;
        const Real* gs = gy.data() + (i * c + grp * cg) * hw;
        // Accumulate the two group-wide sums of dxhat and dxhat*xhat.
        Real s1 = 0, s2 = 0;
        for (std::size_t ch = 0; ch < cg; ++ch) {
          const Real ga = gamma[grp * cg + ch];
          for (std::size_t t = 0; t < hw; ++t) {
            const std::size_t u = ch * hw + t;
            const Real xh = (xs[u] - mu) * rs;
            const Real dxh = gs[u] * ga;
            s1 += dxh;
            s2 += dxh * xh;
          }
        }
        for (std::size_t ch = 0; ch < cg; ++ch) {
          const Real ga = gamma[grp * cg + ch];
          const std::size_t cidx = grp * cg + ch;
          Real dg = 0, db = 0;
          for (std::size_t t = 0; t < hw; ++t) {
            const std::size_t u = ch * hw + t;
            const Real xh = (xs[u] - mu) * rs;
            if (x_needs) {
              const Real dxh = gs[u] * ga;
              gx->data()[(i * c + cidx) * hw + t] +=
                  rs * (dxh - s1 / static_cast<Real>(m) -
                        xh * s2 / static_cast<Real>(m));
            }
            dg += gs[u] * xh;
            db += gs[u];
          }
          if (ga_train) dgamma[cidx] += dg;
          if (be_train) dbeta[cidx] += db;
        }
      }
      if (ctx.mode == GradMode::kPerExampleNormSq) {
        Real s = 0;
        for (const Real v : dgamma) s += v * v;
        for (const Real v : dbeta) s += v * v;
        (*ctx.norm_sq)[i] += s;
      }
    }
    if (ctx.mode == GradMode::kAccumulate) {
      if (ga_train) {
        Real* dst = ctx.flat->data() + ctx.entry_offset[gi];
        for (std::size_t j = 0; j < c; ++j) dst[j] += dgamma[j];
      }
      if (be_train) {
        Real* dst = ctx.flat->data() + ctx.entry_offset[bi];
        for (std::size_t j = 0; j < c; ++j) dst[j] += dbeta[j];
      }
    }
  }
};

template <typename Real>
struct Tanh : Node<Real> {
  const char* kind() const override { return "tanh"; }
  void forward(Graph<Real>& g) override {
    this->value = dptrain::tanh(g.value(this->ins[0]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    if (!g.needs_grad(this->ins[0])) return;
    const Tensor<Real>& gy = ctx.adjoint[self];
    Tensor<Real>& gx = ctx.ensure(this->ins[0], this->value.shape());
    for (std::size_t i = 0; i < gy.size(); ++i)
      gx[i] += gy[i] * (Real(1) - this->value[i] * this->value[i]);
  }
};

template <typename Real>
struct Relu : Node<Real> {
  const char* kind() const override { return "relu"; }
  void forward(Graph<Real>& g) override {
    this->value = dptrain::relu(g.value(this->ins[0]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    if (!g.needs_grad(this->ins[0])) return;
    const Tensor<Real>& gy = ctx.adjoint[self];
    const Tensor<Real>& x = g.value(this->ins[0]);
    Tensor<Real>& gx = ctx.ensure(this->ins[0], x.shape());
    for (std::size_t i = 0; i < gy.size(); ++i)
      gx[i] += x[i] > Real(0) ? gy[i] : Real(0);
  }
};

template <typename Real>
struct Add : Node<Real> {
  const char* kind() const override { return "add"; }
  void forward(Graph<Real>& g) override {
    this->value = dptrain::add(g.value(this->ins[0]), g.value(this->ins[1]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    for (int k = 0; k < 2; ++k)
      if (g.needs_grad(this->ins[k])) ctx.accumulate(this->ins[k], ctx.adjoint[self]);
  }
};

template <typename Real>
struct Mul : Node<Real> {
  const char* kind() const override { return "mul"; }
  void forward(Graph<Real>& g) override {
    this->value = dptrain::mul(g.value(this->ins[0]), g.value(this->ins[1]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    const Tensor<Real>& gy = ctx.adjoint[self];
    for (int k = 0; k < 2; ++k) {
      if (!g.needs_grad(this->ins[k])) continue;
      const Tensor<Real>& other = g.value(this->ins[1 - k]);
      Tensor<Real>& gx = ctx.ensure(this->ins[k], other.shape());
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * other[i];
    }
  }
};

template <typename Real>
struct Scale : Node<Real> {
  Real c;
  const char* kind() const override { return "scale"; }
  void forward(Graph<Real>& g) override {
    this->value = dptrain::scale(g.value(this->ins[0]), c);
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    if (!g.needs_grad(this->ins[0])) return;
    const Tensor<Real>& gy = ctx.adjoint[self];
    Tensor<Real>& gx = ctx.ensure(this->ins[0], this->value.shape());
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * c;
  }
};

template <typename Real>
struct MaxPool : Node<Real> {
  std::size_t kernel, stride;
  std::vector<std::int64_t> argmax;
  const char* kind() const override { return "max_pool2d"; }
  void forward(Graph<Real>& g) override {
    max_pool2d_forward(g.value(this->ins[0]), kernel, stride, &this->value,
                       &argmax);
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    if (!g.needs_grad(this->ins[0])) return;
    const Tensor<Real>& gy = ctx.adjoint[self];
    const Tensor<Real>& x = g.value(this->ins[0]);
    Tensor<Real>& gx = ctx.ensure(this->ins[0], x.shape());
    const std::size_t bc = x.dim(0) * x.dim(1);
    const std::size_t hwin = x.dim(2) * x.dim(3);
    const std::size_t hwout = this->value.dim(2) * this->value.dim(3);
    for (std::size_t p = 0; p < bc; ++p) {
      Real* gslab = gx.data() + p * hwin;
      const Real* gys = gy.data() + p * hwout;
      const std::int64_t* am = argmax.data() + p * hwout;
      for (std::size_t t = 0; t < hwout; ++t) gslab[am[t]] += gys[t];
    }
  }
};

template <typename Real>
struct Flatten : Node<Real> {
  const char* kind() const override { return "flatten"; }
  void forward(Graph<Real>& g) override {
    this->value = dptrain::flatten(g.value(this->ins[0]));
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    if (!g.needs_grad(this->ins[0])) return;
    const Tensor<Real>& x = g.value(this->ins[0]);
    ctx.accumulate(this->ins[0], ctx.adjoint[self].reshaped(x.shape()));
  }
};

template <typename Real>
struct SoftmaxXent : Node<Real> {
  std::vector<int> labels;
  Tensor<Real> probs;  // [B,K], cached by forward
  const char* kind() const override { return "softmax_cross_entropy"; }
  void forward(Graph<Real>& g) override {
    softmax_cross_entropy_forward(g.value(this->ins[0]), labels, &this->value,
                                  &probs);
  }
  void backward(Graph<Real>& g, int self, BackwardCtx<Real>& ctx) override {
    if (!g.needs_grad(this->ins[0])) return;
    const Tensor<Real>& gy = ctx.adjoint[self];  // [B]
    const std::size_t b = probs.dim(0), k = probs.dim(1);
    Tensor<Real>& gx = ctx.ensure(this->ins[0], probs.shape());
    for (std::size_t i = 0; i < b; ++i) {
      const Real gi = gy[i];
      const Real* ps = probs.data() + i * k;
      Real* gs = gx.data() + i * k;
      for (std::size_t j = 0; j < k; ++j) gs[j] += gi * ps[j];
      gs[labels[i]] -= gi;
    }
  }
};

}  // namespace nodes

// ---------------------------------------------------------------------------
// Graph builder methods.

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::input(Tensor<Real> v,
                                                bool requires_grad) {
  auto n = std::make_unique<nodes::Input<Real>>();
  n->value = std::move(v);
  n->needs_grad = requires_grad;
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::param(std::size_t entry_index) {
  check(entry_index < params().size(), "param entry index out of range");
  auto n = std::make_unique<nodes::Param<Real>>();
  n->param_entry = static_cast<int>(entry_index);
  n->needs_grad = params().entry(entry_index).trainable;
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::dense(NodeId x, NodeId w, NodeId b) {
  auto n = std::make_unique<nodes::Dense<Real>>();
  n->ins = {x, w, b};
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::conv2d(NodeId x, NodeId w, NodeId b,
                                                 std::size_t stride,
                                                 std::size_t pad) {
  auto n = std::make_unique<nodes::Conv2d<Real>>();
  n->ins = {x, w, b};
  n->stride = stride;
  n->pad = pad;
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::group_norm(NodeId x, NodeId gamma,
                                                     NodeId beta,
                                                     std::size_t groups,
                                                     Real eps) {
  auto n = std::make_unique<nodes::GroupNorm<Real>>();
  n->ins = {x, gamma, beta};
  n->groups = groups;
  n->eps = eps;
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::tanh(NodeId x) {
  auto n = std::make_unique<nodes::Tanh<Real>>();
  n->ins = {x};
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::relu(NodeId x) {
  auto n = std::make_unique<nodes::Relu<Real>>();
  n->ins = {x};
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::add(NodeId a, NodeId b) {
  auto n = std::make_unique<nodes::Add<Real>>();
  n->ins = {a, b};
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::mul(NodeId a, NodeId b) {
  auto n = std::make_unique<nodes::Mul<Real>>();
  n->ins = {a, b};
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::scale(NodeId x, Real c) {
  auto n = std::make_unique<nodes::Scale<Real>>();
  n->ins = {x};
  n->c = c;
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::max_pool2d(NodeId x,
                                                     std::size_t kernel,
                                                     std::size_t stride) {
  auto n = std::make_unique<nodes::MaxPool<Real>>();
  n->ins = {x};
  n->kernel = kernel;
  n->stride = stride;
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::flatten(NodeId x) {
  auto n = std::make_unique<nodes::Flatten<Real>>();
  n->ins = {x};
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

template <typename Real>
typename Graph<Real>::NodeId Graph<Real>::softmax_cross_entropy(
    NodeId logits, std::vector<int> labels) {
  auto n = std::make_unique<nodes::SoftmaxXent<Real>>();
  n->ins = {logits};
  n->labels = std::move(labels);
  n->needs_grad = any_needs_grad(n->ins);
  n->forward(*this);
  return push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward entry points.

// Gradient of sum_i weights[i] * losses[i] over trainable parameters,
// flattened in parameter order. One backward pass.
template <typename Real>
std::vector<Real> weighted_backward(Graph<Real>& g,
                                    typename Graph<Real>::NodeId losses,
                                    const std::vector<Real>& weights) {
  const Tensor<Real>& lv = g.value(losses);
  check(lv.rank() == 1, "losses node must be rank 1 [B]");
  check(weights.size() == lv.dim(0),
        "weights length " + std::to_string(weights.size()) +
            " does not match batch " + std::to_string(lv.dim(0)));
  std::vector<Real> flat(g.params().trainable_size(), Real(0));
  Tensor<Real> seed({weights.size()}, weights);
  g.run_backward(losses, seed, GradMode::kAccumulate, &flat, nullptr);
  return flat;
}

// Per-example gradient norms in one backward pass, without materializing the
// per-example gradient set.
template <typename Real>
std::vector<Real> per_example_grad_norms(Graph<Real>& g,
                                         typename Graph<Real>::NodeId losses) {
  const Tensor<Real>& lv = g.value(losses);
  check(lv.rank() == 1, "losses node must be rank 1 [B]");
  const std::size_t b = lv.dim(0);
  std::vector<Real> norm_sq(b, Real(0));
  Tensor<Real> seed = Tensor<Real>::full({b}, Real(1));
  g.run_backward(losses, seed, GradMode::kPerExampleNormSq, nullptr, &norm_sq);
  std::vector<Real> norms(b);
  for (std::size_t i = 0; i < b; ++i) norms[i] = std::sqrt(norm_sq[i]);
  return norms;
}

// Naive oracle: one backward pass per example. Entry i is the gradient of
// losses[i] over trainable parameters.
template <typename Real>
std::vector<std::vector<Real>> per_example_grads(
    Graph<Real>& g, typename Graph<Real>::NodeId losses) {
  const Tensor<Real>& lv = g.value(losses);
  check(lv.rank() == 1, "losses node must be rank 1 [B]");
  const std::size_t b = lv.dim(0);
  std::vector<std::vector<Real>> grads;
  grads.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<Real> flat(g.params().trainable_size(), Real(0));
    Tensor<Real> seed({b});
    seed[i] = Real(1);
    g.run_backward(losses, seed, GradMode::kAccumulate, &flat, nullptr);
    grads.push_back(std::move(flat));
  }
  return grads;
}

}  // namespace dptrain
