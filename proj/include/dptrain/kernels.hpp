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

// Forward numeric kernels over Tensor. Matrix products and the im2col
// convolution path dispatch to BLAS; direct-loop variants are kept alongside
// (conv2d_naive) because the two implementations must agree and the loops are
// the reference semantics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <cblas.h>

#include "dptrain/tensor.hpp"

namespace dptrain {

template <typename Real>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, Real alpha, const Real* a, std::size_t lda,
          const Real* b, std::size_t ldb, Real beta, Real* c,
          std::size_t ldc) {
  static_assert(std::is_same_v<Real, double> || std::is_same_v<Real, float>,
                "gemm supports float and double");
  const CBLAS_TRANSPOSE ta = trans_a ? CblasTrans : CblasNoTrans;
  const CBLAS_TRANSPOSE tb = trans_b ? CblasTrans : CblasNoTrans;
  if constexpr (std::is_same_v<Real, double>) {
    cblas_dgemm(CblasRowMajor, ta, tb, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                static_cast<int>(ldc));
  } else {
    cblas_sgemm(CblasRowMajor, ta, tb, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                static_cast<int>(ldc));
  }
}

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check(a.rank() == 2 && b.rank() == 2,
        "matmul expects rank-2 tensors, got " + a.shape_str() + " and " +
            b.shape_str());
  check(a.dim(1) == b.dim(0), "matmul inner extents disagree: " +
                                  a.shape_str() + " times " + b.shape_str());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<Real> c({m, n});
  if (m && n && k) {
    gemm<Real>(false, false, m, n, k, Real(1), a.data(), k, b.data(), n,
               Real(0), c.data(), n);
  }
  return c;
}

// ---------------------------------------------------------------------------
// Elementwise kernels.

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  check(a.same_shape(b),
        "add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor<Real> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b[i];
  return y;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check(a.same_shape(b),
        "mul shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
  Tensor<Real> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b[i];
  return y;
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
  Tensor<Real> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c;
  return y;
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& a) {
  Tensor<Real> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(y[i]);
  return y;
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
  Tensor<Real> y = a;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(Real(0), y[i]);
  return y;
}

template <typename Real>
Real sum(const Tensor<Real>& a) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  return s;
}

template <typename Real>
Real mean(const Tensor<Real>& a) {
  check(a.size() > 0, "mean of empty tensor");
  return sum(a) / static_cast<Real>(a.size());
}

// Collapses all trailing axes: [B, ...] -> [B, prod(...)].
template <typename Real>
Tensor<Real> flatten(const Tensor<Real>& x) {
  check(x.rank() >= 1, "flatten expects rank >= 1");
  const std::size_t b = x.dim(0);
  const std::size_t rest = b ? x.size() / b : 0;
  return x.reshaped({b, rest});
}

// x: [B, O] plus row-broadcast bias [O].
template <typename Real>
Tensor<Real> add_row_bias(const Tensor<Real>& x, const Tensor<Real>& bias) {
  check(x.rank() == 2 && bias.rank() == 1 && x.dim(1) == bias.dim(0),
        "bias shape mismatch: " + x.shape_str() + " vs " + bias.shape_str());
  Tensor<Real> y = x;
  const std::size_t b = x.dim(0), o = x.dim(1);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < o; ++j) y[i * o + j] += bias[j];
  return y;
}

// y: [B, F, H, W] plus channel-broadcast bias [F], in place.
template <typename Real>
void add_channel_bias(Tensor<Real>& y, const Tensor<Real>& bias) {
  check(y.rank() == 4 && bias.rank() == 1 && y.dim(1) == bias.dim(0),
        "channel bias shape mismatch: " + y.shape_str() + " vs " +
            bias.shape_str());
  const std::size_t b = y.dim(0), f = y.dim(1), hw = y.dim(2) * y.dim(3);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t c = 0; c < f; ++c) {
      Real* row = y.data() + (i * f + c) * hw;
      for (std::size_t s = 0; s < hw; ++s) row[s] += bias[c];
    }
}

// Column sums of [B, O] -> [O].
template <typename Real>
Tensor<Real> colsum(const Tensor<Real>& x) {
  check(x.rank() == 2, "colsum expects rank-2 tensor");
  const std::size_t b = x.dim(0), o = x.dim(1);
  Tensor<Real> s({o});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < o; ++j) s[j] += x[i * o + j];
  return s;
}

// ---------------------------------------------------------------------------
// Convolution.

struct Conv2dGeom {
  std::size_t batch, in_channels, in_h, in_w;
  std::size_t out_channels, kh, kw;
  std::size_t stride, pad;
  std::size_t out_h, out_w;

  static Conv2dGeom resolve(const std::vector<std::size_t>& x_shape,
                            const std::vector<std::size_t>& w_shape,
                            std::size_t stride, std::size_t pad) {
    check(x_shape.size() == 4, "conv2d input must be rank 4 [BxCxHxW], got " +
                                   shape_string(x_shape));
    check(w_shape.size() == 4,
          "conv2d weight must be rank 4 [FxCxkhxkw], got " +
              shape_string(w_shape));
    check(stride >= 1, "conv2d stride must be >= 1");
    Conv2dGeom g;
    g.batch = x_shape[0];
    g.in_channels = x_shape[1];
    g.in_h = x_shape[2];
    g.in_w = x_shape[3];
    g.out_channels = w_shape[0];
    g.kh = w_shape[2];
    g.kw = w_shape[3];
    g.stride = stride;
    g.pad = pad;
    check(w_shape[1] == g.in_channels,
          "conv2d channel mismatch: input " + shape_string(x_shape) +
              " vs weight " + shape_string(w_shape));
    check(g.kh <= g.in_h + 2 * pad && g.kw <= g.in_w + 2 * pad,
          "conv2d kernel larger than padded input");
    const std::size_t ph = g.in_h + 2 * pad, pw = g.in_w + 2 * pad;
    check(ph >= g.kh && pw >= g.kw && (ph - g.kh) / stride + 1 > 0 &&
              (pw - g.kw) / stride + 1 > 0,
          "conv2d output extent is non-positive");
    g.out_h = (ph - g.kh) / stride + 1;
    g.out_w = (pw - g.kw) / stride + 1;
    return g;
  }

  std::size_t col_rows() const { return in_channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
};

// Unfolds one example [C,H,W] into columns [C*kh*kw, OH*OW].
template <typename Real>
void im2col(const Real* x, const Conv2dGeom& g, Real* col) {
  const std::size_t ohw = g.col_cols();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Real* row = col + ((c * g.kh + ki) * g.kw + kj) * ohw;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
              static_cast<std::ptrdiff_t>(g.pad);
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                static_cast<std::ptrdiff_t>(g.pad);
            Real v = 0;
            if (ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.in_h) &&
                iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in_w)) {
              v = x[(c * g.in_h + ih) * g.in_w + iw];
            }
            row[oh * g.out_w + ow] = v;
          }
        }
      }
    }
  }
}

// Accumulates columns [C*kh*kw, OH*OW] back into one example [C,H,W].
template <typename Real>
void col2im_accumulate(const Real* col, const Conv2dGeom& g, Real* x) {
  const std::size_t ohw = g.col_cols();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Real* row = col + ((c * g.kh + ki) * g.kw + kj) * ohw;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
              static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                static_cast<std::ptrdiff_t>(g.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            x[(c * g.in_h + ih) * g.in_w + iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

// Cross-correlation with zero padding, im2col + matrix product per example.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w,
                    std::size_t stride, std::size_t pad) {
  const Conv2dGeom g = Conv2dGeom::resolve(x.shape(), w.shape(), stride, pad);
  Tensor<Real> y({g.batch, g.out_channels, g.out_h, g.out_w});
  std::vector<Real> col(g.col_rows() * g.col_cols());
  const std::size_t x_stride = g.in_channels * g.in_h * g.in_w;
  const std::size_t y_stride = g.out_channels * g.col_cols();
  for (std::size_t i = 0; i < g.batch; ++i) {
    im2col(x.data() + i * x_stride, g, col.data());
    gemm<Real>(false, false, g.out_channels, g.col_cols(), g.col_rows(),
               Real(1), w.data(), g.col_rows(), col.data(), g.col_cols(),
               Real(0), y.data() + i * y_stride, g.col_cols());
  }
  return y;
}

// Direct six-loop reference; must agree with conv2d.
template <typename Real>
Tensor<Real> conv2d_naive(const Tensor<Real>& x, const Tensor<Real>& w,
                          std::size_t stride, std::size_t pad) {
  const Conv2dGeom g = Conv2dGeom::resolve(x.shape(), w.shape(), stride, pad);
  Tensor<Real> y({g.batch, g.out_channels, g.out_h, g.out_w});
  for (std::size_t i = 0; i < g.batch; ++i)
    for (std::size_t f = 0; f < g.out_channels; ++f)
      for (std::size_t oh = 0; oh < g.out_h; ++oh)
        for (std::size_t ow = 0; ow < g.out_w; ++ow) {
          Real acc = 0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kh; ++ki)
              for (std::size_t kj = 0; kj < g.kw; ++kj) {
                const std::ptrdiff_t ih =
                    static_cast<std::ptrdiff_t>(oh * g.stride + ki) -
                    static_cast<std::ptrdiff_t>(g.pad);
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(ow * g.stride + kj) -
                    static_cast<std::ptrdiff_t>(g.pad);
                if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h) ||
                    iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w))
                  continue;
                acc += x.at(i, c, static_cast<std::size_t>(ih),
                            static_cast<std::size_t>(iw)) *
                       w.at(f, c, ki, kj);
              }
          y.at(i, f, oh, ow) = acc;
        }
  return y;
}

// ---------------------------------------------------------------------------
// Group normalization. Statistics are strictly per example and per channel
// group; nothing ever crosses the batch axis.

template <typename Real>
void group_norm_forward(const Tensor<Real>& x, std::size_t num_groups,
                        const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps, Tensor<Real>* y, Tensor<Real>* mean_out,
                        Tensor<Real>* rstd_out) {
  check(x.rank() == 4, "group_norm expects [BxCxHxW], got " + x.shape_str());
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  check(num_groups >= 1 && c % num_groups == 0,
        "group_norm: channels " + std::to_string(c) +
            " not divisible by num_groups " + std::to_string(num_groups));
  check(eps > 0, "group_norm eps must be positive");
  check(gamma.rank() == 1 && gamma.dim(0) == c && beta.rank() == 1 &&
            beta.dim(0) == c,
        "group_norm affine params must be [C]");
  const std::size_t cg = c / num_groups;   // channels per group
  const std::size_t m = cg * hw;           // elements per (example, group)
  *y = Tensor<Real>(x.shape());
  *mean_out = Tensor<Real>({b, num_groups});
  *rstd_out = Tensor<Real>({b, num_groups});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t g = 0; g < num_groups; ++g) {
      const Real* xs = x.data() + (i * c + g * cg) * hw;
      Real mu = 0;
      for (std::size_t t = 0; t < m; ++t) mu += xs[t];
      mu /= static_cast<Real>(m);
      Real var = 0;
      for (std::size_t t = 0; t < m; ++t) {
        const Real d = xs[t] - mu;
        var += d * d;
      }
      var /= static_cast<Real>(m);
      const Real rstd = Real(1) / std::sqrt(var + eps);
      (*mean_out)[i * num_groups + g] = mu;
      (*rstd_out)[i * num_groups + g] = rstd;
      Real* ys = y->data() + (i * c + g * cg) * hw;
      for (std::size_t ch = 0; ch < cg; ++ch) {
        const Real ga = gamma[g * cg + ch], be = beta[g * cg + ch];
        for (std::size_t s = 0; s < hw; ++s) {
          const std::size_t t = ch * hw + s;
          ys[t] = ga * ((xs[t] - mu) * rstd) + be;
        }
      }
    }
  }
}

template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, std::size_t num_groups,
                        const Tensor<Real>& gamma, const Tensor<Real>& beta,
                        Real eps) {
  Tensor<Real> y, mu, rstd;
  group_norm_forward(x, num_groups, gamma, beta, eps, &y, &mu, &rstd);
  return y;
}

// ---------------------------------------------------------------------------
// Max pooling (no padding). Records the argmax position inside each window so
// the backward pass can scatter.

template <typename Real>
void max_pool2d_forward(const Tensor<Real>& x, std::size_t kernel,
                        std::size_t stride, Tensor<Real>* y,
                        std::vector<std::int64_t>* argmax) {
  check(x.rank() == 4, "max_pool2d expects [BxCxHxW], got " + x.shape_str());
  check(kernel >= 1 && stride >= 1, "max_pool2d kernel/stride must be >= 1");
  const std::size_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  check(kernel <= h && kernel <= w,
        "max_pool2d kernel larger than input " + x.shape_str());
  const std::size_t oh = (h - kernel) / stride + 1;
  const std::size_t ow = (w - kernel) / stride + 1;
  *y = Tensor<Real>({b, c, oh, ow});
  if (argmax) argmax->assign(b * c * oh * ow, 0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real* xs = x.data() + (i * c + ch) * h * w;
      Real* ys = y->data() + (i * c + ch) * oh * ow;
      for (std::size_t p = 0; p < oh; ++p)
        for (std::size_t q = 0; q < ow; ++q) {
          Real best = xs[p * stride * w + q * stride];
          std::size_t best_at = p * stride * w + q * stride;
          for (std::size_t ki = 0; ki < kernel; ++ki)
            for (std::size_t kj = 0; kj < kernel; ++kj) {
              const std::size_t t = (p * stride + ki) * w + (q * stride + kj);
              if (xs[t] > best) {
                best = xs[t];
                best_at = t;
              }
            }
          ys[p * ow + q] = best;
          if (argmax)
            (*argmax)[((i * c + ch) * oh + p) * ow + q] =
                static_cast<std::int64_t>(best_at);
        }
    }
}

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& x, std::size_t kernel,
                        std::size_t stride) {
  Tensor<Real> y;
  max_pool2d_forward(x, kernel, stride, &y, nullptr);
  return y;
}

// ---------------------------------------------------------------------------
// Per-example softmax cross-entropy, log-sum-exp form.

template <typename Real>
void softmax_cross_entropy_forward(const Tensor<Real>& logits,
                                   const std::vector<int>& labels,
                                   Tensor<Real>* losses,
                                   Tensor<Real>* probs_out) {
  check(logits.rank() == 2, "softmax_cross_entropy expects [BxK] logits");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  check(labels.size() == b, "labels length " + std::to_string(labels.size()) +
                                " does not match batch " + std::to_string(b));
  *losses = Tensor<Real>({b});
  if (probs_out) *probs_out = Tensor<Real>({b, k});
  for (std::size_t i = 0; i < b; ++i) {
    check(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < k,
          "label " + std::to_string(labels[i]) + " out of range [0, " +
              std::to_string(k) + ")");
    const Real* row = logits.data() + i * k;
    Real mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    Real se = 0;
    for (std::size_t j = 0; j < k; ++j) se += std::exp(row[j] - mx);
    const Real lse = mx + std::log(se);
    (*losses)[i] = lse - row[labels[i]];
    if (probs_out) {
      Real* ps = probs_out->data() + i * k;
      for (std::size_t j = 0; j < k; ++j) ps[j] = std::exp(row[j] - lse);
    }
  }
}

template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                   const std::vector<int>& labels) {
  Tensor<Real> losses;
  softmax_cross_entropy_forward<Real>(logits, labels, &losses, nullptr);
  return losses;
}

}  // namespace dptrain
