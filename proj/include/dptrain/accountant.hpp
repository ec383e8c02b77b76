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

// Renyi-DP accounting for the Poisson-subsampled Gaussian mechanism.
//
// One step of DP-SGD with sampling rate q and noise multiplier sigma has an
// analytic RDP value at every order alpha > 1:
//   - q = 1: alpha / (2 sigma^2) exactly.
//   - integer alpha: the binomial expansion
//       RDP(a) = logsumexp_j [ logC(a,j) + j log q + (a-j) log(1-q)
//                              + (j^2 - j)/(2 sigma^2) ] / (a - 1)
//   - fractional alpha: the two-sided erfc series over the mixture split
//     point z0 = sigma^2 log(1/q - 1) + 1/2, with signed binomial
//     coefficients, accumulated in log space until terms fall below e^-30.
// Composition over T steps is T times the one-step value; conversion to
// (eps, delta) takes the minimum over the order grid.
//
// Everything is computed in log space so extreme regimes (sigma ~ 0.003,
// eps ~ 1e7) return large finite numbers instead of overflowing.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dptrain/tensor.hpp"  // check/fail

namespace dptrain {

namespace rdp {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kInf = std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// log(exp(a) - exp(b)) for a >= b.
inline double log_sub(double a, double b) {
  if (b == kNegInf) return a;
  check(a >= b - 1e-9, "log_sub of a negative quantity");
  if (a <= b) return kNegInf;
  const double d = b - a;  // < 0; switch forms at -log 2 for accuracy
  return a + (d > -0.6931471805599453 ? std::log(-std::expm1(d))
                                      : std::log1p(-std::exp(d)));
}

inline double log_erfc(double x) {
  if (x < 25.0) return std::log(std::erfc(x));
  // Asymptotic expansion: erfc(x) ~ e^{-x^2}/(x sqrt(pi)) (1 - 1/(2x^2) + ...)
  const double x2 = x * x;
  const double corr =
      1.0 - 0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2);
  return -x2 - std::log(x) - 0.5 * std::log(3.14159265358979323846) +
         std::log(corr);
}

inline double lgamma_int(unsigned n) {  // log((n-1)!)
  static const std::vector<double> table = [] {
    std::vector<double> t(600);
    for (unsigned i = 0; i < t.size(); ++i) t[i] = std::lgamma(double(i));
    return t;
  }();
  return n < table.size() ? table[n] : std::lgamma(double(n));
}

// log binom(a, j) for integers 0 <= j <= a.
inline double log_choose(unsigned a, unsigned j) {
  return lgamma_int(a + 1) - lgamma_int(j + 1) - lgamma_int(a - j + 1);
}

// One-step RDP at integer order a >= 2, q in (0,1).
inline double log_a_int(double q, double sigma, unsigned a) {
  const double lq = std::log(q), l1q = std::log1p(-q);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  double acc = kNegInf;
  for (unsigned j = 0; j <= a; ++j) {
    double t = log_choose(a, j) + double(j) * (j - 1.0) * inv2s2;
    if (j > 0) t += double(j) * lq;
    if (j < a) t += double(a - j) * l1q;
    acc = log_add(acc, t);
  }
  return acc;
}

// One-step RDP numerator at fractional order alpha > 1, q in (0,1).
inline double log_a_frac(double q, double sigma, double alpha) {
  const double lq = std::log(q), l1q = std::log1p(-q);
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  const double sqrt2s = std::sqrt(2.0) * sigma;
  const double log_half = std::log(0.5);

  double log_a0 = kNegInf, log_a1 = kNegInf;
  double log_coef = 0.0;  // log |binom(alpha, i)|, i = 0
  int sign = 1;
  for (int i = 0;; ++i) {
    check(i < 10000, "fractional-order RDP series failed to converge");
    const double j = alpha - i;
    const double log_t0 = log_coef + i * lq + j * l1q;
    const double log_t1 = log_coef + j * lq + i * l1q;
    const double log_e0 = log_half + log_erfc((i - z0) / sqrt2s);
    const double log_e1 = log_half + log_erfc((z0 - j) / sqrt2s);
    const double log_s0 = log_t0 + (double(i) * i - i) * inv2s2 + log_e0;
    const double log_s1 = log_t1 + (j * j - j) * inv2s2 + log_e1;
    if (sign > 0) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0 && double(i) > alpha) break;
    // binom(alpha, i+1) = binom(alpha, i) * (alpha - i) / (i + 1)
    const double f = (alpha - i) / (i + 1.0);
    if (f == 0.0) break;
    if (f < 0) sign = -sign;
    log_coef += std::log(std::fabs(f));
  }
  return log_add(log_a0, log_a1);
}

}  // namespace rdp

// Fractional orders 1.1 .. 10.9 (step 0.1) plus integers 2 .. 256.
inline std::vector<double> default_rdp_orders() {
  std::vector<double> orders;
  for (int k = 11; k <= 109; ++k) {
    if (k % 10 == 0) continue;  // integers covered below
    orders.push_back(k / 10.0);
  }
  for (int a = 2; a <= 256; ++a) orders.push_back(double(a));
  std::sort(orders.begin(), orders.end());
  return orders;
}

// RDP of a single subsampled-Gaussian step at each order.
inline std::vector<double> rdp_step(double q, double sigma,
                                    const std::vector<double>& orders) {
  check(q > 0 && q <= 1, "sampling rate q must be in (0, 1], got " +
                             std::to_string(q));
  check(sigma >= 0, "noise multiplier must be non-negative");
  std::vector<double> out(orders.size());
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const double a = orders[i];
    check(a > 1, "RDP orders must be > 1");
    if (sigma == 0) {
      out[i] = rdp::kInf;
    } else if (q == 1.0) {
      out[i] = a / (2.0 * sigma * sigma);
    } else {
      const bool integral = std::fabs(a - std::round(a)) < 1e-9;
      const double log_a =
          integral
              ? rdp::log_a_int(q, sigma, static_cast<unsigned>(std::round(a)))
              : rdp::log_a_frac(q, sigma, a);
      out[i] = std::max(0.0, log_a / (a - 1.0));
    }
  }
  return out;
}

enum class RdpConversion {
  kTight,   // eps = rdp + log1p(-1/a) - (log(delta) + log(a)) / (a - 1)
  kClassic  // eps = rdp + log(1/delta) / (a - 1)
};

struct EpsilonResult {
  double epsilon = 0;
  double best_order = 0;
};

inline EpsilonResult epsilon_from_rdp(const std::vector<double>& orders,
                                      const std::vector<double>& rdp_values,
                                      double delta,
                                      RdpConversion conv = RdpConversion::kTight) {
  check(delta > 0 && delta < 1, "delta must be in (0, 1)");
  check(orders.size() == rdp_values.size(),
        "orders and RDP vectors must align");
  EpsilonResult best{rdp::kInf, 0};
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const double a = orders[i], r = rdp_values[i];
    if (r == rdp::kInf) continue;
    double e;
    if (conv == RdpConversion::kClassic) {
      e = r + std::log(1.0 / delta) / (a - 1.0);
    } else {
      e = r + std::log1p(-1.0 / a) -
          (std::log(delta) + std::log(a)) / (a - 1.0);
    }
    if (e < best.epsilon) best = {e, a};
  }
  if (best.epsilon == rdp::kInf) return {rdp::kInf, 0};
  best.epsilon = std::max(0.0, best.epsilon);
  return best;
}

// Accumulated RDP over a training run.
struct AccountantState {
  std::vector<double> orders;
  std::vector<double> rdp;
  double q = 0;
  double sigma = 0;
  long steps = 0;

  static AccountantState fresh(std::vector<double> orders = default_rdp_orders()) {
    AccountantState s;
    s.rdp.assign(orders.size(), 0.0);
    s.orders = std::move(orders);
    return s;
  }

  void compose(double q_in, double sigma_in, long steps_in) {
    check(steps_in >= 0, "steps must be non-negative");
    if (steps_in == 0) return;
    const std::vector<double> one = rdp_step(q_in, sigma_in, orders);
    for (std::size_t i = 0; i < rdp.size(); ++i)
      rdp[i] += steps_in * one[i];
    q = q_in;
    sigma = sigma_in;
    steps += steps_in;
  }

  EpsilonResult epsilon(double delta,
                        RdpConversion conv = RdpConversion::kTight) const {
    if (steps == 0) return {0.0, 0.0};
    return epsilon_from_rdp(orders, rdp, delta, conv);
  }
};

inline EpsilonResult compute_epsilon_full(
    double sigma, double q, long steps, double delta,
    const std::vector<double>& orders = default_rdp_orders(),
    RdpConversion conv = RdpConversion::kTight) {
  check(steps >= 0, "steps must be non-negative");
  check(delta > 0 && delta < 1, "delta must be in (0, 1)");
  if (steps == 0) return {0.0, 0.0};
  if (sigma == 0) return {rdp::kInf, 0.0};
  std::vector<double> r = rdp_step(q, sigma, orders);
  for (double& v : r) {
    if (v != rdp::kInf) v *= steps;
  }
  return epsilon_from_rdp(orders, r, delta, conv);
}

inline double compute_epsilon(double sigma, double q, long steps, double delta,
                              RdpConversion conv = RdpConversion::kTight) {
  return compute_epsilon_full(sigma, q, steps, delta, default_rdp_orders(),
                              conv)
      .epsilon;
}

// Geometric-mean bisection: bracket [sigma_lo, sigma_hi] with
// eps(sigma_hi) <= target <= eps(sigma_lo), branch at sqrt(lo*hi), stop when
// the midpoint's epsilon is within 1e-4 relative of the target.
inline double find_noise_multiplier(double target_eps, double q, long steps,
                                    double delta,
                                    RdpConversion conv = RdpConversion::kTight) {
  check(target_eps > 0, "target epsilon must be positive");
  check(steps >= 1, "find_noise_multiplier requires steps >= 1");
  const auto eps_at = [&](double s) {
    return compute_epsilon(s, q, steps, delta, conv);
  };
  double lo = 1.0, hi = 1.0;
  int guard = 0;
  while (eps_at(hi) > target_eps) {
    lo = hi;
    hi *= 2.0;
    check(++guard < 200, "noise multiplier bracket expansion failed (high)");
  }
  guard = 0;
  while (eps_at(lo) < target_eps) {
    hi = lo;
    lo /= 2.0;
    check(++guard < 200,
          "target epsilon unreachable: bracket expansion failed (low)");
  }
  for (int it = 0; it < 1000; ++it) {
    const double mid = std::sqrt(lo * hi);
    const double e = eps_at(mid);
    if (std::fabs(e - target_eps) / target_eps < 1e-4) return mid;
    if (e > target_eps) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  fail("noise multiplier search did not converge");
}

// (delta, epsilon) pairs over an ascending delta grid.
inline std::vector<std::pair<double, double>> epsilon_curve(
    double sigma, double q, long steps, const std::vector<double>& delta_grid,
    RdpConversion conv = RdpConversion::kTight) {
  check(!delta_grid.empty(), "delta grid must be non-empty");
  for (std::size_t i = 0; i < delta_grid.size(); ++i) {
    check(delta_grid[i] > 0 && delta_grid[i] < 1,
          "delta grid entries must be in (0, 1)");
    if (i) check(delta_grid[i] > delta_grid[i - 1],
                 "delta grid must be sorted ascending");
  }
  const std::vector<double> orders = default_rdp_orders();
  std::vector<double> r = rdp_step(q, sigma, orders);
  for (double& v : r)
    if (v != rdp::kInf) v *= steps;
  std::vector<std::pair<double, double>> out;
  out.reserve(delta_grid.size());
  for (const double d : delta_grid) {
    out.emplace_back(d, steps == 0
                            ? 0.0
                            : epsilon_from_rdp(orders, r, d, conv).epsilon);
  }
  return out;
}

struct BatchCurveRow {
  std::size_t batch = 0;
  double sigma = 0;
  double q = 0;
  double epsilon = 0;
};

// Scales sigma proportionally to batch size (fixed noise/batch ratio) at
// fixed steps; epsilon strictly improves as batch grows.
inline std::vector<BatchCurveRow> batch_scaling_curve(
    double base_sigma, std::size_t base_batch, std::size_t n, long steps,
    double delta, const std::vector<std::size_t>& batch_grid,
    RdpConversion conv = RdpConversion::kTight) {
  check(base_batch >= 1 && n >= 1, "batch and dataset sizes must be >= 1");
  std::vector<BatchCurveRow> rows;
  rows.reserve(batch_grid.size());
  for (const std::size_t b : batch_grid) {
    check(b >= 1 && b <= n,
          "batch size " + std::to_string(b) + " outside [1, n]");
    BatchCurveRow row;
    row.batch = b;
    row.sigma = base_sigma * static_cast<double>(b) /
                static_cast<double>(base_batch);
    row.q = static_cast<double>(b) / static_cast<double>(n);
    row.epsilon = compute_epsilon(row.sigma, row.q, steps, delta, conv);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace dptrain
