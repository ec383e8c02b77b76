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

#include "dptrain/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

namespace dptrain {
namespace {

// Published Philox4x32-10 known-answer vectors.
TEST(Philox, KnownAnswerVectors) {
  const auto z = detail::philox4x32({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(z[0], 0x6627e8d5u);
  EXPECT_EQ(z[1], 0xe169c58du);
  EXPECT_EQ(z[2], 0xbc57ac4cu);
  EXPECT_EQ(z[3], 0x9b00dbd8u);

  const auto o =
      detail::philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                         {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(o[0], 0x408f276du);
  EXPECT_EQ(o[1], 0x41c83b0eu);
  EXPECT_EQ(o[2], 0xa20bc7c6u);
  EXPECT_EQ(o[3], 0x6d5451fdu);

  const auto p =
      detail::philox4x32({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                         {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(p[0], 0xd16cfe09u);
  EXPECT_EQ(p[1], 0x94fdccebu);
  EXPECT_EQ(p[2], 0x5001e420u);
  EXPECT_EQ(p[3], 0x24126ea1u);
}

TEST(Streams, DeriveStreamSeparates) {
  std::set<std::uint64_t> seen;
  for (const std::uint64_t tag :
       {rng_stream::kNoise, rng_stream::kInit, rng_stream::kPoisson,
        rng_stream::kShuffle, rng_stream::kData, rng_stream::kTest}) {
    for (std::uint64_t a = 0; a < 8; ++a) {
      for (std::uint64_t b = 0; b < 8; ++b) {
        seen.insert(derive_stream(tag, a, b));
      }
    }
  }
  EXPECT_EQ(seen.size(), 6u * 8u * 8u);
}

TEST(CounterRng, DeterministicAndKeyed) {
  const CounterRng a(42, derive_stream(rng_stream::kTest, 1));
  const CounterRng b(42, derive_stream(rng_stream::kTest, 1));
  const CounterRng c(43, derive_stream(rng_stream::kTest, 1));
  const CounterRng d(42, derive_stream(rng_stream::kTest, 2));
  for (std::uint64_t i = 0; i < 64; ++i) {
    EXPECT_EQ(a.uniform(i), b.uniform(i));
    EXPECT_NE(a.uniform(i), c.uniform(i));
    EXPECT_NE(a.uniform(i), d.uniform(i));
  }
}

TEST(CounterRng, UniformRangeAndMoments) {
  const CounterRng rng(7, derive_stream(rng_stream::kTest, 0));
  const std::size_t n = 200000;
  double sum = 0, sum_sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform(i);
    ASSERT_GT(u, 0.0);
    ASSERT_LE(u, 1.0);
    sum += u;
    sum_sq += u * u;
  }
  const double mean = sum / n;
  const double var = sum_sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 0.005);
  EXPECT_NEAR(var, 1.0 / 12.0, 0.002);
}

TEST(CounterRng, GaussianMoments) {
  const CounterRng rng(11, derive_stream(rng_stream::kTest, 3));
  const std::size_t n = 400000;
  double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = rng.gaussian(i);
    s1 += g;
    s2 += g * g;
    s3 += g * g * g;
    s4 += g * g * g * g;
  }
  EXPECT_NEAR(s1 / n, 0.0, 0.01);
  EXPECT_NEAR(s2 / n, 1.0, 0.02);
  EXPECT_NEAR(s3 / n, 0.0, 0.05);
  EXPECT_NEAR(s4 / n, 3.0, 0.1);  // normal kurtosis
}

TEST(CounterRng, BelowStaysInRangeAndCoversValues) {
  const CounterRng rng(5, derive_stream(rng_stream::kTest, 4));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 4000; ++i) {
    const std::uint64_t v = rng.below(i, 17);
    ASSERT_LT(v, 17u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 17u);
}

}  // namespace
}  // namespace dptrain
