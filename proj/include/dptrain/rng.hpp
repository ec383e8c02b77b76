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

// Counter-based random number generation (Philox 4x32-10).
//
// Every draw is a pure function of (seed, stream, index), so noise added by
// shard 3 of step 17 is the same number whether shards run serially, in
// parallel, or in any order. This is what makes training trajectories
// bit-reproducible from (config, seed) alone.

#include <array>
#include <cmath>
#include <cstdint>

namespace dptrain {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

namespace detail {

inline void philox_round(std::array<std::uint32_t, 4>& c,
                         const std::array<std::uint32_t, 2>& k) {
  const std::uint64_t p0 = std::uint64_t{0xD2511F53u} * c[0];
  const std::uint64_t p1 = std::uint64_t{0xCD9E8D57u} * c[2];
  const std::array<std::uint32_t, 4> n = {
      static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0],
      static_cast<std::uint32_t>(p1),
      static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1],
      static_cast<std::uint32_t>(p0)};
  c = n;
}

inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) {
    philox_round(ctr, key);
    key[0] += 0x9E3779B9u;
    key[1] += 0xBB67AE85u;
  }
  return ctr;
}

}  // namespace detail

// Well-known purpose tags; combined with payload values via derive_stream.
namespace rng_stream {
constexpr std::uint64_t kNoise = 0x6e6f697365ULL;
constexpr std::uint64_t kInit = 0x696e6974ULL;
constexpr std::uint64_t kPoisson = 0x706f6973ULL;
constexpr std::uint64_t kShuffle = 0x73687566ULL;
constexpr std::uint64_t kData = 0x64617461ULL;
constexpr std::uint64_t kTest = 0x74657374ULL;
}  // namespace rng_stream

constexpr std::uint64_t derive_stream(std::uint64_t tag, std::uint64_t a = 0,
                                      std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(tag) ^ a) ^ b);
}

// A keyed stream of random values addressable by index. Stateless: the i-th
// uniform/gaussian of a given (seed, stream) is always the same value.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : stream_(stream) {
    const std::uint64_t k = splitmix64(seed ^ 0xD1B54A32D192ED03ULL);
    key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
  }

  // 128 random bits for position i.
  std::array<std::uint32_t, 4> block(std::uint64_t i) const {
    return detail::philox4x32(
        {static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i >> 32),
         static_cast<std::uint32_t>(stream_),
         static_cast<std::uint32_t>(stream_ >> 32)},
        key_);
  }

  // Uniform on (0, 1].
  double uniform(std::uint64_t i) const {
    const auto b = block(i);
    const std::uint64_t v = (std::uint64_t{b[0]} << 32) | b[1];
    return static_cast<double>((v >> 11) + 1) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; one value per index.
  double gaussian(std::uint64_t i) const {
    const auto b = block(i);
    const std::uint64_t v1 = (std::uint64_t{b[0]} << 32) | b[1];
    const std::uint64_t v2 = (std::uint64_t{b[2]} << 32) | b[3];
    const double u1 = static_cast<double>((v1 >> 11) + 1) * 0x1.0p-53;  // (0,1]
    const double u2 = static_cast<double>(v2 >> 11) * 0x1.0p-53;        // [0,1)
    constexpr double kTwoPi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Uniform integer in [0, bound), for shuffles. bound must be > 0.
  std::uint64_t below(std::uint64_t i, std::uint64_t bound) const {
    const auto b = block(i);
    const std::uint64_t v = (std::uint64_t{b[0]} << 32) | b[1];
    // Multiply-shift mapping; bias is O(bound/2^64), irrelevant here.
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(v) * bound) >> 64);
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint64_t stream_;
};

}  // namespace dptrain
