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

// Dataset ingestion and sampling. Readers are bit exact: parsing followed by
// the matching serializer reproduces the original bytes (pixel scaling and
// per-channel normalization are inverted by rounding back to the byte grid).
// Files may be gzip-compressed; the readers detect the gzip magic and
// inflate transparently. Datasets are immutable after load; samplers are
// single-consumer.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dptrain/rng.hpp"
#include "dptrain/tensor.hpp"

namespace dptrain {

struct Normalization {
  std::string scheme = "none";     // "scale255" | "per_channel" | "none"
  std::vector<double> mean, stdev; // per channel, used by "per_channel"
};

template <typename Real>
struct Dataset {
  std::string name;
  Tensor<Real> x;  // [N, ...]
  std::vector<int> labels;
  int num_classes = 0;
  Normalization norm;

  std::size_t size() const { return labels.size(); }
  std::size_t example_size() const {
    return size() == 0 ? 0 : x.size() / x.dim(0);
  }
};

// Gathers rows by index into a minibatch (empty index list is valid).
template <typename Real>
Minibatch<Real> gather(const Dataset<Real>& ds,
                       const std::vector<std::size_t>& indices) {
  std::vector<std::size_t> shape = ds.x.shape();
  shape[0] = indices.size();
  Minibatch<Real> mb;
  mb.x = Tensor<Real>(shape);
  mb.y.resize(indices.size());
  const std::size_t row = ds.example_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    check(src < ds.size(), "gather index out of range");
    std::copy(ds.x.data() + src * row, ds.x.data() + (src + 1) * row,
              mb.x.data() + i * row);
    mb.y[i] = ds.labels[src];
  }
  return mb;
}

// ---------------------------------------------------------------------------
// File reading (plain or gzip).

inline std::vector<unsigned char> read_file_maybe_gzip(
    const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "cannot open " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(is)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 2 || raw[0] != 0x1f || raw[1] != 0x8b) return raw;

  std::vector<unsigned char> out;
  out.resize(std::max<std::size_t>(raw.size() * 4, 1 << 16));
  z_stream zs{};
  check(inflateInit2(&zs, 16 + MAX_WBITS) == Z_OK, "zlib init failed");
  zs.next_in = raw.data();
  zs.avail_in = static_cast<uInt>(raw.size());
  std::size_t written = 0;
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (written == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + written;
    zs.avail_out = static_cast<uInt>(out.size() - written);
    rc = inflate(&zs, Z_NO_FLUSH);
    written = out.size() - zs.avail_out;
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      fail("gzip decompression of " + path + " failed (zlib code " +
           std::to_string(rc) + ")");
    }
  }
  inflateEnd(&zs);
  out.resize(written);
  return out;
}

namespace detail {

inline std::uint32_t be32(const std::vector<unsigned char>& b,
                          std::size_t off, const std::string& path) {
  check(off + 4 <= b.size(), path + ": truncated at offset " +
                                 std::to_string(off) + " (wanted 4 bytes)");
  return (std::uint32_t(b[off]) << 24) | (std::uint32_t(b[off + 1]) << 16) |
         (std::uint32_t(b[off + 2]) << 8) | std::uint32_t(b[off + 3]);
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
  b.push_back(static_cast<unsigned char>(v >> 24));
  b.push_back(static_cast<unsigned char>(v >> 16));
  b.push_back(static_cast<unsigned char>(v >> 8));
  b.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// MNIST IDX. Images: big-endian magic 0x00000803, then N, rows, cols, then
// N*rows*cols unsigned bytes. Labels: magic 0x00000801, then N, then N bytes.

template <typename Real = double>
Dataset<Real> load_mnist_idx(const std::string& images_path,
                             const std::string& labels_path) {
  const auto img = read_file_maybe_gzip(images_path);
  const auto lab = read_file_maybe_gzip(labels_path);

  const std::uint32_t img_magic = detail::be32(img, 0, images_path);
  check(img_magic == 0x00000803,
        images_path + ": bad image magic at offset 0 (got 0x" +
            [&] { char b[16]; std::snprintf(b, sizeof b, "%08x", img_magic); return std::string(b); }() +
            ", want 0x00000803)");
  const std::size_t n = detail::be32(img, 4, images_path);
  const std::size_t rows = detail::be32(img, 8, images_path);
  const std::size_t cols = detail::be32(img, 12, images_path);
  const std::size_t need = 16 + n * rows * cols;
  check(img.size() == need, images_path + ": payload is " +
                                std::to_string(img.size()) + " bytes, want " +
                                std::to_string(need) +
                                " (truncated or trailing data)");

  const std::uint32_t lab_magic = detail::be32(lab, 0, labels_path);
  check(lab_magic == 0x00000801,
        labels_path + ": bad label magic at offset 0");
  const std::size_t ln = detail::be32(lab, 4, labels_path);
  check(ln == n, labels_path + ": " + std::to_string(ln) +
                     " labels for " + std::to_string(n) + " images");
  check(lab.size() == 8 + ln, labels_path + ": payload is " +
                                  std::to_string(lab.size()) +
                                  " bytes, want " + std::to_string(8 + ln));

  Dataset<Real> ds;
  ds.name = "mnist";
  ds.num_classes = 10;
  ds.norm.scheme = "scale255";
  ds.x = Tensor<Real>({n, 1, rows, cols});
  for (std::size_t i = 0; i < n * rows * cols; ++i) {
    ds.x[i] = static_cast<Real>(img[16 + i] / 255.0);
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = lab[8 + i];
    check(y >= 0 && y <= 9, labels_path + ": label " + std::to_string(y) +
                                " at offset " + std::to_string(8 + i) +
                                " outside [0,9]");
    ds.labels[i] = y;
  }
  return ds;
}

template <typename Real>
std::vector<unsigned char> serialize_mnist_images(const Dataset<Real>& ds) {
  check(ds.x.rank() == 4 && ds.x.dim(1) == 1, "not an MNIST-shaped dataset");
  std::vector<unsigned char> out;
  detail::put_be32(out, 0x00000803);
  detail::put_be32(out, static_cast<std::uint32_t>(ds.x.dim(0)));
  detail::put_be32(out, static_cast<std::uint32_t>(ds.x.dim(2)));
  detail::put_be32(out, static_cast<std::uint32_t>(ds.x.dim(3)));
  for (std::size_t i = 0; i < ds.x.size(); ++i) {
    out.push_back(static_cast<unsigned char>(
        std::lround(static_cast<double>(ds.x[i]) * 255.0)));
  }
  return out;
}

template <typename Real>
std::vector<unsigned char> serialize_mnist_labels(const Dataset<Real>& ds) {
  std::vector<unsigned char> out;
  detail::put_be32(out, 0x00000801);
  detail::put_be32(out, static_cast<std::uint32_t>(ds.labels.size()));
  for (const int y : ds.labels) out.push_back(static_cast<unsigned char>(y));
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary: each record is 1 label byte followed by 3072 pixel bytes
// (R, G, B planes, each 32x32 row-major). Pixels are scaled to [0,1] and
// standardized per channel; the constants live in the dataset object so the
// transform is invertible and reproducible from artifacts. Pass `use_norm`
// to standardize with externally supplied constants (a test split reuses the
// train split's) instead of computing them from this input.

template <typename Real = double>
Dataset<Real> load_cifar10_binary(const std::vector<std::string>& paths,
                                  const Normalization* use_norm = nullptr) {
  check(!paths.empty(), "load_cifar10_binary needs at least one file");
  constexpr std::size_t kRecord = 3073;
  std::vector<unsigned char> bytes;
  for (const std::string& p : paths) {
    const auto part = read_file_maybe_gzip(p);
    check(part.size() % kRecord == 0,
          p + ": size " + std::to_string(part.size()) +
              " is not a multiple of the 3073-byte record");
    bytes.insert(bytes.end(), part.begin(), part.end());
  }
  const std::size_t n = bytes.size() / kRecord;
  check(n >= 1, "CIFAR-10 input holds no records");

  Dataset<Real> ds;
  ds.name = "cifar10";
  ds.num_classes = 10;
  ds.x = Tensor<Real>({n, 3, 32, 32});
  ds.labels.resize(n);

  std::vector<double> mean(3, 0.0), var(3, 0.0);
  const double per_channel = static_cast<double>(n) * 1024.0;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kRecord;
    const int y = rec[0];
    check(y >= 0 && y <= 9, paths[0] + ": record " + std::to_string(i) +
                                " label " + std::to_string(y) +
                                " outside [0,9]");
    ds.labels[i] = y;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) {
        const double v = rec[1 + c * 1024 + p] / 255.0;
        ds.x[(i * 3 + c) * 1024 + p] = static_cast<Real>(v);
        mean[c] += v;
      }
    }
  }
  if (use_norm != nullptr) {
    check(use_norm->scheme == "per_channel" && use_norm->mean.size() == 3 &&
              use_norm->stdev.size() == 3,
          "supplied normalization is not a per-channel triple");
    ds.norm = *use_norm;
  } else {
    for (std::size_t c = 0; c < 3; ++c) mean[c] /= per_channel;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < 1024; ++p) {
          const double d = static_cast<double>(ds.x[(i * 3 + c) * 1024 + p]) -
                           mean[c];
          var[c] += d * d;
        }
      }
    }
    ds.norm.scheme = "per_channel";
    ds.norm.mean = mean;
    ds.norm.stdev.resize(3);
    for (std::size_t c = 0; c < 3; ++c) {
      ds.norm.stdev[c] = std::sqrt(var[c] / per_channel);
      if (ds.norm.stdev[c] == 0.0) ds.norm.stdev[c] = 1.0;  // constant channel
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) {
        auto& v = ds.x[(i * 3 + c) * 1024 + p];
        v = static_cast<Real>((static_cast<double>(v) - ds.norm.mean[c]) /
                              ds.norm.stdev[c]);
      }
    }
  }
  return ds;
}

template <typename Real>
std::vector<unsigned char> serialize_cifar10(const Dataset<Real>& ds) {
  check(ds.x.rank() == 4 && ds.x.dim(1) == 3 && ds.x.dim(2) == 32 &&
            ds.x.dim(3) == 32,
        "not a CIFAR-shaped dataset");
  check(ds.norm.scheme == "per_channel" && ds.norm.mean.size() == 3,
        "dataset lacks per-channel normalization metadata");
  std::vector<unsigned char> out;
  out.reserve(ds.size() * 3073);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back(static_cast<unsigned char>(ds.labels[i]));
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < 1024; ++p) {
        const double v = static_cast<double>(ds.x[(i * 3 + c) * 1024 + p]) *
                             ds.norm.stdev[c] +
                         ds.norm.mean[c];
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic class-conditional Gaussian mixture: class means are random unit
// vectors scaled by `separation`, examples are mean + standard normal noise.
// Labels are assigned round-robin so every class count differs by at most 1.

template <typename Real = double>
Dataset<Real> synth_gaussian_mixture(std::size_t n, std::size_t d,
                                     int classes, double separation,
                                     std::uint64_t seed) {
  check(n >= 1 && d >= 1 && classes >= 1,
        "synth_gaussian_mixture needs positive n, d, classes");
  Dataset<Real> ds;
  ds.name = "synth";
  ds.num_classes = classes;
  ds.x = Tensor<Real>({n, d});
  ds.labels.resize(n);

  std::vector<double> means(static_cast<std::size_t>(classes) * d);
  const CounterRng mean_rng(seed, derive_stream(rng_stream::kData, 0));
  for (int c = 0; c < classes; ++c) {
    double norm_sq = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = mean_rng.gaussian(std::size_t(c) * d + j);
      means[std::size_t(c) * d + j] = g;
      norm_sq += g * g;
    }
    const double scale = separation / std::max(std::sqrt(norm_sq), 1e-300);
    for (std::size_t j = 0; j < d; ++j) means[std::size_t(c) * d + j] *= scale;
  }

  const CounterRng x_rng(seed, derive_stream(rng_stream::kData, 1));
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    ds.labels[i] = y;
    for (std::size_t j = 0; j < d; ++j) {
      ds.x[i * d + j] = static_cast<Real>(means[std::size_t(y) * d + j] +
                                          x_rng.gaussian(i * d + j));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Samplers. Poisson mode: at step t every index joins independently with
// probability q; the batch is a pure function of (seed, t), and may be
// empty. Shuffled mode: fixed-size slices of a per-epoch permutation; the
// tail slice of an epoch may be short.

class Sampler {
 public:
  enum class Mode { kPoisson, kShuffled };

  static Sampler poisson(double q, std::uint64_t seed) {
    check(q > 0.0 && q <= 1.0, "poisson sampling rate must be in (0,1]");
    Sampler s;
    s.mode_ = Mode::kPoisson;
    s.q_ = q;
    s.seed_ = seed;
    return s;
  }

  static Sampler shuffled(std::size_t batch_size, std::uint64_t seed) {
    check(batch_size >= 1, "shuffled batch size must be positive");
    Sampler s;
    s.mode_ = Mode::kShuffled;
    s.batch_size_ = batch_size;
    s.seed_ = seed;
    return s;
  }

  Mode mode() const { return mode_; }
  double q() const { return q_; }
  std::size_t batch_size() const { return batch_size_; }

  std::vector<std::size_t> next_indices(std::size_t n) {
    check(n >= 1, "sampler needs a non-empty dataset");
    if (mode_ == Mode::kPoisson) {
      const CounterRng rng(seed_, derive_stream(rng_stream::kPoisson, step_));
      ++step_;
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform(i) <= q_) idx.push_back(i);
      }
      return idx;
    }
    if (perm_.size() != n || cursor_ >= n) {
      perm_.resize(n);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      const CounterRng rng(seed_, derive_stream(rng_stream::kShuffle, epoch_));
      ++epoch_;
      for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = rng.below(i, i + 1);
        std::swap(perm_[i], perm_[j]);
      }
      cursor_ = 0;
    }
    const std::size_t take = std::min(batch_size_, n - cursor_);
    std::vector<std::size_t> idx(perm_.begin() + cursor_,
                                 perm_.begin() + cursor_ + take);
    cursor_ += take;
    return idx;
  }

 private:
  Mode mode_ = Mode::kPoisson;
  double q_ = 1.0;
  std::size_t batch_size_ = 0;
  std::uint64_t seed_ = 0;
  std::uint64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

template <typename Real>
Minibatch<Real> next_batch(Sampler& sampler, const Dataset<Real>& ds) {
  return gather(ds, sampler.next_indices(ds.size()));
}

// ---------------------------------------------------------------------------
// Class-stratified split: within every class the indices are shuffled
// deterministically and the first round(fraction * count) go to the public
// side, so per-class proportions are preserved within one example.

template <typename Real>
std::pair<Dataset<Real>, Dataset<Real>> public_private_split(
    const Dataset<Real>& ds, double fraction, std::uint64_t seed) {
  check(fraction > 0.0 && fraction < 1.0, "split fraction must be in (0,1)");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[ds.labels[i]].push_back(i);
  }
  std::vector<std::size_t> pub_idx, prv_idx;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.empty()) continue;
    // Distinct stream family from the shuffled sampler's epoch streams.
    const CounterRng rng(
        seed, derive_stream(rng_stream::kShuffle, 0x9000000000000000ull + c));
    for (std::size_t i = idx.size() - 1; i > 0; --i) {
      const std::size_t j = rng.below(i, i + 1);
      std::swap(idx[i], idx[j]);
    }
    const std::size_t k = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(idx.size())));
    pub_idx.insert(pub_idx.end(), idx.begin(), idx.begin() + k);
    prv_idx.insert(prv_idx.end(), idx.begin() + k, idx.end());
  }
  std::sort(pub_idx.begin(), pub_idx.end());
  std::sort(prv_idx.begin(), prv_idx.end());

  const auto take = [&](const std::vector<std::size_t>& idx,
                        const std::string& suffix) {
    Minibatch<Real> mb = gather(ds, idx);
    Dataset<Real> out;
    out.name = ds.name + suffix;
    out.x = std::move(mb.x);
    out.labels = std::move(mb.y);
    out.num_classes = ds.num_classes;
    out.norm = ds.norm;
    return out;
  };
  return {take(pub_idx, "/public"), take(prv_idx, "/private")};
}

}  // namespace dptrain
