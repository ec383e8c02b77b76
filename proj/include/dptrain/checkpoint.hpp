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

// Checkpoint container: magic "DPCKPT01", a string-keyed metadata section,
// then named tensors (dtype tag, trainable flag, dims, raw little-endian
// payload). Round-trips are bit exact for the stored dtype.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dptrain/models.hpp"
#include "dptrain/tensor.hpp"

namespace dptrain {

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

struct CheckpointTensor {
  std::string name;
  std::uint8_t dtype = 0;  // 0 = f32, 1 = f64
  bool trainable = true;
  std::vector<std::size_t> dims;
  std::vector<unsigned char> payload;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline constexpr char kCkptMagic[9] = "DPCKPT01";

template <typename T>
void put_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  check(bool(is), "checkpoint truncated");
  return v;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
  const auto n = get_pod<std::uint32_t>(is);
  check(n <= (1u << 20), "checkpoint string length implausible");
  std::string s(n, '\0');
  is.read(s.data(), n);
  check(bool(is), "checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os.write(detail::kCkptMagic, 8);
  detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(ckpt.meta.size()));
  for (const auto& [k, v] : ckpt.meta) {
    detail::put_str(os, k);
    detail::put_str(os, v);
  }
  detail::put_pod<std::uint32_t>(os,
                                 static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    detail::put_str(os, t.name);
    detail::put_pod<std::uint8_t>(os, t.dtype);
    detail::put_pod<std::uint8_t>(os, t.trainable ? 1 : 0);
    detail::put_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims.size()));
    std::size_t count = 1;
    for (const std::size_t d : t.dims) {
      detail::put_pod<std::uint64_t>(os, d);
      count *= d;
    }
    const std::size_t width = t.dtype == 0 ? 4 : 8;
    check(t.payload.size() == count * width,
          "tensor " + t.name + " payload size mismatch");
    os.write(reinterpret_cast<const char*>(t.payload.data()),
             static_cast<std::streamsize>(t.payload.size()));
  }
  check(bool(os), "checkpoint write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  check(bool(is) && std::memcmp(magic, detail::kCkptMagic, 8) == 0,
        "not a checkpoint file (bad magic)");
  Checkpoint ckpt;
  const auto meta_n = detail::get_pod<std::uint32_t>(is);
  check(meta_n <= 4096, "checkpoint metadata count implausible");
  for (std::uint32_t i = 0; i < meta_n; ++i) {
    std::string k = detail::get_str(is);
    std::string v = detail::get_str(is);
    ckpt.meta.emplace(std::move(k), std::move(v));
  }
  const auto tensor_n = detail::get_pod<std::uint32_t>(is);
  check(tensor_n <= (1u << 20), "checkpoint tensor count implausible");
  for (std::uint32_t i = 0; i < tensor_n; ++i) {
    CheckpointTensor t;
    t.name = detail::get_str(is);
    t.dtype = detail::get_pod<std::uint8_t>(is);
    check(t.dtype <= 1, "tensor " + t.name + " has unknown dtype tag " +
                            std::to_string(int(t.dtype)));
    t.trainable = detail::get_pod<std::uint8_t>(is) != 0;
    const auto rank = detail::get_pod<std::uint32_t>(is);
    check(rank <= 8, "tensor " + t.name + " rank implausible");
    std::size_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = detail::get_pod<std::uint64_t>(is);
      t.dims.push_back(static_cast<std::size_t>(dim));
      count *= static_cast<std::size_t>(dim);
    }
    const std::size_t width = t.dtype == 0 ? 4 : 8;
    t.payload.resize(count * width);
    is.read(reinterpret_cast<char*>(t.payload.data()),
            static_cast<std::streamsize>(t.payload.size()));
    check(bool(is), "checkpoint truncated inside tensor " + t.name);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

inline void save_checkpoint_file(const std::string& path,
                                 const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  check(bool(os), "cannot open " + path + " for writing");
  write_checkpoint(os, ckpt);
  os.close();
  check(bool(os), "failed writing " + path);
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(bool(is), "cannot open checkpoint " + path);
  return read_checkpoint(is);
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint.

template <typename Real>
Checkpoint model_to_checkpoint(const Model<Real>& model) {
  Checkpoint ckpt;
  ckpt.meta["kind"] = model.kind;
  ckpt.meta["arch"] = model.arch;
  ckpt.meta["activation"] = activation_name(model.activation);
  ckpt.meta["group_norm_groups"] = std::to_string(model.group_norm_groups);
  ckpt.meta["num_classes"] = std::to_string(model.num_classes);
  ckpt.meta["dtype"] = sizeof(Real) == 4 ? "f32" : "f64";
  {
    std::string s;
    for (std::size_t i = 0; i < model.input_shape.size(); ++i)
      s += (i ? "," : "") + std::to_string(model.input_shape[i]);
    ckpt.meta["input_shape"] = s;
  }
  for (std::size_t e = 0; e < model.params.size(); ++e) {
    const ParamEntry<Real>& entry = model.params.entry(e);
    CheckpointTensor t;
    t.name = entry.name;
    t.dtype = sizeof(Real) == 4 ? 0 : 1;
    t.trainable = entry.trainable;
    t.dims = entry.value.shape();
    t.payload.resize(entry.value.size() * sizeof(Real));
    std::memcpy(t.payload.data(), entry.value.data(), t.payload.size());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

namespace detail {

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    check(!tok.empty(), "malformed size list: " + s);
    out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
  return out;
}

}  // namespace detail

// Rebuilds the architecture named in the metadata, then overwrites every
// parameter tensor with the stored payload (shape checked by name).
template <typename Real>
Model<Real> model_from_checkpoint(const Checkpoint& ckpt,
                                  std::uint64_t seed = 0) {
  const auto need = [&](const std::string& key) -> const std::string& {
    const auto it = ckpt.meta.find(key);
    check(it != ckpt.meta.end(), "checkpoint missing metadata key " + key);
    return it->second;
  };
  const std::string kind = need("kind");
  const int classes = std::stoi(need("num_classes"));
  const auto input_shape = detail::parse_size_list(need("input_shape"));
  const Activation act = activation_from_name(need("activation"));
  Model<Real> model;
  if (kind == "convnet") {
    ArchSpec spec = parse_arch_spec(need("arch"));
    spec.activation = act;
    spec.group_norm_groups =
        static_cast<std::size_t>(std::stoull(need("group_norm_groups")));
    model = build_convnet<Real>(spec, input_shape, classes, seed);
  } else if (kind == "mlp" || kind == "logreg") {
    check(input_shape.size() == 1, "mlp checkpoint input shape must be rank 1");
    const auto hidden = detail::parse_size_list(need("arch"));
    model = build_mlp<Real>(input_shape[0], hidden, classes, act, seed);
  } else {
    fail("checkpoint has unknown model kind: " + kind);
  }
  const std::uint8_t want_dtype = sizeof(Real) == 4 ? 0 : 1;
  for (std::size_t e = 0; e < model.params.size(); ++e) {
    ParamEntry<Real>& entry = model.params.entry(e);
    const CheckpointTensor* t = ckpt.find(entry.name);
    check(t != nullptr, "checkpoint missing tensor " + entry.name);
    check(t->dtype == want_dtype, "tensor " + entry.name + " dtype mismatch");
    check(t->dims == entry.value.shape(),
          "tensor " + entry.name + " shape " + shape_string(t->dims) +
              " does not match model shape " + entry.value.shape_str());
    std::memcpy(entry.value.data(), t->payload.data(), t->payload.size());
    entry.trainable = t->trainable;
  }
  check(ckpt.tensors.size() == model.params.size(),
        "checkpoint holds " + std::to_string(ckpt.tensors.size()) +
            " tensors but the model defines " +
            std::to_string(model.params.size()));
  return model;
}

template <typename Real>
void save_model_file(const std::string& path, const Model<Real>& model) {
  save_checkpoint_file(path, model_to_checkpoint(model));
}

template <typename Real>
Model<Real> load_model_file(const std::string& path) {
  return model_from_checkpoint<Real>(load_checkpoint_file(path));
}

}  // namespace dptrain
