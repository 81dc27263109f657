// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dnr/autograd.hpp"
#include "dnr/error.hpp"
#include "dnr/rng.hpp"
#include "dnr/tensor.hpp"

namespace dnr {

/// Named, ordered set of trainable tensors. A frozen parameter is bound as a
/// constant, so it never receives a gradient and the optimizer never sees it.
class ParameterStore {
 public:
  void add(const std::string& name, Tensor init) {
    require(!params_.contains(name), "ParameterStore: duplicate parameter '" + name + "'");
    params_.emplace(name, std::move(init));
  }

  bool contains(const std::string& name) const { return params_.contains(name); }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "ParameterStore: unknown parameter '" + name + "'");
    return it->second;
  }

  Tensor& get_mutable(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "ParameterStore: unknown parameter '" + name + "'");
    require(!frozen_.contains(name), "ParameterStore: attempt to mutate frozen parameter '" + name + "'");
    return it->second;
  }

  /// Overwrites a value, shape-checked. Used by checkpoint loading and
  /// snapshot restore; bypasses the frozen check deliberately.
  void assign(const std::string& name, Tensor value) {
    auto it = params_.find(name);
    require(it != params_.end(), "ParameterStore: unknown parameter '" + name + "'");
    require(it->second.shape() == value.shape(),
            "ParameterStore: shape mismatch for '" + name + "': expected " +
                shape_str(it->second.shape()) + ", got " + shape_str(value.shape()));
    it->second = std::move(value);
  }

  void freeze(const std::string& name) {
    require(params_.contains(name), "ParameterStore: unknown parameter '" + name + "'");
    frozen_.insert(name);
  }

  // Idempotent.
  void freeze_all() {
    for (const auto& [name, _] : params_) frozen_.insert(name);
  }

  bool frozen(const std::string& name) const { return frozen_.contains(name); }
  std::set<std::string> frozen_manifest() const { return frozen_; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
  }

  std::size_t size() const noexcept { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  const std::map<std::string, Tensor>& all() const noexcept { return params_; }

  /// FNV-1a over names, shapes and the raw bytes of every scalar.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, t] : params_) {
      feed(name.data(), name.size());
      for (std::size_t d : t.shape()) {
        const std::uint64_t d64 = d;
        feed(&d64, sizeof d64);
      }
      feed(t.data().data(), t.size() * sizeof(double));
    }
    return h;
  }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b) {
    return a.params_ == b.params_;
  }

 private:
  std::map<std::string, Tensor> params_;
  std::set<std::string> frozen_;
};

/// Parameter name -> Var for one tape.
class Binding {
 public:
  const Var& operator[](const std::string& name) const {
    auto it = vars_.find(name);
    require(it != vars_.end(), "Binding: parameter '" + name + "' is not bound");
    return it->second;
  }
  void set(const std::string& name, Var v) { vars_[name] = v; }

 private:
  std::map<std::string, Var> vars_;
};

/// Trainable parameters become tracked leaves; frozen ones become constants.
inline Binding bind(Tape& tape, const ParameterStore& store) {
  Binding b;
  for (const auto& [name, t] : store.all())
    b.set(name, store.frozen(name) ? tape.constant(t) : tape.leaf(name, t));
  return b;
}

/// Every parameter as a constant; for inference passes.
inline Binding bind_constants(Tape& tape, const ParameterStore& store) {
  Binding b;
  for (const auto& [name, t] : store.all()) b.set(name, tape.constant(t));
  return b;
}

/// Uniform Xavier/Glorot initialisation for a fan_in x fan_out weight.
inline Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, RngStream& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = (2.0 * rng.uniform() - 1.0) * limit;
  return w;
}

// ---------------------------------------------------------------------------
// Checkpoint file:
//
//   "DNR1"                      4 bytes magic
//   u32 version                 currently 1
//   u32 entry count
//   per entry:
//     u32 name length, name bytes (UTF-8)
//     u32 rank, u64 dims[rank]
//     u64 offset                scalar index into the payload
//   f64 payload[total scalars]
//
// All integers and scalars are little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<unsigned char>(u >> (8 * i)));
}

template <class T>
T get_le(const std::vector<unsigned char>& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  require(pos + sizeof(U) <= in.size(), "checkpoint: truncated file");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return std::bit_cast<T>(u);
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const ParameterStore& store) {
  std::vector<unsigned char> out{'D', 'N', 'R', '1'};
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : store.all()) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
    detail::put_le<std::uint64_t>(out, offset);
    offset += t.size();
  }
  for (const auto& [_, t] : store.all())
    for (double v : t.data()) detail::put_le<double>(out, v);
  return out;
}

/// Fills an already-shaped store from checkpoint bytes. Every manifest entry
/// must match a parameter of the same shape and every parameter must be
/// present.
inline void decode_checkpoint(const std::vector<unsigned char>& bytes, ParameterStore& store) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "DNR1", 4) == 0,
          "checkpoint: bad magic (expected DNR1)");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  require(version == kCheckpointVersion, "checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  require(count == store.size(), "checkpoint: holds " + std::to_string(count) +
                                     " parameters, model expects " + std::to_string(store.size()));
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_le<std::uint32_t>(bytes, pos);
    require(pos + len <= bytes.size(), "checkpoint: truncated name");
    Entry e;
    e.name.assign(reinterpret_cast<const char*>(bytes.data() + pos), len);
    pos += len;
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    require(rank >= 1 && rank <= 8, "checkpoint: bad rank for '" + e.name + "'");
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(detail::get_le<std::uint64_t>(bytes, pos));
    e.offset = detail::get_le<std::uint64_t>(bytes, pos);
    entries.push_back(std::move(e));
  }
  const std::size_t payload = pos;
  for (const Entry& e : entries) {
    std::vector<double> data(Tensor::numel(e.shape));
    std::size_t p = payload + e.offset * 8;
    for (double& v : data) v = detail::get_le<double>(bytes, p);
    store.assign(e.name, Tensor(e.shape, std::move(data)));
  }
}

inline void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), "checkpoint: cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void load_checkpoint(ParameterStore& store, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "checkpoint: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  decode_checkpoint(bytes, store);
}

}  // namespace dnr
