#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "raydepth/tensor.hpp"

namespace raydepth {

// Named map of trainable tensors. std::map keys keep iteration order
// deterministic (sorted by name).
template <typename T>
class ParameterRegistry {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    if (!t.requires_grad()) throw std::invalid_argument("ParameterRegistry: '" + name + "' is not trainable");
    auto [it, inserted] = params_.emplace(name, t);
    if (!inserted) throw std::invalid_argument("ParameterRegistry: duplicate name '" + name + "'");
    return it->second;
  }

  Tensor<T>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParameterRegistry: unknown name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  size_t size() const { return params_.size(); }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  size_t value_count() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor<T>> params_;
};

// --- checkpoint container ---------------------------------------------------
// Flat binary file of named tensors:
//   magic "RAYDCKPT" | u32 version | u32 count
//   per entry: u32 name_len | name bytes | u8 dtype (0=f32, 1=f64)
//              | u32 rank | u32 dims[rank] | raw little-endian values
// Round trips are bit-exact.

struct CheckpointEntry {
  std::string name;
  int dtype = 0;  // 0 = f32, 1 = f64
  Shape shape;
  std::vector<float> f32;
  std::vector<double> f64;

  size_t count() const { return shape_numel(shape); }
};

namespace detail {

constexpr char kCkptMagic[8] = {'R', 'A', 'Y', 'D', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated header field");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

template <typename V>
void put_scalar_le(std::ostream& os, V v) {
  static_assert(sizeof(V) == 4 || sizeof(V) == 8);
  using U = std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>;
  U bits;
  std::memcpy(&bits, &v, sizeof(V));
  unsigned char b[sizeof(V)];
  for (size_t i = 0; i < sizeof(V); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(V));
}

template <typename V>
V get_scalar_le(std::istream& is) {
  using U = std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>;
  unsigned char b[sizeof(V)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(V))) throw std::runtime_error("checkpoint: truncated values");
  U bits = 0;
  for (size_t i = 0; i < sizeof(V); ++i) bits |= U(b[i]) << (8 * i);
  V v;
  std::memcpy(&v, &bits, sizeof(V));
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<CheckpointEntry>& entries) {
  os.write(detail::kCkptMagic, 8);
  detail::put_u32(os, detail::kCkptVersion);
  detail::put_u32(os, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    detail::put_u32(os, std::uint32_t(e.name.size()));
    os.write(e.name.data(), std::streamsize(e.name.size()));
    char dtype = char(e.dtype);
    os.write(&dtype, 1);
    detail::put_u32(os, std::uint32_t(e.shape.size()));
    for (int d : e.shape) detail::put_u32(os, std::uint32_t(d));
    if (e.dtype == 0) {
      if (e.f32.size() != e.count()) throw std::runtime_error("checkpoint: value count mismatch for " + e.name);
      for (float v : e.f32) detail::put_scalar_le(os, v);
    } else {
      if (e.f64.size() != e.count()) throw std::runtime_error("checkpoint: value count mismatch for " + e.name);
      for (double v : e.f64) detail::put_scalar_le(os, v);
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline std::vector<CheckpointEntry> read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = detail::get_u32(is);
  if (version != detail::kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::uint32_t count = detail::get_u32(is);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    std::uint32_t name_len = detail::get_u32(is);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len)) throw std::runtime_error("checkpoint: truncated name");
    char dtype;
    if (!is.read(&dtype, 1)) throw std::runtime_error("checkpoint: truncated dtype");
    if (dtype != 0 && dtype != 1) throw std::runtime_error("checkpoint: unknown dtype tag");
    e.dtype = dtype;
    std::uint32_t rank = detail::get_u32(is);
    e.shape.resize(rank);
    for (auto& d : e.shape) d = int(detail::get_u32(is));
    size_t n = e.count();
    if (e.dtype == 0) {
      e.f32.resize(n);
      for (auto& v : e.f32) v = detail::get_scalar_le<float>(is);
    } else {
      e.f64.resize(n);
      for (auto& v : e.f64) v = detail::get_scalar_le<double>(is);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

namespace detail {

template <typename T>
constexpr int dtype_tag() {
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
CheckpointEntry to_entry(const std::string& name, const Tensor<T>& t) {
  CheckpointEntry e;
  e.name = name;
  e.dtype = dtype_tag<T>();
  e.shape = t.shape();
  if constexpr (std::is_same_v<T, float>)
    e.f32 = t.values();
  else
    e.f64 = t.values();
  return e;
}

}  // namespace detail

template <typename T>
std::vector<CheckpointEntry> registry_to_entries(const ParameterRegistry<T>& reg) {
  std::vector<CheckpointEntry> out;
  for (const auto& [name, t] : reg) out.push_back(detail::to_entry(name, t));
  return out;
}

// Loads values into an existing registry. Every registered parameter must be
// present with matching dtype and shape.
template <typename T>
void load_into_registry(const std::vector<CheckpointEntry>& entries, ParameterRegistry<T>& reg) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  for (auto& [name, t] : reg) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw std::runtime_error("checkpoint: missing parameter '" + name + "'");
    const CheckpointEntry& e = *it->second;
    if (e.dtype != detail::dtype_tag<T>())
      throw std::runtime_error("checkpoint: dtype mismatch for '" + name + "'");
    if (e.shape != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for '" + name + "': stored " +
                               shape_str(e.shape) + " vs model " + shape_str(t.shape()));
    if constexpr (std::is_same_v<T, float>)
      t.raw_values() = e.f32;
    else
      t.raw_values() = e.f64;
  }
}

}  // namespace raydepth
