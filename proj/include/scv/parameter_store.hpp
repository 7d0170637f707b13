#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "scv/autodiff.hpp"
#include "scv/fileutil.hpp"

namespace scv {

/// Uniform doubles in [0,1) from a 64-bit Mersenne Twister, with the bit
/// mapping fixed here so streams are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    // Box-Muller; one draw per call keeps the stream position simple.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  std::uint64_t next() { return gen_(); }

 private:
  std::mt19937_64 gen_;
};

/// Named learnable tensors, iterated in insertion order.
template <class T>
class ParameterStore {
 public:
  ParameterStore() = default;
  explicit ParameterStore(std::uint64_t seed) : rng_seed_(seed) {}

  Var<T>& add(const std::string& name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, make_leaf(std::move(value), true));
    return entries_.back().second;
  }

  /// Replaces the variable bound to an existing name (used to route a
  /// parameter through a different leaf, e.g. in gradient checks).
  void rebind(const std::string& name, Var<T> v) { entries_.at(index_.at(name)).second = std::move(v); }

  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) != 0; }

  [[nodiscard]] const Var<T>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter: " + name);
    return entries_[it->second].second;
  }
  [[nodiscard]] Var<T>& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("missing parameter: " + name);
    return entries_[it->second].second;
  }

  [[nodiscard]] auto begin() { return entries_.begin(); }
  [[nodiscard]] auto end() { return entries_.end(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] std::uint64_t rng_seed() const noexcept { return rng_seed_; }
  void set_rng_seed(std::uint64_t s) noexcept { rng_seed_ = s; }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  /// Deep copy with fresh leaves: values copied, grads dropped.
  [[nodiscard]] ParameterStore clone() const {
    ParameterStore out(rng_seed_);
    for (const auto& [name, v] : entries_) out.add(name, v.value());
    return out;
  }

  /// Copy whose leaves do not require gradients (inference).
  [[nodiscard]] ParameterStore detached() const {
    ParameterStore out(rng_seed_);
    for (const auto& [name, v] : entries_) out.add(name, v.value()).node()->requires_grad = false;
    return out;
  }

  template <class U>
  [[nodiscard]] ParameterStore<U> cast() const {
    ParameterStore<U> out(rng_seed_);
    for (const auto& [name, v] : entries_) out.add(name, v.value().template cast<U>());
    return out;
  }

  void merge(const ParameterStore& other) {
    for (const auto& [name, v] : other) {
      if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
      index_[name] = entries_.size();
      entries_.emplace_back(name, v);
    }
  }

 private:
  std::vector<std::pair<std::string, Var<T>>> entries_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t rng_seed_ = 0;
};

/// Fan-in scaled uniform init U(-sqrt(3/fan_in), sqrt(3/fan_in)) for a conv
/// weight of shape (cout, cin, kh, kw).
template <class T>
Tensor<T> fan_in_uniform(Rng& rng, Shape shape) {
  std::size_t fan_in = 1;
  for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
  const double bound = std::sqrt(3.0 / double(fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = T(rng.uniform(-bound, bound));
  return t;
}

// ---------------------------------------------------------------------------
// Binary checkpoint: "SCVW", u32 version, u32 count, then per entry
// u16 name length, name, u8 rank, u32 extents, little-endian payload.
// Version 1 stores the payload as IEEE float64 regardless of T.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  static_assert(std::is_integral_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(std::uint8_t(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return U(v);
}

}  // namespace detail

template <class T>
std::string serialize(const ParameterStore<T>& store) {
  std::string out = "SCVW";
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, std::uint32_t(store.size()));
  for (const auto& [name, v] : store) {
    if (name.size() > 0xffff) throw FormatError("parameter name too long: " + name);
    detail::put_le<std::uint16_t>(out, std::uint16_t(name.size()));
    out += name;
    const Shape& s = v.value().shape();
    if (s.size() > 0xff) throw FormatError("parameter rank too large: " + name);
    detail::put_le<std::uint8_t>(out, std::uint8_t(s.size()));
    for (std::size_t e : s) detail::put_le<std::uint32_t>(out, std::uint32_t(e));
    for (T x : v.value().data()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(double(x)));
  }
  return out;
}

template <class T>
ParameterStore<T> deserialize(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "SCVW") != 0) throw FormatError("checkpoint: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  ParameterStore<T> store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = detail::get_le<std::uint16_t>(bytes, pos);
    if (pos + len > bytes.size()) throw FormatError("checkpoint truncated in entry name");
    std::string name = bytes.substr(pos, len);
    pos += len;
    const auto rank = detail::get_le<std::uint8_t>(bytes, pos);
    Shape shape(rank);
    for (auto& x : shape) {
      x = detail::get_le<std::uint32_t>(bytes, pos);
      if (x == 0) throw FormatError("checkpoint: zero extent in " + name);
    }
    const std::size_t n = shape_numel(shape);
    if (pos + n * 8 > bytes.size()) throw FormatError("checkpoint truncated in payload of " + name);
    std::vector<T> data(n);
    for (auto& x : data) x = T(std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos)));
    store.add(name, Tensor<T>(std::move(shape), std::move(data)));
  }
  if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return store;
}

template <class T>
void save_checkpoint(const ParameterStore<T>& store, const std::filesystem::path& path) {
  write_file_atomic(path, serialize(store));
}

template <class T>
ParameterStore<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize<T>(read_file(path));
}

}  // namespace scv
