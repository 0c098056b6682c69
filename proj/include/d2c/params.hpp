#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "d2c/error.hpp"

namespace d2c {

enum class LayerKind : std::uint32_t {
  dense = 0,  ///< rows x cols weight matrix followed by a rows-long bias
};

struct LayerDesc {
  LayerKind kind = LayerKind::dense;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;

  std::size_t param_count() const noexcept {
    return static_cast<std::size_t>(rows) * cols + rows;
  }
  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

using ParamShape = std::vector<LayerDesc>;

inline std::size_t param_count(const ParamShape& shape) noexcept {
  std::size_t n = 0;
  for (const auto& l : shape) n += l.param_count();
  return n;
}

/// Flat parameter array plus the layer descriptor it was flattened from.
/// Two vectors can be aggregated iff their shapes compare equal.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(ParamShape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
    detail::require(values_.size() == param_count(shape_),
                    "param vector: " + std::to_string(values_.size()) + " values for a shape needing " +
                        std::to_string(param_count(shape_)));
  }

  const ParamShape& shape() const noexcept { return shape_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  bool compatible_with(const ParamVector& other) const noexcept { return shape_ == other.shape_; }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// Bitwise equality: distinguishes -0.0 from 0.0 and compares NaN payloads.
  bool bit_equal(const ParamVector& other) const noexcept {
    return shape_ == other.shape_ &&
           std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ParamShape shape_;
  std::vector<double> values_;
};

// ---------------------------------------------------------------------------
// .pv serialization: u32 layer count, u32 (kind, rows, cols) per layer, then the
// values as IEEE-754 doubles. Every field little-endian.

namespace detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline void put_f64(std::vector<unsigned char>& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const unsigned char> in, std::size_t& pos) {
  if (pos + 4 > in.size()) throw DataError("pv: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
  pos += 4;
  return v;
}

inline double get_f64(std::span<const unsigned char> in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos + i]) << (8 * i);
  pos += 8;
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline std::vector<unsigned char> encode_pv(const ParamVector& p) {
  std::vector<unsigned char> out;
  out.reserve(4 + 12 * p.shape().size() + 8 * p.size());
  detail::put_u32(out, static_cast<std::uint32_t>(p.shape().size()));
  for (const auto& l : p.shape()) {
    detail::put_u32(out, static_cast<std::uint32_t>(l.kind));
    detail::put_u32(out, l.rows);
    detail::put_u32(out, l.cols);
  }
  for (double v : p.values()) detail::put_f64(out, v);
  return out;
}

inline ParamVector decode_pv(std::span<const unsigned char> bytes) {
  std::size_t pos = 0;
  const std::uint32_t layers = detail::get_u32(bytes, pos);
  ParamShape shape;
  for (std::uint32_t i = 0; i < layers; ++i) {
    LayerDesc l;
    const std::uint32_t kind = detail::get_u32(bytes, pos);
    if (kind != static_cast<std::uint32_t>(LayerKind::dense)) throw DataError("pv: unknown layer kind");
    l.rows = detail::get_u32(bytes, pos);
    l.cols = detail::get_u32(bytes, pos);
    shape.push_back(l);
  }
  const std::size_t n = param_count(shape);
  if (bytes.size() - pos != n * 8) throw DataError("pv: payload length does not match descriptor");
  std::vector<double> values(n);
  for (auto& v : values) v = detail::get_f64(bytes, pos);
  return ParamVector(std::move(shape), std::move(values));
}

inline void save_pv(const ParamVector& p, const std::string& path) {
  const auto bytes = encode_pv(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ParamVector load_pv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pv(bytes);
}

}  // namespace d2c
