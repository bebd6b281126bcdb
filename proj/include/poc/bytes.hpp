#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "poc/field.hpp"
#include "poc/fixed_point.hpp"

namespace poc {

using Bytes = std::vector<uint8_t>;

/// Little-endian canonical encoder. Every hashed or committed object is
/// serialized through this writer, so the byte layout is part of the format.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { put_le(v, 2); }
  void u32(uint32_t v) { put_le(v, 4); }
  void u64(uint64_t v) { put_le(v, 8); }
  void i64(int64_t v) { put_le(static_cast<uint64_t>(v), 8); }
  void f64(double v);
  void raw(std::span<const uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
  /// u64 length prefix followed by the bytes.
  void blob(std::span<const uint8_t> bytes);
  void str(std::string_view s);

  void fixed(Fixed x) { i64(x.raw()); }
  void fixed_vec(std::span<const Fixed> v);
  void i64_vec(std::span<const int64_t> v);
  void field_vec(std::span<const Fp> v);
  /// Zigzag LEB128; compact for the small witnesses that dominate transcripts.
  void varint(uint64_t v);
  void svarint_vec(std::span<const int64_t> v);

  const Bytes& bytes() const& { return buf_; }
  Bytes take() && { return std::move(buf_); }

 private:
  void put_le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }

  Bytes buf_;
};

/// Bounds-checked decoder; any short read throws `kMalformed`.
class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> bytes) : data_(bytes) {}

  uint8_t u8() { return static_cast<uint8_t>(get_le(1)); }
  uint16_t u16() { return static_cast<uint16_t>(get_le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(get_le(4)); }
  uint64_t u64() { return get_le(8); }
  int64_t i64() { return static_cast<int64_t>(get_le(8)); }
  double f64();
  std::span<const uint8_t> raw(size_t n);
  Bytes blob();
  std::string str();

  Fixed fixed() { return Fixed::from_raw(i64()); }
  std::vector<Fixed> fixed_vec();
  std::vector<int64_t> i64_vec();
  std::vector<Fp> field_vec();
  uint64_t varint();
  std::vector<int64_t> svarint_vec();

  bool done() const noexcept { return pos_ == data_.size(); }
  size_t remaining() const noexcept { return data_.size() - pos_; }
  /// Throws `kMalformed` if unread bytes remain.
  void expect_done() const;

 private:
  uint64_t get_le(int n);
  /// Length prefix sanity check against the remaining input.
  size_t length(size_t elem_size);

  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

std::string to_hex(std::span<const uint8_t> bytes);
Bytes from_hex(std::string_view hex);

}  // namespace poc
