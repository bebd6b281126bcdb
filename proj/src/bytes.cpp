#include "poc/bytes.hpp"

#include <bit>

namespace poc {

void ByteWriter::f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

void ByteWriter::blob(std::span<const uint8_t> bytes) {
  u64(bytes.size());
  raw(bytes);
}

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::fixed_vec(std::span<const Fixed> v) {
  u64(v.size());
  for (Fixed x : v) fixed(x);
}

void ByteWriter::i64_vec(std::span<const int64_t> v) {
  u64(v.size());
  for (int64_t x : v) i64(x);
}

void ByteWriter::field_vec(std::span<const Fp> v) {
  u64(v.size());
  for (Fp x : v) u64(x.value());
}

void ByteWriter::varint(uint64_t v) {
  while (v >= 0x80) {
    buf_.push_back(static_cast<uint8_t>(v | 0x80));
    v >>= 7;
  }
  buf_.push_back(static_cast<uint8_t>(v));
}

void ByteWriter::svarint_vec(std::span<const int64_t> v) {
  u64(v.size());
  for (int64_t x : v) varint((static_cast<uint64_t>(x) << 1) ^ static_cast<uint64_t>(x >> 63));
}

uint64_t ByteReader::get_le(int n) {
  if (remaining() < static_cast<size_t>(n)) throw Error(Errc::kMalformed, "truncated input");
  uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= uint64_t{data_[pos_ + i]} << (8 * i);
  pos_ += n;
  return v;
}

size_t ByteReader::length(size_t elem_size) {
  const uint64_t n = u64();
  if (elem_size != 0 && n > remaining() / elem_size) throw Error(Errc::kMalformed, "length prefix exceeds input");
  return static_cast<size_t>(n);
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const uint8_t> ByteReader::raw(size_t n) {
  if (remaining() < n) throw Error(Errc::kMalformed, "truncated input");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

Bytes ByteReader::blob() {
  const size_t n = length(1);
  auto s = raw(n);
  return Bytes(s.begin(), s.end());
}

std::string ByteReader::str() {
  const size_t n = length(1);
  auto s = raw(n);
  return std::string(s.begin(), s.end());
}

std::vector<Fixed> ByteReader::fixed_vec() {
  const size_t n = length(8);
  std::vector<Fixed> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(fixed());
  return out;
}

std::vector<int64_t> ByteReader::i64_vec() {
  const size_t n = length(8);
  std::vector<int64_t> out(n);
  for (auto& x : out) x = i64();
  return out;
}

std::vector<Fp> ByteReader::field_vec() {
  const size_t n = length(8);
  std::vector<Fp> out;
  out.reserve(n);
  for (size_t i = 0; i < n; ++i) out.push_back(Fp::from_canonical(u64()));
  return out;
}

uint64_t ByteReader::varint() {
  uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    const uint8_t b = u8();
    if (shift == 63 && b > 1) throw Error(Errc::kMalformed, "varint overflow");
    v |= uint64_t{b & 0x7Fu} << shift;
    if (!(b & 0x80)) {
      // Minimal encodings only, so each value has exactly one byte form.
      if (b == 0 && shift != 0) throw Error(Errc::kMalformed, "non-canonical varint");
      return v;
    }
  }
  throw Error(Errc::kMalformed, "varint too long");
}

std::vector<int64_t> ByteReader::svarint_vec() {
  const size_t n = length(1);
  std::vector<int64_t> out(n);
  for (auto& x : out) {
    const uint64_t z = varint();
    x = static_cast<int64_t>((z >> 1) ^ (~(z & 1) + 1));
  }
  return out;
}

void ByteReader::expect_done() const {
  if (!done()) throw Error(Errc::kMalformed, "trailing bytes");
}

std::string to_hex(std::span<const uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw Error(Errc::kMalformed, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (size_t i = 0; i < out.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::kMalformed, "invalid hex digit");
    out[i] = static_cast<uint8_t>(hi << 4 | lo);
  }
  return out;
}

}  // namespace poc
