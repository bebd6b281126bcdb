#include "poc/hash.hpp"

#include <algorithm>

#include <openssl/sha.h>

#include "poc/bytes.hpp"

namespace poc {

Digest sha256(std::span<const uint8_t> bytes) {
  Digest d{};
  SHA256(bytes.data(), bytes.size(), d.data());
  return d;
}

std::string to_hex(const Digest& d) { return to_hex(std::span<const uint8_t>(d)); }

Digest digest_from_hex(std::string_view hex) {
  if (hex.size() != 64) throw Error(Errc::kMalformed, "digest must be 64 hex digits");
  const Bytes b = from_hex(hex);
  Digest d{};
  std::copy(b.begin(), b.end(), d.begin());
  return d;
}

}  // namespace poc
