#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace poc {

using Digest = std::array<uint8_t, 32>;

Digest sha256(std::span<const uint8_t> bytes);
std::string to_hex(const Digest& d);
/// Throws `kMalformed` unless given exactly 64 hex digits.
Digest digest_from_hex(std::string_view hex);

}  // namespace poc
