#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace irr {

/// Lowercase hex SHA-256 of the input.
std::string sha256_hex(std::string_view data);

/// First 8 bytes of SHA-256, big-endian. Used to seed per-item generators.
std::uint64_t stable_hash64(std::string_view data);

}  // namespace irr
