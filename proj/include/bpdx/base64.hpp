#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace bpdx::base64 {

// Standard alphabet (RFC 4648), padded.
std::string encode(std::span<const std::uint8_t> data);

// Throws bpdx::Error("malformed-document") on bad length or characters.
std::vector<std::uint8_t> decode(std::string_view text);

}  // namespace bpdx::base64
