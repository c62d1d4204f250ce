#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "bpdx/bundle.hpp"

namespace bpdx::cla {

/// Largest accepted frame body.
inline constexpr std::size_t kMaxFrameBytes = 16u << 20;
inline constexpr std::uint64_t kHandshakeTimeoutMs = 2000;

/// uint32 big-endian length followed by the bundle document.
std::string encode_frame(const Bundle& bundle);

/// Reassembles frames from a byte stream. Oversized or undecodable frames
/// throw Error("malformed-frame").
class FrameReader {
public:
    void feed(std::string_view bytes) { buffer_.append(bytes); }
    std::optional<Bundle> next();
    /// True while a partial frame is buffered.
    bool partial() const noexcept { return !buffer_.empty(); }

private:
    std::string buffer_;
};

}  // namespace bpdx::cla
