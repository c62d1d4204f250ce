#include "bpdx/cla.hpp"

#include "bpdx/protocol.hpp"

namespace bpdx::cla {

std::string encode_frame(const Bundle& bundle) {
    const auto doc = bundle_to_json(bundle).dump();
    if (doc.size() > kMaxFrameBytes) throw Error("unrepresentable-value", "bundle exceeds frame cap");
    const auto n = static_cast<std::uint32_t>(doc.size());
    std::string frame;
    frame.reserve(4 + doc.size());
    frame += static_cast<char>((n >> 24) & 0xFF);
    frame += static_cast<char>((n >> 16) & 0xFF);
    frame += static_cast<char>((n >> 8) & 0xFF);
    frame += static_cast<char>(n & 0xFF);
    frame += doc;
    return frame;
}

std::optional<Bundle> FrameReader::next() {
    if (buffer_.size() < 4) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buffer_.data());
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    if (n > kMaxFrameBytes) throw Error("malformed-frame", "frame exceeds 16 MiB cap");
    if (buffer_.size() < 4 + std::size_t{n}) return std::nullopt;

    const std::string_view doc(buffer_.data() + 4, n);
    Bundle bundle;
    try {
        bundle = bundle_from_json(nlohmann::json::parse(doc));
    } catch (const nlohmann::json::exception& e) {
        throw Error("malformed-frame", e.what());
    } catch (const Error& e) {
        throw Error("malformed-frame", e.what());
    }
    buffer_.erase(0, 4 + std::size_t{n});
    return bundle;
}

}  // namespace bpdx::cla
