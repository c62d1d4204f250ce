#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bpdx {

/// Milliseconds since the Unix epoch.
using Instant = std::uint64_t;
/// Milliseconds.
using Duration = std::uint64_t;

using Bytes = std::vector<std::uint8_t>;

/// Error carrying a short machine-readable code ("malformed-scheme",
/// "unknown-bundle", ...) next to a human-readable message.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    explicit Error(std::string code)
        : std::runtime_error(code), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

/// dtn://<node>/<demux>
struct EndpointId {
    std::string node;
    std::string demux;

    std::string str() const;

    /// The node's administrative endpoint, "dtn://<node>/".
    static EndpointId of_node(std::string node) { return {std::move(node), {}}; }

    friend auto operator<=>(const EndpointId&, const EndpointId&) = default;
};

EndpointId parse_endpoint(std::string_view text);

/// True if `name` can be used as the node part of an endpoint.
bool valid_node_name(std::string_view name) noexcept;

struct BundleId {
    EndpointId source;
    Instant creation_time = 0;
    std::uint64_t sequence = 0;

    std::string str() const;

    friend auto operator<=>(const BundleId&, const BundleId&) = default;
};

struct ExtensionBlock {
    std::uint64_t block_type = 0;
    std::uint64_t flags = 0;
    Bytes data;

    friend bool operator==(const ExtensionBlock&, const ExtensionBlock&) = default;
};

struct Bundle {
    BundleId id;
    EndpointId destination;
    std::optional<EndpointId> report_to;
    Duration lifetime = 0;
    std::optional<EndpointId> previous_node;
    std::vector<ExtensionBlock> extension_blocks;
    Bytes payload;

    friend bool operator==(const Bundle&, const Bundle&) = default;
};

constexpr Instant expires_at(const Bundle& bundle) noexcept {
    return bundle.id.creation_time + bundle.lifetime;
}

constexpr bool is_expired(const Bundle& bundle, Instant now) noexcept {
    return now >= expires_at(bundle);
}

/// Current time in milliseconds since the Unix epoch.
Instant wall_clock_ms();

/// Throws Error("zero-lifetime") / Error("invalid-endpoint") for bundles that
/// cannot be stored.
void check_well_formed(const Bundle& bundle);

}  // namespace bpdx
