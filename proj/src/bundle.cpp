#include "bpdx/bundle.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>

namespace bpdx {

namespace {

constexpr std::string_view kScheme = "dtn://";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

bool valid_node_name(std::string_view name) noexcept {
    return !name.empty() &&
           std::none_of(name.begin(), name.end(), [](char c) { return c == '/' || is_space(c); });
}

std::string EndpointId::str() const {
    std::string out{kScheme};
    out += node;
    out += '/';
    out += demux;
    return out;
}

EndpointId parse_endpoint(std::string_view text) {
    if (!text.starts_with(kScheme))
        throw Error("malformed-scheme", "endpoint must start with dtn://: " + std::string(text));
    text.remove_prefix(kScheme.size());

    const auto slash = text.find('/');
    if (slash == std::string_view::npos)
        throw Error("malformed-scheme", "endpoint lacks '/' after node name");
    const auto node = text.substr(0, slash);
    const auto demux = text.substr(slash + 1);
    if (node.empty()) throw Error("empty-node-name", "endpoint has an empty node name");
    if (!valid_node_name(node)) throw Error("malformed-scheme", "invalid node name");
    if (std::any_of(demux.begin(), demux.end(), is_space))
        throw Error("malformed-scheme", "demux must not contain whitespace");
    return {std::string(node), std::string(demux)};
}

std::string BundleId::str() const {
    return source.str() + "#" + std::to_string(creation_time) + "." + std::to_string(sequence);
}

Instant wall_clock_ms() {
    using namespace std::chrono;
    return static_cast<Instant>(duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

void check_well_formed(const Bundle& bundle) {
    if (bundle.lifetime == 0) throw Error("zero-lifetime", "bundle lifetime must be positive");
    if (!valid_node_name(bundle.id.source.node) || !valid_node_name(bundle.destination.node))
        throw Error("invalid-endpoint", "bundle source or destination has no node name");
}

}  // namespace bpdx
