#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bpdx/action.hpp"
#include "bpdx/bundle.hpp"

namespace bpdx {

inline constexpr int kProtocolVersion = 1;
/// Longest accepted line, excluding the terminating '\n'.
inline constexpr std::size_t kMaxLineBytes = 1u << 20;

// ---------------------------------------------------------------------------
// Bundle metadata

/// Payload-free view of a stored bundle as shipped to dispatchers.
struct BundleMetadata {
    BundleId id;
    EndpointId destination;
    std::optional<EndpointId> report_to;
    Duration lifetime = 0;
    std::optional<EndpointId> previous_node;
    std::uint64_t payload_length = 0;
    std::vector<ExtensionBlock> extension_blocks;
    Instant arrival_time = 0;
    ActionList current_actions;
    std::uint64_t update_seq = 0;
    std::vector<std::string> retention;

    friend bool operator==(const BundleMetadata&, const BundleMetadata&) = default;
};

BundleMetadata metadata_of(const Bundle& bundle, Instant arrival_time, ActionList actions = {},
                           std::uint64_t update_seq = 0, std::vector<std::string> retention = {});

// Full bundle documents (payload as base64). Used on convergence-layer links
// and for application deliveries, never on the dispatch channel.
nlohmann::json bundle_to_json(const Bundle& bundle);
Bundle bundle_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const EndpointId& eid);
void from_json(const nlohmann::json& j, EndpointId& eid);
void to_json(nlohmann::json& j, const BundleId& id);
void from_json(const nlohmann::json& j, BundleId& id);
void to_json(nlohmann::json& j, const ExtensionBlock& block);
void from_json(const nlohmann::json& j, ExtensionBlock& block);
void to_json(nlohmann::json& j, const BundleMetadata& meta);
void from_json(const nlohmann::json& j, BundleMetadata& meta);

// ---------------------------------------------------------------------------
// Events

enum class Topic {
    bundle_received,
    forwarding_required,
    bundle_forwarded,
    action_failed,
    bundle_expired,
    bundle_delivered,
    link_up,
    link_down,
};

inline constexpr Topic kAllTopics[] = {
    Topic::bundle_received, Topic::forwarding_required, Topic::bundle_forwarded,
    Topic::action_failed,   Topic::bundle_expired,      Topic::bundle_delivered,
    Topic::link_up,         Topic::link_down,
};

std::string_view to_string(Topic topic) noexcept;
/// Throws Error("unknown-topic").
Topic parse_topic(std::string_view text);

bool is_bundle_topic(Topic topic) noexcept;

struct Event {
    Topic topic = Topic::link_up;
    Instant timestamp = 0;
    /// Present for bundle topics.
    std::optional<BundleMetadata> bundle;
    /// Link topics.
    std::string peer;
    std::string address;
    /// bundle-forwarded / action-failed.
    std::optional<std::uint64_t> action_index;
    std::string reason;

    friend bool operator==(const Event&, const Event&) = default;
};

void to_json(nlohmann::json& j, const Event& event);
void from_json(const nlohmann::json& j, Event& event);

// ---------------------------------------------------------------------------
// Envelopes and framing

enum class Kind { event, rpc_request, rpc_response, subscribe, hello };

std::string_view to_string(Kind kind) noexcept;
/// Throws Error("unknown-kind").
Kind parse_kind(std::string_view text);

struct Envelope {
    Kind kind = Kind::hello;
    std::uint64_t seq = 0;
    nlohmann::json body = nlohmann::json::object();

    friend bool operator==(const Envelope&, const Envelope&) = default;
};

/// One compact document followed by a single '\n'.
/// Throws Error("unrepresentable-value") for non-UTF-8 strings.
std::string encode_message(const Envelope& envelope, std::size_t max_line = kMaxLineBytes);

/// Inverse of encode_message. Accepts the line with or without its trailing
/// '\n'. Throws Error("malformed-document") or Error("unknown-kind").
Envelope decode_message(std::string_view line, std::size_t max_line = kMaxLineBytes);

/// Decoder for one direction of one connection; additionally enforces that
/// sequence numbers strictly increase (Error("seq-regression")).
class MessageDecoder {
public:
    explicit MessageDecoder(std::size_t max_line = kMaxLineBytes) : max_line_(max_line) {}
    Envelope decode(std::string_view line);

private:
    std::size_t max_line_;
    std::optional<std::uint64_t> last_seq_;
};

/// Assigns consecutive sequence numbers starting from 0.
class MessageEncoder {
public:
    explicit MessageEncoder(std::size_t max_line = kMaxLineBytes) : max_line_(max_line) {}
    std::string encode(Kind kind, nlohmann::json body);
    std::uint64_t next_seq() const noexcept { return next_; }

private:
    std::size_t max_line_;
    std::uint64_t next_ = 0;
};

/// Splits a byte stream on '\n'. Lines longer than kMaxLineBytes are reported
/// as Error("malformed-document").
class LineSplitter {
public:
    explicit LineSplitter(std::size_t max_line = kMaxLineBytes) : max_line_(max_line) {}
    void feed(std::string_view bytes);
    std::optional<std::string> next();
    /// Bytes received but not yet returned as a line.
    std::string take_rest();

private:
    std::size_t max_line_;
    std::string buffer_;
    std::size_t scanned_ = 0;
};

// ---------------------------------------------------------------------------
// Message bodies

struct Hello {
    int protocol_version = kProtocolVersion;
    std::string role;
    std::string node;
};

nlohmann::json hello_body(const Hello& hello);
Hello parse_hello(const nlohmann::json& body);

struct RpcRequest {
    nlohmann::json id;
    std::string method;
    nlohmann::json params = nlohmann::json::object();
};

struct RpcError {
    std::string code;
    std::string message;
};

struct RpcResponse {
    nlohmann::json id;
    nlohmann::json result;  // null when error is set
    std::optional<RpcError> error;

    bool ok() const noexcept { return !error.has_value(); }
};

nlohmann::json request_body(const RpcRequest& request);
RpcRequest parse_request(const nlohmann::json& body);
nlohmann::json response_body(const RpcResponse& response);
RpcResponse parse_response(const nlohmann::json& body);

nlohmann::json subscribe_body(const std::set<Topic>& topics);
std::set<Topic> parse_subscribe(const nlohmann::json& body);

/// Method names of the dispatch RPC interface.
namespace method {
inline constexpr std::string_view update_actions = "update-actions";
inline constexpr std::string_view query_supported_actions = "query-supported-actions";
inline constexpr std::string_view list_bundles = "list-bundles";
inline constexpr std::string_view get_bundle = "get-bundle";
inline constexpr std::string_view set_default_actions = "set-default-actions";
}  // namespace method

}  // namespace bpdx
