#include "bpdx/protocol.hpp"

#include <algorithm>
#include <utility>

#include "bpdx/base64.hpp"

namespace bpdx {

using nlohmann::json;

namespace {

constexpr std::string_view kTopicNames[] = {
    "bundle-received", "forwarding-required", "bundle-forwarded", "action-failed",
    "bundle-expired",  "bundle-delivered",    "link-up",          "link-down",
};

constexpr std::string_view kKindNames[] = {"event", "rpc-request", "rpc-response", "subscribe", "hello"};

std::optional<EndpointId> optional_eid(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<EndpointId>();
}

[[noreturn]] void malformed(const std::string& what) { throw Error("malformed-document", what); }

}  // namespace

// ---------------------------------------------------------------------------

BundleMetadata metadata_of(const Bundle& bundle, Instant arrival_time, ActionList actions,
                           std::uint64_t update_seq, std::vector<std::string> retention) {
    BundleMetadata meta;
    meta.id = bundle.id;
    meta.destination = bundle.destination;
    meta.report_to = bundle.report_to;
    meta.lifetime = bundle.lifetime;
    meta.previous_node = bundle.previous_node;
    meta.payload_length = bundle.payload.size();
    meta.extension_blocks = bundle.extension_blocks;
    meta.arrival_time = arrival_time;
    meta.current_actions = std::move(actions);
    meta.update_seq = update_seq;
    meta.retention = std::move(retention);
    return meta;
}

void to_json(json& j, const EndpointId& eid) { j = eid.str(); }

void from_json(const json& j, EndpointId& eid) {
    if (!j.is_string()) malformed("endpoint must be a string");
    eid = parse_endpoint(j.get_ref<const std::string&>());
}

void to_json(json& j, const BundleId& id) {
    j = json{{"source", id.source}, {"creation-time", id.creation_time}, {"sequence", id.sequence}};
}

void from_json(const json& j, BundleId& id) {
    j.at("source").get_to(id.source);
    j.at("creation-time").get_to(id.creation_time);
    j.at("sequence").get_to(id.sequence);
}

void to_json(json& j, const ExtensionBlock& block) {
    j = json{{"type", block.block_type}, {"flags", block.flags}, {"data", base64::encode(block.data)}};
}

void from_json(const json& j, ExtensionBlock& block) {
    j.at("type").get_to(block.block_type);
    block.flags = j.value<std::uint64_t>("flags", 0);
    block.data = base64::decode(j.at("data").get<std::string>());
}

namespace {

void put_header(json& j, const BundleId& id, const EndpointId& destination,
                const std::optional<EndpointId>& report_to, Duration lifetime,
                const std::optional<EndpointId>& previous_node,
                const std::vector<ExtensionBlock>& blocks) {
    j["id"] = id;
    j["destination"] = destination;
    if (report_to) j["report-to"] = *report_to;
    j["lifetime"] = lifetime;
    if (previous_node) j["previous-node"] = *previous_node;
    j["extension-blocks"] = blocks;
}

}  // namespace

void to_json(json& j, const BundleMetadata& meta) {
    j = json::object();
    put_header(j, meta.id, meta.destination, meta.report_to, meta.lifetime, meta.previous_node,
               meta.extension_blocks);
    j["payload-length"] = meta.payload_length;
    j["arrival-time"] = meta.arrival_time;
    j["current-actions"] = meta.current_actions;
    j["update-seq"] = meta.update_seq;
    j["retention"] = meta.retention;
}

void from_json(const json& j, BundleMetadata& meta) {
    j.at("id").get_to(meta.id);
    j.at("destination").get_to(meta.destination);
    meta.report_to = optional_eid(j, "report-to");
    j.at("lifetime").get_to(meta.lifetime);
    meta.previous_node = optional_eid(j, "previous-node");
    j.at("payload-length").get_to(meta.payload_length);
    meta.extension_blocks = j.value("extension-blocks", std::vector<ExtensionBlock>{});
    j.at("arrival-time").get_to(meta.arrival_time);
    meta.current_actions = j.value("current-actions", ActionList{});
    j.at("update-seq").get_to(meta.update_seq);
    meta.retention = j.value("retention", std::vector<std::string>{});
}

json bundle_to_json(const Bundle& bundle) {
    json j = json::object();
    put_header(j, bundle.id, bundle.destination, bundle.report_to, bundle.lifetime,
               bundle.previous_node, bundle.extension_blocks);
    j["payload"] = base64::encode(bundle.payload);
    return j;
}

Bundle bundle_from_json(const json& j) {
    try {
        Bundle b;
        j.at("id").get_to(b.id);
        j.at("destination").get_to(b.destination);
        b.report_to = optional_eid(j, "report-to");
        j.at("lifetime").get_to(b.lifetime);
        b.previous_node = optional_eid(j, "previous-node");
        b.extension_blocks = j.value("extension-blocks", std::vector<ExtensionBlock>{});
        b.payload = base64::decode(j.at("payload").get<std::string>());
        return b;
    } catch (const json::exception& e) {
        malformed(e.what());
    }
}

// ---------------------------------------------------------------------------

std::string_view to_string(Topic topic) noexcept { return kTopicNames[static_cast<int>(topic)]; }

Topic parse_topic(std::string_view text) {
    for (std::size_t i = 0; i < std::size(kTopicNames); ++i)
        if (kTopicNames[i] == text) return static_cast<Topic>(i);
    throw Error("unknown-topic", "unknown topic: " + std::string(text));
}

bool is_bundle_topic(Topic topic) noexcept {
    return topic != Topic::link_up && topic != Topic::link_down;
}

void to_json(json& j, const Event& event) {
    j = json{{"topic", to_string(event.topic)}, {"timestamp", event.timestamp}};
    if (event.bundle) j["bundle"] = *event.bundle;
    if (!is_bundle_topic(event.topic)) {
        j["peer"] = event.peer;
        j["address"] = event.address;
    }
    if (event.action_index) j["action-index"] = *event.action_index;
    if (!event.reason.empty()) j["reason"] = event.reason;
}

void from_json(const json& j, Event& event) {
    event = Event{};
    event.topic = parse_topic(j.at("topic").get<std::string>());
    j.at("timestamp").get_to(event.timestamp);
    if (const auto it = j.find("bundle"); it != j.end()) event.bundle = it->get<BundleMetadata>();
    if (is_bundle_topic(event.topic) && !event.bundle) malformed("bundle event without metadata");
    event.peer = j.value("peer", std::string{});
    event.address = j.value("address", std::string{});
    if (const auto it = j.find("action-index"); it != j.end())
        event.action_index = it->get<std::uint64_t>();
    event.reason = j.value("reason", std::string{});
}

// ---------------------------------------------------------------------------

std::string_view to_string(Kind kind) noexcept { return kKindNames[static_cast<int>(kind)]; }

Kind parse_kind(std::string_view text) {
    for (std::size_t i = 0; i < std::size(kKindNames); ++i)
        if (kKindNames[i] == text) return static_cast<Kind>(i);
    throw Error("unknown-kind", "unknown message kind: " + std::string(text));
}

std::string encode_message(const Envelope& envelope, std::size_t max_line) {
    const json doc{{"kind", to_string(envelope.kind)}, {"seq", envelope.seq}, {"body", envelope.body}};
    std::string out;
    try {
        out = doc.dump(-1, ' ', false, json::error_handler_t::strict);
    } catch (const json::type_error& e) {
        throw Error("unrepresentable-value", e.what());
    }
    if (out.size() > max_line) throw Error("unrepresentable-value", "message exceeds line cap");
    out += '\n';
    return out;
}

Envelope decode_message(std::string_view line, std::size_t max_line) {
    if (line.ends_with('\n')) line.remove_suffix(1);
    if (line.size() > max_line) malformed("line exceeds cap");
    if (line.find_first_of("\r\n") != std::string_view::npos) malformed("raw CR or LF inside message");

    json doc;
    try {
        doc = json::parse(line);
    } catch (const json::parse_error& e) {
        malformed(e.what());
    }
    if (!doc.is_object()) malformed("message is not an object");
    const auto kind = doc.find("kind");
    const auto seq = doc.find("seq");
    const auto body = doc.find("body");
    if (kind == doc.end() || !kind->is_string()) malformed("missing kind");
    if (seq == doc.end() || !seq->is_number_unsigned()) malformed("missing or negative seq");
    if (body == doc.end() || !body->is_object()) malformed("missing body");
    if (doc.size() != 3) malformed("unexpected top-level field");

    Envelope envelope;
    envelope.kind = parse_kind(kind->get_ref<const std::string&>());
    envelope.seq = seq->get<std::uint64_t>();
    envelope.body = std::move(*body);
    return envelope;
}

Envelope MessageDecoder::decode(std::string_view line) {
    auto envelope = decode_message(line, max_line_);
    if (last_seq_ && envelope.seq <= *last_seq_)
        throw Error("seq-regression", "seq " + std::to_string(envelope.seq) + " after " +
                                          std::to_string(*last_seq_));
    last_seq_ = envelope.seq;
    return envelope;
}

std::string MessageEncoder::encode(Kind kind, json body) {
    auto line = encode_message(Envelope{kind, next_, std::move(body)}, max_line_);
    ++next_;
    return line;
}

void LineSplitter::feed(std::string_view bytes) { buffer_.append(bytes); }

std::optional<std::string> LineSplitter::next() {
    const auto pos = buffer_.find('\n', scanned_);
    if (pos == std::string::npos) {
        scanned_ = buffer_.size();
        if (buffer_.size() > max_line_) malformed("line exceeds cap");
        return std::nullopt;
    }
    if (pos > max_line_) malformed("line exceeds cap");
    std::string line = buffer_.substr(0, pos);
    buffer_.erase(0, pos + 1);
    scanned_ = 0;
    return line;
}

std::string LineSplitter::take_rest() {
    scanned_ = 0;
    return std::exchange(buffer_, {});
}

// ---------------------------------------------------------------------------

json hello_body(const Hello& hello) {
    return json{{"protocol-version", hello.protocol_version}, {"role", hello.role}, {"node", hello.node}};
}

Hello parse_hello(const json& body) {
    try {
        Hello hello;
        body.at("protocol-version").get_to(hello.protocol_version);
        body.at("role").get_to(hello.role);
        hello.node = body.value("node", std::string{});
        return hello;
    } catch (const json::exception& e) {
        malformed(e.what());
    }
}

json request_body(const RpcRequest& request) {
    return json{{"id", request.id}, {"method", request.method}, {"params", request.params}};
}

RpcRequest parse_request(const json& body) {
    try {
        RpcRequest request;
        request.id = body.at("id");
        body.at("method").get_to(request.method);
        request.params = body.value("params", json::object());
        if (!request.params.is_object()) malformed("params must be an object");
        return request;
    } catch (const json::exception& e) {
        malformed(e.what());
    }
}

json response_body(const RpcResponse& response) {
    json j{{"id", response.id}};
    if (response.error)
        j["error"] = json{{"code", response.error->code}, {"message", response.error->message}};
    else
        j["result"] = response.result;
    return j;
}

RpcResponse parse_response(const json& body) {
    try {
        RpcResponse response;
        response.id = body.at("id");
        if (const auto it = body.find("error"); it != body.end()) {
            response.error = RpcError{it->at("code").get<std::string>(), it->value("message", "")};
        } else {
            response.result = body.at("result");
        }
        return response;
    } catch (const json::exception& e) {
        malformed(e.what());
    }
}

json subscribe_body(const std::set<Topic>& topics) {
    json list = json::array();
    for (const auto topic : topics) list.push_back(to_string(topic));
    return json{{"topics", list}};
}

std::set<Topic> parse_subscribe(const json& body) {
    const auto it = body.find("topics");
    if (it == body.end() || !it->is_array()) malformed("subscribe needs a topics array");
    std::set<Topic> topics;
    for (const auto& t : *it) {
        if (!t.is_string()) malformed("topic must be a string");
        if (t == "*") {
            topics.insert(std::begin(kAllTopics), std::end(kAllTopics));
            continue;
        }
        topics.insert(parse_topic(t.get_ref<const std::string&>()));
    }
    return topics;
}

}  // namespace bpdx
