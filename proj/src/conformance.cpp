#include "bpdx/conformance.hpp"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "bpdx/cla.hpp"
#include "bpdx/client.hpp"
#include "bpdx/node.hpp"
#include "bpdx/protocol.hpp"
#include "bpdx/scenario.hpp"

namespace bpdx {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const BundleId kUnknownId{EndpointId{"X", "app"}, 1700000000000, 7};

json session_script() {
    const json bad_list = json::array({json{{"verb", "teleport"}, {"args", json::object()}}});
    return json::array({
        {{"op", "connect"}, {"role", "bdm"}, {"node", "conformance"}},
        {{"op", "subscribe"}, {"topics", {"forwarding-required", "link-up", "link-down"}}},
        {{"op", "call"}, {"method", "query-supported-actions"}, {"params", json::object()}},
        {{"op", "call"}, {"method", "list-bundles"}, {"params", json::object()}},
        {{"op", "call"}, {"method", "get-bundle"}, {"params", {{"bundle-id", kUnknownId}}}},
        {{"op", "call"},
         {"method", "update-actions"},
         {"params", {{"bundle-id", kUnknownId}, {"actions", ActionList{Action::send_to("B"), Action::drop()}}}}},
        {{"op", "call"},
         {"method", "set-default-actions"},
         {"params", {{"actions", ActionList{Action::send_to("GW"), Action::drop()}}}}},
        {{"op", "call"}, {"method", "set-default-actions"}, {"params", {{"actions", bad_list}}}},
        {{"op", "call"}, {"method", "set-default-actions"}, {"params", {{"actions", ActionList{}}}}},
        {{"op", "call"}, {"method", "no-such-method"}, {"params", json::object()}},
    });
}

std::string record_session(const json& script) {
    char templ[] = "/tmp/bpdx-conformance-XXXXXX";
    if (!::mkdtemp(templ)) throw Error("io-error", "cannot create temp dir");
    const fs::path dir = templ;

    NodeConfig config;
    config.node_name = "N1";
    config.dispatch_address = config.app_address = config.cla_address = "127.0.0.1:0";
    config.wire_log = (dir / "N1.wire.jsonl").string();
    {
        Node node(config);
        std::thread loop([&] { node.run(); });
        try {
            std::unique_ptr<Session> session;
            for (const auto& step : script) {
                const auto op = step.at("op").get<std::string>();
                if (op == "connect") {
                    session = std::make_unique<Session>(node.dispatch_address(), step.at("role").get<std::string>(),
                                                        step.at("node").get<std::string>());
                } else if (op == "subscribe") {
                    std::set<Topic> topics;
                    for (const auto& t : step.at("topics")) topics.insert(parse_topic(t.get<std::string>()));
                    session->subscribe(topics);
                } else {
                    session->call(step.at("method").get<std::string>(), step.at("params"));
                }
            }
            session.reset();
        } catch (...) {
            node.stop();
            loop.join();
            throw;
        }
        node.stop();
        loop.join();
    }

    std::ostringstream out;
    for (const auto& r : load_wire_log((dir / "N1.wire.jsonl").string()).records) {
        if (r.value("ch", "") != "dispatch") continue;
        out << json{{"dir", r.at("dir") == "in" ? "c2s" : "s2c"}, {"line", r.at("line")}}.dump() << "\n";
    }
    fs::remove_all(dir);
    return out.str();
}

Bundle sample_bundle() {
    Bundle b;
    b.id = BundleId{EndpointId{"A", "src"}, 1700000000000, 3};
    b.destination = EndpointId{"Z", "sink"};
    b.report_to = EndpointId{"A", "reports"};
    b.lifetime = 60000;
    b.previous_node = EndpointId{"Y", ""};
    b.extension_blocks = {ExtensionBlock{10, 1, Bytes{0x00, 0xff, 0x10}}};
    b.payload = Bytes{'h', 'e', 'l', 'l', 'o', 0x00, 0xff};
    return b;
}

std::string envelope_vectors() {
    const auto bundle = sample_bundle();
    const auto meta = metadata_of(bundle, 1700000000100, {Action::send_to("Y"), Action::drop()}, 4,
                                  {"forward-pending"});
    std::vector<Envelope> samples;
    std::uint64_t seq = 0;
    const auto add = [&](Kind kind, json body) { samples.push_back(Envelope{kind, seq++, std::move(body)}); };

    add(Kind::hello, hello_body(Hello{kProtocolVersion, "bpa", "N1"}));
    add(Kind::hello, hello_body(Hello{kProtocolVersion, "bdm", "router"}));
    add(Kind::subscribe, subscribe_body({Topic::forwarding_required, Topic::bundle_expired}));
    add(Kind::rpc_request, request_body(RpcRequest{1, std::string(method::update_actions),
                                                   {{"bundle-id", bundle.id}, {"actions", meta.current_actions}}}));
    add(Kind::rpc_request, request_body(RpcRequest{"corr-2", std::string(method::list_bundles), json::object()}));
    add(Kind::rpc_response, response_body(RpcResponse{1, json::object(), std::nullopt}));
    add(Kind::rpc_response, response_body(RpcResponse{2, {{"bundles", json::array({meta})}}, std::nullopt}));
    add(Kind::rpc_response,
        response_body(RpcResponse{3, nullptr, RpcError{"unknown-bundle", "no such bundle"}}));
    add(Kind::rpc_response, response_body(RpcResponse{nullptr, nullptr, RpcError{"protocol-error", "seq-regression"}}));
    for (const auto topic : kAllTopics) {
        Event e;
        e.topic = topic;
        e.timestamp = 1700000000200;
        if (is_bundle_topic(topic)) {
            e.bundle = meta;
        } else {
            e.peer = "Y";
            e.address = "127.0.0.1:4556";
        }
        if (topic == Topic::action_failed) {
            e.action_index = 0;
            e.reason = "no-link";
        }
        add(Kind::event, json(e));
    }
    add(Kind::event, json{{"delivery", bundle_to_json(bundle)}});
    add(Kind::event, json{{"text", "unicode é中 \U0001F600 and \"quotes\" \\ /"}});

    std::ostringstream out;
    for (const auto& env : samples) {
        auto line = encode_message(env);
        line.pop_back();
        out << json{{"envelope", {{"kind", to_string(env.kind)}, {"seq", env.seq}, {"body", env.body}}},
                    {"line", line}}
                   .dump()
            << "\n";
    }
    return out.str();
}

std::string decode_error_vectors() {
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"{\"kind\":\"event\",\"seq\":0", "malformed-document"},
        {"[1,2,3]", "malformed-document"},
        {"{\"kind\":\"event\",\"body\":{}}", "malformed-document"},
        {"{\"seq\":0,\"body\":{}}", "malformed-document"},
        {"{\"kind\":\"event\",\"seq\":0}", "malformed-document"},
        {"{\"kind\":\"event\",\"seq\":-1,\"body\":{}}", "malformed-document"},
        {"{\"kind\":\"event\",\"seq\":0,\"body\":{},\"extra\":1}", "malformed-document"},
        {"{\"kind\":\"gossip\",\"seq\":0,\"body\":{}}", "unknown-kind"},
        {"{\"kind\":\"event\",\"seq\":0,\r\"body\":{}}", "malformed-document"},
        {"{\"kind\":\"event\",\"seq\":0,\"body\":{\"pad\":\"" + std::string(kMaxLineBytes, 'x') + "\"}}",
         "malformed-document"},
    };
    std::ostringstream out;
    for (const auto& [line, expected] : cases) {
        std::string actual = "accepted";
        try {
            decode_message(line);
        } catch (const Error& e) {
            actual = e.code();
        }
        if (actual != expected) throw Error("conformance", "decoder disagrees on " + line.substr(0, 60));
        // The oversized case is stored by description; 1 MiB of padding would bloat the corpus.
        if (line.size() > kMaxLineBytes)
            out << json{{"line-pattern", "{\"kind\":\"event\",\"seq\":0,\"body\":{\"pad\":\"<x * 1048576>\"}}"},
                        {"error", expected}}
                       .dump()
                << "\n";
        else
            out << json{{"line", line}, {"error", expected}}.dump() << "\n";
    }
    return out.str();
}

std::string frame_vectors() {
    static const char* hex = "0123456789abcdef";
    auto minimal = sample_bundle();
    minimal.report_to.reset();
    minimal.previous_node.reset();
    minimal.extension_blocks.clear();
    minimal.payload.clear();
    std::ostringstream out;
    for (const auto& b : {sample_bundle(), minimal}) {
        std::string frame_hex;
        for (const unsigned char c : cla::encode_frame(b)) {
            frame_hex += hex[c >> 4];
            frame_hex += hex[c & 15];
        }
        out << json{{"bundle", bundle_to_json(b)}, {"frame-hex", frame_hex}}.dump() << "\n";
    }
    return out.str();
}

}  // namespace

std::vector<CorpusFile> generate_conformance_corpus() {
    const auto script = session_script();
    return {
        {"dispatch-session.script.json", script.dump(2) + "\n"},
        {"dispatch-session.jsonl", record_session(script)},
        {"envelopes.jsonl", envelope_vectors()},
        {"decode-errors.jsonl", decode_error_vectors()},
        {"frames.jsonl", frame_vectors()},
    };
}

void write_conformance_corpus(const std::string& dir) {
    fs::create_directories(dir);
    for (const auto& file : generate_conformance_corpus()) {
        std::ofstream out(fs::path(dir) / file.name, std::ios::binary);
        out << file.content;
        if (!out) throw Error("io-error", "cannot write " + file.name);
    }
}

}  // namespace bpdx
