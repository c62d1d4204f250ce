#include <gtest/gtest.h>
#include <poll.h>
#include <unistd.h>

#include <filesystem>
#include <random>

#include "bpdx/base64.hpp"
#include "bpdx/net.hpp"
#include "bpdx/scenario.hpp"
#include "support/harness.hpp"

using namespace bpdx;
using harness::RunningNode;
using nlohmann::json;

namespace {

/// Line client without any protocol logic, for feeding the node bad input.
class RawClient {
public:
    explicit RawClient(const std::string& address)
        : fd_(net::connect_blocking(net::parse_address(address), 2000)) {}

    void send(const std::string& line) { net::write_all(fd_.get(), line); }

    /// Next line, or nothing on timeout or end of stream.
    std::optional<std::string> read_line(int timeout_ms = 3000) {
        for (;;) {
            if (auto line = split_.next()) return line;
            if (eof_) return std::nullopt;
            pollfd pfd{fd_.get(), POLLIN, 0};
            if (::poll(&pfd, 1, timeout_ms) <= 0) return std::nullopt;
            char buf[65536];
            const auto n = ::read(fd_.get(), buf, sizeof(buf));
            if (n <= 0) {
                eof_ = true;
                continue;
            }
            split_.feed(std::string_view(buf, static_cast<std::size_t>(n)));
        }
    }

    /// Reads until end of stream; returns the close notice if one was seen.
    std::optional<RpcResponse> read_close_notice(int timeout_ms = 5000) {
        std::optional<RpcResponse> notice;
        while (auto line = read_line(timeout_ms)) {
            const auto env = decode_message(*line);
            if (env.kind == Kind::rpc_response && env.body.at("id").is_null()) notice = parse_response(env.body);
        }
        return notice;
    }

    bool eof() const { return eof_; }

private:
    net::Fd fd_;
    LineSplitter split_{64u << 20};
    bool eof_ = false;
};

std::string hello_line(int version, const std::string& role, std::uint64_t seq = 0) {
    return encode_message(Envelope{Kind::hello, seq, hello_body(Hello{version, role, "raw"})});
}

std::string error_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    return "none";
}

std::set<Topic> all_topics() { return {std::begin(kAllTopics), std::end(kAllTopics)}; }

json send_params(const std::string& dest, const Bytes& payload, Duration lifetime = 60000) {
    return json{{"destination", dest}, {"payload", base64::encode(payload)}, {"lifetime", lifetime}};
}

Bytes random_bytes(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Bytes b(n);
    for (auto& c : b) c = static_cast<std::uint8_t>(rng());
    return b;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration and startup

TEST(NodeConfig, DuplicatePortIsBadConfig) {
    auto c = harness::config("A");
    c.dispatch_address = "127.0.0.1:45999";
    c.app_address = "127.0.0.1:45999";
    EXPECT_EQ(error_code([&] { validate(c); }), "bad-config");
}

TEST(NodeConfig, BadNameAndZeroPeriod) {
    auto c = harness::config("a b");
    EXPECT_EQ(error_code([&] { validate(c); }), "bad-config");
    c = harness::config("A");
    c.expiry_scan_period = 0;
    EXPECT_EQ(error_code([&] { validate(c); }), "bad-config");
    c = harness::config("A");
    c.default_actions = {Action{"teleport", json::object()}};
    EXPECT_EQ(error_code([&] { validate(c); }), "bad-config");
}

TEST(NodeConfig, PortInUse) {
    RunningNode a("A");
    auto c = harness::config("B");
    c.dispatch_address = a->dispatch_address();
    EXPECT_EQ(error_code([&] { Node n(c); }), "port-in-use");
}

TEST(NodeConfig, LoadsFile) {
    char path[] = "/tmp/bpdx-config-XXXXXX";
    const int fd = ::mkstemp(path);
    const std::string text =
        R"({"node-name":"GW","default-actions":[{"verb":"drop","args":{}}],"expiry-scan-period-ms":50,)"
        R"("dispatch":"127.0.0.1:0","subscriber-queue-cap":8})";
    ASSERT_EQ(::write(fd, text.data(), text.size()), static_cast<ssize_t>(text.size()));
    ::close(fd);
    const auto c = load_node_config(path);
    ::unlink(path);
    EXPECT_EQ(c.node_name, "GW");
    EXPECT_EQ(c.default_actions, ActionList{Action::drop()});
    EXPECT_EQ(c.expiry_scan_period, 50u);
    EXPECT_EQ(c.subscriber_queue_cap, 8u);
    EXPECT_EQ(error_code([] { load_node_config("/nonexistent/config.json"); }), "bad-config");
}

TEST(Node, ReadyLineNamesAllListeners) {
    RunningNode a("A");
    const auto line = a->ready_line();
    EXPECT_EQ(line.rfind("ready node=A ", 0), 0u);
    EXPECT_NE(line.find("dispatch=" + a->dispatch_address()), std::string::npos);
    EXPECT_NE(line.find("app=" + a->app_address()), std::string::npos);
    EXPECT_NE(line.find("cla=" + a->cla_address()), std::string::npos);
}

TEST(Node, DefaultActionsVisibleAfterIngest) {
    auto c = harness::config("A");
    c.default_actions = {Action::send_to("GW"), Action::drop()};
    RunningNode a(c);
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    app->call_ok("send", send_params("dtn://Z/x", Bytes{1}));
    auto bdm = a.dispatch();
    const auto bundles = bdm->call_ok("list-bundles").at("bundles");
    ASSERT_EQ(bundles.size(), 1u);
    EXPECT_EQ(bundles[0]["current-actions"].get<ActionList>(), c.default_actions);
}

TEST(Node, UnixSocketListener) {
    auto c = harness::config("A");
    const auto path = "/tmp/bpdx-test-" + std::to_string(::getpid()) + ".sock";
    c.dispatch_address = "unix:" + path;
    {
        RunningNode a(c);
        Session s(c.dispatch_address, "monitor");
        EXPECT_EQ(s.server_hello().node, "A");
        EXPECT_TRUE(s.call_ok("list-bundles").at("bundles").empty());
    }
    EXPECT_NE(::access(path.c_str(), F_OK), 0);
}

// ---------------------------------------------------------------------------
// dispatch protocol

TEST(Dispatch, ServerHelloFirst) {
    RunningNode a("A");
    RawClient raw(a->dispatch_address());
    const auto line = raw.read_line();
    ASSERT_TRUE(line);
    const auto env = decode_message(*line);
    EXPECT_EQ(env.kind, Kind::hello);
    EXPECT_EQ(env.seq, 0u);
    const auto hello = parse_hello(env.body);
    EXPECT_EQ(hello.role, "bpa");
    EXPECT_EQ(hello.node, "A");
    EXPECT_EQ(hello.protocol_version, 1);
}

TEST(Dispatch, SupportedActionsStable) {
    RunningNode a("A");
    auto s = a.dispatch();
    const auto first = s->call_ok("query-supported-actions");
    const auto verbs = first.at("actions").get<std::vector<VerbDescriptor>>();
    ASSERT_EQ(verbs.size(), 2u);
    EXPECT_EQ(verbs[0].verb, "send-to");
    EXPECT_EQ(verbs[1].verb, "drop");
    EXPECT_EQ(s->call_ok("query-supported-actions"), first);
}

TEST(Dispatch, RpcErrors) {
    RunningNode a("A");
    auto s = a.dispatch();
    const json unknown_id = BundleId{EndpointId{"X", "y"}, 1, 2};
    EXPECT_EQ(error_code([&] {
                  s->call_ok("update-actions", json{{"bundle-id", unknown_id}, {"actions", json::array()}});
              }),
              "unknown-bundle");
    EXPECT_EQ(error_code([&] { s->call_ok("get-bundle", json{{"bundle-id", unknown_id}}); }), "unknown-bundle");
    EXPECT_EQ(error_code([&] { s->call_ok("reboot"); }), "unknown-method");
    EXPECT_EQ(error_code([&] { s->call_ok("update-actions", json{{"bundle-id", 5}}); }), "bad-params");
    EXPECT_EQ(error_code([&] {
                  s->call_ok("set-default-actions",
                             json{{"actions", json::array({json{{"verb", "teleport"}, {"args", json::object()}}})}});
              }),
              "invalid-action-list");
    // The session survives errors.
    EXPECT_TRUE(s->call_ok("list-bundles").at("bundles").empty());
}

TEST(Dispatch, DuplicateRequestIdRejected) {
    RunningNode a("A");
    RawClient raw(a->dispatch_address());
    raw.read_line();
    raw.send(hello_line(1, "bdm"));
    raw.send(encode_message(Envelope{Kind::rpc_request, 1, request_body(RpcRequest{"x", "list-bundles", json::object()})}));
    raw.send(encode_message(Envelope{Kind::rpc_request, 2, request_body(RpcRequest{"x", "list-bundles", json::object()})}));
    const auto l1 = raw.read_line();
    ASSERT_TRUE(l1);
    const auto l2 = raw.read_line();
    ASSERT_TRUE(l2) << *l1;
    const auto first = parse_response(decode_message(*l1).body);
    const auto second = parse_response(decode_message(*l2).body);
    EXPECT_TRUE(first.ok());
    ASSERT_FALSE(second.ok());
    EXPECT_EQ(second.error->code, "duplicate-id");
}

TEST(Dispatch, VersionMismatchClosesConnection) {
    RunningNode a("A");
    RawClient raw(a->dispatch_address());
    raw.read_line();
    raw.send(hello_line(2, "bdm"));
    const auto notice = raw.read_close_notice();
    ASSERT_TRUE(notice);
    EXPECT_EQ(notice->error->code, "protocol-error");
    EXPECT_NE(notice->error->message.find("version-mismatch"), std::string::npos);
    EXPECT_TRUE(raw.eof());
}

TEST(Dispatch, ProtocolViolationsClose) {
    RunningNode a("A");
    const std::vector<std::pair<std::vector<std::string>, std::string>> cases = {
        {{R"({"kind":"subscribe","seq":0,"body":{"topics":[]}})" "\n"}, "hello"},
        {{hello_line(1, "bdm"), R"({"kind":"whisper","seq":1,"body":{}})" "\n"}, "unknown-kind"},
        {{hello_line(1, "bdm"), encode_message(Envelope{Kind::subscribe, 5, subscribe_body({Topic::link_up})}),
          encode_message(Envelope{Kind::subscribe, 4, subscribe_body({Topic::link_up})})},
         "seq-regression"},
        {{hello_line(1, "bdm"), "{not json\n"}, "malformed-document"},
        {{hello_line(1, "bpa")}, "role"},
    };
    for (const auto& [lines, needle] : cases) {
        RawClient raw(a->dispatch_address());
        raw.read_line();
        for (const auto& l : lines) raw.send(l);
        const auto notice = raw.read_close_notice();
        ASSERT_TRUE(notice) << needle;
        EXPECT_EQ(notice->error->code, "protocol-error");
        EXPECT_NE(notice->error->message.find(needle), std::string::npos) << notice->error->message;
    }
    // Still serving.
    EXPECT_TRUE(a.dispatch()->call_ok("list-bundles").at("bundles").empty());
}

TEST(Dispatch, SlowConsumerDisconnected) {
    const auto wire = std::filesystem::temp_directory_path() / ("bpdx-slow-" + std::to_string(::getpid()) + ".jsonl");
    std::filesystem::remove(wire);
    auto c = harness::config("A");
    c.subscriber_queue_cap = 4;
    c.wire_log = wire.string();
    {
        RunningNode a(c);
        RawClient slow(a->dispatch_address());
        slow.read_line();
        slow.send(hello_line(1, "monitor"));
        slow.send(encode_message(Envelope{Kind::subscribe, 1, json{{"topics", {"*"}}}}));
        auto healthy = a.dispatch("monitor");
        healthy->subscribe(all_topics());
        std::this_thread::sleep_for(std::chrono::milliseconds(50));

        // Large extension blocks make each event big enough to fill the socket.
        auto app = a.app();
        app->call_ok("register", json{{"demux", "src"}});
        const json block =
            json::array({json{{"type", 1}, {"flags", 0}, {"data", base64::encode(Bytes(200000, 7))}}});
        for (int i = 0; i < 120; ++i) {
            auto p = send_params("dtn://Z/x", Bytes{1});
            p["extension-blocks"] = block;
            app->call_ok("send", p, 10000);
        }
        // The notice may or may not drain before the grace period; the close itself must happen.
        const auto notice = slow.read_close_notice(10000);
        EXPECT_TRUE(slow.eof());
        if (notice) EXPECT_NE(notice->error->message.find("slow-consumer"), std::string::npos);
        EXPECT_FALSE(healthy->closed());
        // 120 bundles of this size cannot be listed on one line.
        EXPECT_EQ(error_code([&] { a.dispatch()->call_ok("list-bundles"); }), "unrepresentable-value");
        EXPECT_FALSE(healthy->closed());
    }
    int notices = 0;
    for (const auto& rec : load_wire_log(wire.string()).records)
        if (rec.value("dir", "") == "out" && rec.value("line", "").find("slow-consumer") != std::string::npos)
            ++notices;
    EXPECT_EQ(notices, 1);
    std::filesystem::remove(wire);
}

TEST(Dispatch, SubscriberSeesOnlyItsTopicsInOrder) {
    RunningNode a("A");
    auto links = a.dispatch("monitor");
    links->subscribe({Topic::forwarding_required});
    auto all = a.dispatch("monitor");
    all->subscribe(all_topics());
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    for (int i = 0; i < 3; ++i) app->call_ok("send", send_params("dtn://Z/x", Bytes{static_cast<std::uint8_t>(i)}));
    std::vector<Topic> seen_all;
    for (int i = 0; i < 6; ++i) {
        const auto e = all->next_event(2000);
        ASSERT_TRUE(e);
        seen_all.push_back(e->topic);
    }
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(seen_all[2 * i], Topic::bundle_received);
        EXPECT_EQ(seen_all[2 * i + 1], Topic::forwarding_required);
    }
    std::vector<std::uint64_t> seqs;
    for (int i = 0; i < 3; ++i) {
        const auto e = links->next_event(2000);
        ASSERT_TRUE(e);
        EXPECT_EQ(e->topic, Topic::forwarding_required);
        seqs.push_back(e->bundle->id.sequence);
    }
    EXPECT_TRUE(std::is_sorted(seqs.begin(), seqs.end()));
    EXPECT_FALSE(links->next_event(200));
}

TEST(Dispatch, ServerSeqStrictlyIncreases) {
    RunningNode a("A");
    RawClient raw(a->dispatch_address());
    raw.send(hello_line(1, "monitor"));
    raw.send(encode_message(Envelope{Kind::subscribe, 1, json{{"topics", {"*"}}}}));
    for (std::uint64_t i = 0; i < 5; ++i)
        raw.send(encode_message(
            Envelope{Kind::rpc_request, 2 + i, request_body(RpcRequest{i, "list-bundles", json::object()})}));
    MessageDecoder decoder;
    for (int i = 0; i < 6; ++i) {
        const auto line = raw.read_line();
        ASSERT_TRUE(line);
        const auto env = decoder.decode(*line);
        EXPECT_EQ(env.seq, static_cast<std::uint64_t>(i));
    }
}

// ---------------------------------------------------------------------------
// links

TEST(Link, DialPublishesLinkUpOnBothSides) {
    RunningNode a("A"), b("B");
    auto ma = a.dispatch("monitor"), mb = b.dispatch("monitor");
    ma->subscribe({Topic::link_up});
    mb->subscribe({Topic::link_up});
    auto app = a.app();
    const auto result = app->call_ok("link-dial", json{{"address", b->cla_address()}});
    EXPECT_EQ(result.at("peer"), "B");
    const auto ea = harness::wait_for(*ma, Topic::link_up);
    const auto eb = harness::wait_for(*mb, Topic::link_up);
    ASSERT_TRUE(ea && eb);
    EXPECT_EQ(ea->peer, "B");
    EXPECT_EQ(eb->peer, "A");
    EXPECT_FALSE(ma->next_event(200));
}

TEST(Link, DialClosedPortIsRefused) {
    RunningNode a("A");
    auto m = a.dispatch("monitor");
    m->subscribe(all_topics());
    // Grab a free port and release it.
    std::string address;
    {
        net::Address bound;
        net::listen_on(net::parse_address("127.0.0.1:0"), bound);
        address = bound.str();
    }
    EXPECT_EQ(error_code([&] { a.app()->call_ok("link-dial", json{{"address", address}}); }), "connect-refused");
    EXPECT_EQ(error_code([&] { a.app()->call_ok("link-dial", json{{"address", "no-port"}}); }), "bad-address");
    EXPECT_FALSE(m->next_event(200));
}

TEST(Link, NameConflict) {
    RunningNode a1("A"), a2("A");
    EXPECT_EQ(error_code([&] { a1.app()->call_ok("link-dial", json{{"address", a2->cla_address()}}); }),
              "name-conflict");
}

TEST(Link, HandshakeTimeout) {
    RunningNode a("A");
    net::Address bound;
    auto silent = net::listen_on(net::parse_address("127.0.0.1:0"), bound);
    const auto start = std::chrono::steady_clock::now();
    EXPECT_EQ(error_code([&] { a.app()->call_ok("link-dial", json{{"address", bound.str()}}, 6000); }),
              "handshake-timeout");
    const auto took = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    EXPECT_GE(took.count(), 1900);
    EXPECT_LT(took.count(), 4000);
}

TEST(Link, CloseAlternatesEvents) {
    RunningNode a("A"), b("B");
    auto m = a.dispatch("monitor");
    m->subscribe({Topic::link_up, Topic::link_down});
    auto app = a.app();
    for (int i = 0; i < 3; ++i) {
        app->call_ok("link-dial", json{{"address", b->cla_address()}});
        ASSERT_TRUE(harness::wait_for(*m, Topic::link_up));
        app->call_ok("link-close", json{{"peer", "B"}});
        ASSERT_TRUE(harness::wait_for(*m, Topic::link_down));
    }
    EXPECT_EQ(error_code([&] { app->call_ok("link-close", json{{"peer", "B"}}); }), "unknown-peer");
}

TEST(Link, PeerShutdownIsLinkDown) {
    RunningNode a("A");
    auto m = a.dispatch("monitor");
    m->subscribe({Topic::link_up, Topic::link_down});
    {
        RunningNode b("B");
        a.app()->call_ok("link-dial", json{{"address", b->cla_address()}});
        ASSERT_TRUE(harness::wait_for(*m, Topic::link_up));
    }
    const auto e = harness::wait_for(*m, Topic::link_down);
    ASSERT_TRUE(e);
    EXPECT_EQ(e->peer, "B");
}

TEST(Link, SimultaneousDialsLeaveOneLink) {
    RunningNode a("A"), b("B");
    auto ma = a.dispatch("monitor");
    ma->subscribe({Topic::link_up, Topic::link_down});
    std::thread t([&] {
        try {
            b.app()->call_ok("link-dial", json{{"address", a->cla_address()}});
        } catch (const Error&) {
        }
    });
    try {
        a.app()->call_ok("link-dial", json{{"address", b->cla_address()}});
    } catch (const Error&) {
    }
    t.join();
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    int up = 0, down = 0;
    while (auto e = ma->next_event(100)) (e->topic == Topic::link_up ? up : down)++;
    EXPECT_EQ(up - down, 1);
    // The surviving link carries traffic.
    auto sink = b.app();
    sink->call_ok("register", json{{"demux", "sink"}});
    a.dispatch()->call_ok("set-default-actions", json{{"actions", ActionList{Action::send_to("B"), Action::drop()}}});
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    app->call_ok("send", send_params("dtn://B/sink", Bytes{4, 2}));
    EXPECT_TRUE(sink->next_message(3000));
}

TEST(Link, RejectsMalformedFrame) {
    RunningNode a("A");
    auto m = a.dispatch("monitor");
    m->subscribe({Topic::link_up, Topic::link_down, Topic::bundle_received});
    auto fd = net::connect_blocking(net::parse_address(a->cla_address()), 2000);
    net::write_all(fd.get(), encode_message(Envelope{Kind::hello, 0, hello_body(Hello{1, "cla", "M"})}));
    ASSERT_TRUE(harness::wait_for(*m, Topic::link_up));
    net::write_all(fd.get(), std::string("\x00\x00\x00\x05hello", 9));
    EXPECT_TRUE(harness::wait_for(*m, Topic::link_down));
}

TEST(Link, TruncatedFrameNotIngested) {
    RunningNode a("A");
    auto m = a.dispatch("monitor");
    m->subscribe({Topic::link_up, Topic::link_down, Topic::bundle_received});
    {
        auto fd = net::connect_blocking(net::parse_address(a->cla_address()), 2000);
        net::write_all(fd.get(), encode_message(Envelope{Kind::hello, 0, hello_body(Hello{1, "cla", "M"})}));
        ASSERT_TRUE(harness::wait_for(*m, Topic::link_up));
        net::write_all(fd.get(), std::string("\x00\x00\x01\x00{\"id\":", 10));
    }
    const auto e = m->next_event(2000);
    ASSERT_TRUE(e);
    EXPECT_EQ(e->topic, Topic::link_down);
    EXPECT_TRUE(a.dispatch()->call_ok("list-bundles").at("bundles").empty());
}

// ---------------------------------------------------------------------------
// application agent

TEST(App, RegisterAndDemuxTaken) {
    RunningNode a("A");
    auto first = a.app();
    EXPECT_EQ(first->call_ok("register", json{{"demux", "app1"}}).at("endpoint"), "dtn://A/app1");
    auto second = a.app();
    EXPECT_EQ(error_code([&] { second->call_ok("register", json{{"demux", "app1"}}); }), "demux-taken");
    first->close();
    first.reset();
    EXPECT_TRUE(harness::eventually([&] {
        try {
            second->call_ok("register", json{{"demux", "app1"}});
            return true;
        } catch (const Error&) {
            return false;
        }
    }));
}

TEST(App, SendErrors) {
    RunningNode a("A");
    auto app = a.app();
    EXPECT_EQ(error_code([&] { app->call_ok("send", send_params("dtn://Z/x", Bytes{1})); }), "not-registered");
    app->call_ok("register", json{{"demux", "src"}});
    EXPECT_EQ(error_code([&] { app->call_ok("send", send_params("dtn://Z/x", Bytes{1}, 0)); }), "zero-lifetime");
    EXPECT_EQ(error_code([&] { app->call_ok("send", send_params("http://Z/x", Bytes{1})); }), "invalid-destination");
    EXPECT_EQ(error_code([&] { app->call_ok("send", send_params("dtn:///x", Bytes{1})); }), "invalid-destination");

    // Metadata must fit on a dispatch line; the payload does not count.
    auto big = send_params("dtn://Z/x", Bytes(4u << 20, 1));
    big["extension-blocks"] = json::array({json{{"type", 9}, {"flags", 0}, {"data", base64::encode(Bytes(900000, 2))}}});
    EXPECT_EQ(error_code([&] { app->call_ok("send", big); }), "too-large");
    big["extension-blocks"] = json::array({json{{"type", 9}, {"flags", 0}, {"data", base64::encode(Bytes(600000, 2))}}});
    EXPECT_NO_THROW(app->call_ok("send", big, 10000));
}

TEST(App, SendPublishesIngestEvents) {
    RunningNode a("A");
    auto m = a.dispatch("monitor");
    m->subscribe(all_topics());
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    auto p = send_params("dtn://Z/app", random_bytes(1024, 1));
    p["extension-blocks"] = json::array({json{{"type", 42}, {"flags", 0}, {"data", base64::encode(Bytes{'x', 'y', 'z'})}}});
    const auto result = app->call_ok("send", p);
    EXPECT_EQ(result.at("outcome"), "stored");
    const auto id = result.at("bundle-id").get<BundleId>();
    EXPECT_EQ(id.source.str(), "dtn://A/src");
    const auto received = m->next_event(2000);
    const auto required = m->next_event(2000);
    ASSERT_TRUE(received && required);
    EXPECT_EQ(received->topic, Topic::bundle_received);
    EXPECT_EQ(required->topic, Topic::forwarding_required);
    EXPECT_EQ(required->bundle->id, id);
    EXPECT_EQ(required->bundle->payload_length, 1024u);
    ASSERT_EQ(required->bundle->extension_blocks.size(), 1u);
    EXPECT_EQ(required->bundle->extension_blocks[0].block_type, 42u);
    EXPECT_EQ(required->bundle->extension_blocks[0].data, (Bytes{'x', 'y', 'z'}));
}

TEST(App, CreationSequenceIsUnique) {
    RunningNode a("A");
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    std::set<BundleId> ids;
    for (int i = 0; i < 50; ++i)
        EXPECT_TRUE(ids.insert(app->call_ok("send", send_params("dtn://Z/x", Bytes{})).at("bundle-id").get<BundleId>())
                        .second);
}

TEST(App, LocalDeliveryAndHolding) {
    RunningNode a("A");
    auto m = a.dispatch("monitor");
    m->subscribe(all_topics());
    auto sender = a.app();
    sender->call_ok("register", json{{"demux", "src"}});
    const auto payload = random_bytes(77, 3);
    EXPECT_EQ(sender->call_ok("send", send_params("dtn://A/late", payload)).at("outcome"), "held");
    const auto bundles = a.dispatch()->call_ok("list-bundles").at("bundles");
    ASSERT_EQ(bundles.size(), 1u);
    EXPECT_EQ(bundles[0].at("retention"), json::array({"dispatch-pending"}));

    auto receiver = a.app();
    receiver->call_ok("register", json{{"demux", "late"}});
    const auto msg = receiver->next_message(2000);
    ASSERT_TRUE(msg);
    const auto delivered = bundle_from_json(msg->body.at("delivery"));
    EXPECT_EQ(delivered.payload, payload);
    EXPECT_TRUE(harness::wait_for(*m, Topic::bundle_delivered));
    EXPECT_TRUE(a.dispatch()->call_ok("list-bundles").at("bundles").empty());

    // Registered now, so the next one goes straight through.
    EXPECT_EQ(sender->call_ok("send", send_params("dtn://A/late", payload)).at("outcome"), "delivered");
}

TEST(App, EndToEndPayloadIntegrity) {
    RunningNode b("B");
    auto c = harness::config("A");
    c.default_actions = {Action::send_to("B"), Action::drop()};
    RunningNode a(c);
    auto sink = b.app();
    sink->call_ok("register", json{{"demux", "sink"}});
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    app->call_ok("link-dial", json{{"address", b->cla_address()}});
    for (const std::size_t size : {std::size_t{0}, std::size_t{1}, std::size_t{1000}, std::size_t{1} << 20}) {
        const auto payload = random_bytes(size, size);
        app->call_ok("send", send_params("dtn://B/sink", payload), 10000);
        const auto msg = sink->next_message(10000);
        ASSERT_TRUE(msg) << size;
        const auto got = bundle_from_json(msg->body.at("delivery"));
        EXPECT_EQ(got.payload, payload) << size;
        EXPECT_EQ(got.id.source.str(), "dtn://A/src");
        ASSERT_TRUE(got.previous_node);
        EXPECT_EQ(got.previous_node->str(), "dtn://A/");
    }
}

TEST(App, ForwardedBundleCarriesPreviousNode) {
    RunningNode b("B");
    auto c = harness::config("A");
    c.default_actions = {Action::send_to("B"), Action::drop()};
    RunningNode a(c);
    auto m = b.dispatch("monitor");
    m->subscribe({Topic::bundle_received});
    auto app = a.app();
    app->call_ok("register", json{{"demux", "src"}});
    app->call_ok("link-dial", json{{"address", b->cla_address()}});
    app->call_ok("send", send_params("dtn://C/x", Bytes{9}));
    const auto e = harness::wait_for(*m, Topic::bundle_received);
    ASSERT_TRUE(e);
    ASSERT_TRUE(e->bundle->previous_node);
    EXPECT_EQ(e->bundle->previous_node->node, "A");
    EXPECT_EQ(b.dispatch()->call_ok("list-bundles").at("bundles").size(), 1u);
}

TEST(App, DeliveriesNotSentToDispatchSubscribers) {
    RunningNode a("A");
    RawClient raw(a->dispatch_address());
    raw.read_line();
    raw.send(hello_line(1, "monitor"));
    raw.send(encode_message(Envelope{Kind::subscribe, 1, json{{"topics", {"*"}}}}));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    auto app = a.app();
    app->call_ok("register", json{{"demux", "in"}});
    const auto payload = random_bytes(64, 9);
    app->call_ok("send", send_params("dtn://A/in", payload));
    ASSERT_TRUE(app->next_message(2000));
    const auto needle = base64::encode(payload);
    int lines = 0;
    while (auto line = raw.read_line(300)) {
        ++lines;
        EXPECT_EQ(line->find(needle), std::string::npos);
        EXPECT_EQ(line->find("\"payload\""), std::string::npos);
    }
    EXPECT_GE(lines, 1);
}
