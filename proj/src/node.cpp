#include "bpdx/node.hpp"

#include <fcntl.h>
#include <netinet/in.h>
#include <arpa/inet.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bpdx/agent.hpp"
#include "bpdx/base64.hpp"
#include "bpdx/cla.hpp"
#include "bpdx/event_bus.hpp"
#include "bpdx/net.hpp"
#include "bpdx/protocol.hpp"
#include "bpdx/wire_log.hpp"

namespace bpdx {

using nlohmann::json;

NodeConfig load_node_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("bad-config", "cannot read " + path);
    NodeConfig config;
    try {
        const auto j = json::parse(in);
        config.node_name = j.at("node-name").get<std::string>();
        config.default_actions = j.value("default-actions", ActionList{});
        config.dispatch_address = j.value("dispatch", config.dispatch_address);
        config.app_address = j.value("app", config.app_address);
        config.cla_address = j.value("cla", config.cla_address);
        config.expiry_scan_period = j.value("expiry-scan-period-ms", config.expiry_scan_period);
        config.subscriber_queue_cap = j.value("subscriber-queue-cap", config.subscriber_queue_cap);
        config.dial = j.value("dial", std::vector<std::string>{});
        config.wire_log = j.value("wire-log", std::string{});
    } catch (const json::exception& e) {
        throw Error("bad-config", path + ": " + e.what());
    }
    return config;
}

void validate(const NodeConfig& config) {
    if (!valid_node_name(config.node_name)) throw Error("bad-config", "invalid node name '" + config.node_name + "'");
    if (config.expiry_scan_period == 0) throw Error("bad-config", "expiry scan period must be positive");
    if (config.subscriber_queue_cap == 0) throw Error("bad-config", "subscriber queue cap must be positive");
    if (const auto err = validate_action_list(config.default_actions, core_verbs()))
        throw Error("bad-config", "invalid default actions: " + err->str());

    std::set<std::string> seen;
    for (const auto* text : {&config.dispatch_address, &config.app_address, &config.cla_address}) {
        net::Address address;
        try {
            address = net::parse_address(*text);
        } catch (const Error& e) {
            throw Error("bad-config", e.what());
        }
        if (!address.unix_socket && address.port == 0) continue;
        if (!seen.insert(address.str()).second) throw Error("bad-config", "duplicate listener address " + *text);
    }
}

namespace {

enum class ConnType { dispatch, app, cla };
enum class LinkState { connecting, handshaking, active };

std::string_view channel_name(ConnType type) {
    return type == ConnType::dispatch ? "dispatch" : type == ConnType::app ? "app" : "cla";
}

struct PendingDial {
    int conn = 0;
    json id;
};

struct Conn {
    Conn(int id_, ConnType type_, net::Fd fd_)
        : id(id_),
          type(type_),
          fd(std::move(fd_)),
          split(type_ == ConnType::app ? kAppMaxLineBytes : kMaxLineBytes),
          decoder(type_ == ConnType::app ? kAppMaxLineBytes : kMaxLineBytes),
          encoder(type_ == ConnType::app ? kAppMaxLineBytes : kMaxLineBytes) {}

    int id;
    ConnType type;
    net::Fd fd;
    std::string out;
    bool closing = false;
    bool dead = false;
    bool cleaned = false;
    Instant close_deadline = 0;

    // dispatch / app
    LineSplitter split;
    MessageDecoder decoder;
    MessageEncoder encoder;
    bool hello_received = false;
    std::string role;
    std::set<std::string> used_ids;
    SubscriberId subscriber = 0;
    std::vector<std::string> demuxes;

    // cla
    LinkState link_state = LinkState::handshaking;
    bool dialed = false;
    std::string peer;
    std::string address;
    Instant deadline = 0;
    std::optional<PendingDial> pending_dial;
    std::string handshake_buf;
    cla::FrameReader frames;
};

std::string peer_name(int fd) {
    sockaddr_storage ss{};
    socklen_t len = sizeof(ss);
    if (::getpeername(fd, reinterpret_cast<sockaddr*>(&ss), &len) != 0 || ss.ss_family != AF_INET) return "local";
    const auto* sa = reinterpret_cast<const sockaddr_in*>(&ss);
    char buf[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &sa->sin_addr, buf, sizeof(buf));
    return std::string(buf) + ":" + std::to_string(ntohs(sa->sin_port));
}

constexpr std::size_t kPumpHighWater = 256u << 10;
constexpr Instant kCloseGraceMs = 1000;
constexpr std::size_t kEventHeadroom = 64u << 10;

}  // namespace

struct Node::Impl {
    explicit Impl(NodeConfig cfg)
        : config(std::move(cfg)), agent(config.node_name, bus) {
        validate(config);
        if (!config.wire_log.empty()) log = WireLog(config.wire_log);
        agent.set_default_actions(config.default_actions);

        dispatch_fd = net::listen_on(net::parse_address(config.dispatch_address), dispatch_bound);
        app_fd = net::listen_on(net::parse_address(config.app_address), app_bound);
        cla_fd = net::listen_on(net::parse_address(config.cla_address), cla_bound);

        int fds[2];
        if (::pipe2(fds, O_NONBLOCK | O_CLOEXEC) != 0) throw Error("socket-error", "pipe failed");
        wake_r.reset(fds[0]);
        wake_w.reset(fds[1]);

        bus.set_tap([this](const Event& event) {
            log.record(event.timestamp, "bus", "pub", json{{"event", event}});
        });
        agent.set_transmit([this](const std::string& peer, const Bundle& b, std::string& reason) {
            return transmit(peer, b, reason);
        });
        agent.set_deliver([this](const Bundle& b) { return deliver(b); });
    }

    ~Impl() {
        for (const auto* bound : {&dispatch_bound, &app_bound, &cla_bound})
            if (bound->unix_socket) ::unlink(bound->path.c_str());
    }

    // -- plumbing -------------------------------------------------------------

    Conn& add_conn(ConnType type, net::Fd fd) {
        const int id = next_conn++;
        auto conn = std::make_unique<Conn>(id, type, std::move(fd));
        auto& ref = *conn;
        conns.emplace(id, std::move(conn));
        return ref;
    }

    Conn* find_conn(int id) {
        const auto it = conns.find(id);
        return it == conns.end() || it->second->dead ? nullptr : it->second.get();
    }

    void flush(Conn& c) {
        while (!c.out.empty() && !c.dead) {
            const auto n = ::send(c.fd.get(), c.out.data(), c.out.size(), MSG_NOSIGNAL);
            if (n < 0) {
                if (errno == EINTR) continue;
                if (errno == EAGAIN || errno == EWOULDBLOCK) return;
                kill(c, "link-closed");
                return;
            }
            c.out.erase(0, static_cast<std::size_t>(n));
        }
    }

    void send_line(Conn& c, Kind kind, json body, bool flush_now = true) {
        if (c.dead) return;
        auto line = c.encoder.encode(kind, std::move(body));
        if (c.type != ConnType::cla)
            log.record(wall_clock_ms(), channel_name(c.type), "out",
                       json{{"conn", c.id}, {"line", std::string_view(line).substr(0, line.size() - 1)}});
        c.out += line;
        if (flush_now) flush(c);
    }

    void respond(Conn& c, const json& id, json result) {
        pump_events();
        send_line(c, Kind::rpc_response, response_body(RpcResponse{id, std::move(result), std::nullopt}));
    }

    void respond_error(Conn& c, const json& id, const std::string& code, const std::string& message) {
        pump_events();
        send_line(c, Kind::rpc_response, response_body(RpcResponse{id, nullptr, RpcError{code, message}}));
    }

    void respond_pending(std::optional<PendingDial>& pending, const std::string& code, json result) {
        if (!pending) return;
        if (auto* c = find_conn(pending->conn)) {
            if (code.empty())
                respond(*c, pending->id, std::move(result));
            else
                respond_error(*c, pending->id, code, "dial failed: " + code);
        }
        pending.reset();
    }

    /// Releases everything the connection holds in the node.
    void cleanup(Conn& c, const std::string& reason) {
        if (c.cleaned) return;
        c.cleaned = true;
        const auto now = wall_clock_ms();
        if (c.subscriber) bus.remove_subscriber(c.subscriber);
        for (const auto& demux : c.demuxes) {
            const auto it = registrations.find(demux);
            if (it != registrations.end() && it->second == c.id) registrations.erase(it);
        }
        if (c.type == ConnType::cla) {
            if (c.link_state == LinkState::active) {
                const auto it = links.find(c.peer);
                if (it != links.end() && it->second == c.id) {
                    links.erase(it);
                    log.record(now, "link", "down", json{{"peer", c.peer}, {"address", c.address}});
                    agent.link_event(Topic::link_down, c.peer, c.address, now);
                }
            }
            respond_pending(c.pending_dial, reason.empty() ? "link-closed" : reason, nullptr);
        }
    }

    void kill(Conn& c, const std::string& reason = {}) {
        if (c.dead) return;
        c.dead = true;
        cleanup(c, reason);
    }

    /// Sends a close notice, then closes once the output drains.
    void protocol_error(Conn& c, const std::string& code, const std::string& message) {
        if (c.dead || c.closing) return;
        if (c.type != ConnType::cla) {
            send_line(c, Kind::rpc_response,
                      response_body(RpcResponse{nullptr, nullptr, RpcError{"protocol-error", code + ": " + message}}));
        }
        c.closing = true;
        c.close_deadline = wall_clock_ms() + kCloseGraceMs;
        cleanup(c, code);
    }

    // -- events ---------------------------------------------------------------

    void pump_events() {
        for (auto& [id, conn] : conns) {
            auto& c = *conn;
            if (c.type != ConnType::dispatch || !c.subscriber || c.dead || c.closing) continue;
            if (bus.overflowed(c.subscriber)) {
                // Lines not yet started are dropped so the notice is next.
                if (const auto nl = c.out.find('\n'); nl != std::string::npos) c.out.resize(nl + 1);
                protocol_error(c, "slow-consumer", "subscriber queue overflow");
                continue;
            }
            bool wrote = false;
            try {
                while (c.out.size() < kPumpHighWater) {
                    auto event = bus.pop(c.subscriber);
                    if (!event) break;
                    send_line(c, Kind::event, json(*event), false);
                    wrote = true;
                }
            } catch (const Error& e) {
                protocol_error(c, e.code(), e.what());
                continue;
            }
            if (wrote) flush(c);
        }
    }

    void settle() {
        agent.run(wall_clock_ms());
        pump_events();
    }

    // -- agent callbacks --------------------------------------------------------

    bool transmit(const std::string& peer, const Bundle& bundle, std::string& reason) {
        const auto it = links.find(peer);
        Conn* c = it == links.end() ? nullptr : find_conn(it->second);
        if (!c || c->closing || c->link_state != LinkState::active) {
            reason = "no-link";
            return false;
        }
        c->out += cla::encode_frame(bundle);
        flush(*c);
        if (c->dead) {
            reason = "link-closed";
            return false;
        }
        log.record(wall_clock_ms(), "cla", "tx",
                   json{{"peer", peer}, {"id", bundle.id}, {"payload-length", bundle.payload.size()}});
        return true;
    }

    bool deliver(const Bundle& bundle) {
        const auto it = registrations.find(bundle.destination.demux);
        Conn* c = it == registrations.end() ? nullptr : find_conn(it->second);
        if (!c || c->closing) return false;
        send_line(*c, Kind::event, json{{"delivery", bundle_to_json(bundle)}});
        return true;
    }

    // -- accept / read ----------------------------------------------------------

    void accept_all(int listener, ConnType type) {
        for (;;) {
            const int fd = ::accept4(listener, nullptr, nullptr, SOCK_NONBLOCK | SOCK_CLOEXEC);
            if (fd < 0) return;
            auto& c = add_conn(type, net::Fd{fd});
            if (type == ConnType::cla) {
                c.link_state = LinkState::handshaking;
                c.address = peer_name(fd);
                c.deadline = wall_clock_ms() + cla::kHandshakeTimeoutMs;
            }
            send_line(c, Kind::hello, hello_body(Hello{kProtocolVersion, type == ConnType::cla ? "cla" : "bpa",
                                                       config.node_name}));
        }
    }

    void read_conn(Conn& c) {
        char buf[65536];
        std::string data;
        bool eof = false;
        for (;;) {
            const auto n = ::recv(c.fd.get(), buf, sizeof(buf), 0);
            if (n > 0) {
                data.append(buf, static_cast<std::size_t>(n));
                if (data.size() > (4u << 20)) break;
                continue;
            }
            if (n == 0) eof = true;
            else if (errno == EINTR) continue;
            else if (errno != EAGAIN && errno != EWOULDBLOCK) eof = true;
            break;
        }
        if (!data.empty() && !c.closing) {
            if (c.type == ConnType::cla)
                on_cla_bytes(c, data);
            else
                on_line_bytes(c, data);
        }
        if (eof) kill(c, "link-closed");
    }

    void on_line_bytes(Conn& c, const std::string& data) {
        try {
            c.split.feed(data);
            while (auto line = c.split.next()) {
                if (c.dead || c.closing) return;
                handle_line(c, *line);
                settle();
            }
        } catch (const Error& e) {
            protocol_error(c, e.code(), e.what());
        }
    }

    void handle_line(Conn& c, const std::string& line) {
        log.record(wall_clock_ms(), channel_name(c.type), "in", json{{"conn", c.id}, {"line", line}});
        const auto envelope = c.decoder.decode(line);

        if (!c.hello_received) {
            if (envelope.kind != Kind::hello) throw Error("protocol-error", "first message must be hello");
            const auto hello = parse_hello(envelope.body);
            if (hello.protocol_version != kProtocolVersion)
                throw Error("version-mismatch", "unsupported protocol version " + std::to_string(hello.protocol_version));
            static const std::set<std::string> roles{"bdm", "monitor", "app"};
            if (!roles.contains(hello.role)) throw Error("protocol-error", "role not accepted: " + hello.role);
            c.hello_received = true;
            c.role = hello.role;
            if (c.type == ConnType::dispatch) c.subscriber = bus.add_subscriber(config.subscriber_queue_cap);
            return;
        }

        switch (envelope.kind) {
            case Kind::subscribe:
                if (c.type != ConnType::dispatch) throw Error("protocol-error", "subscribe on application channel");
                bus.subscribe(c.subscriber, parse_subscribe(envelope.body));
                return;
            case Kind::rpc_request: {
                const auto request = parse_request(envelope.body);
                if (!c.used_ids.insert(request.id.dump()).second) {
                    respond_error(c, request.id, "duplicate-id", "request id reused on this connection");
                    return;
                }
                try {
                    if (c.type == ConnType::dispatch)
                        handle_dispatch_rpc(c, request);
                    else
                        handle_app_rpc(c, request);
                } catch (const Error& e) {
                    respond_error(c, request.id, e.code(), e.what());
                } catch (const json::exception& e) {
                    respond_error(c, request.id, "bad-params", e.what());
                }
                return;
            }
            default:
                throw Error("protocol-error", "unexpected " + std::string(to_string(envelope.kind)) + " from client");
        }
    }

    // -- RPC ----------------------------------------------------------------------

    void handle_dispatch_rpc(Conn& c, const RpcRequest& request) {
        const auto now = wall_clock_ms();
        const auto& m = request.method;
        const auto& p = request.params;
        if (m == method::update_actions) {
            agent.update_actions(p.at("bundle-id").get<BundleId>(), p.at("actions").get<ActionList>(), now);
            respond(c, request.id, json::object());
        } else if (m == method::query_supported_actions) {
            respond(c, request.id, json{{"actions", agent.supported_actions()}});
        } else if (m == method::list_bundles) {
            respond(c, request.id, json{{"bundles", agent.list_bundles()}});
        } else if (m == method::get_bundle) {
            const auto meta = agent.get_bundle(p.at("bundle-id").get<BundleId>());
            if (!meta) throw Error("unknown-bundle", "no such bundle");
            respond(c, request.id, json{{"bundle", *meta}});
        } else if (m == method::set_default_actions) {
            agent.set_default_actions(p.at("actions").get<ActionList>());
            respond(c, request.id, json::object());
        } else {
            throw Error("unknown-method", "unknown method " + m);
        }
    }

    void handle_app_rpc(Conn& c, const RpcRequest& request) {
        const auto now = wall_clock_ms();
        const auto& m = request.method;
        const auto& p = request.params;
        if (m == "register") {
            const auto demux = p.at("demux").get<std::string>();
            const auto it = registrations.find(demux);
            if (it != registrations.end() && it->second != c.id) throw Error("demux-taken", "demux already registered: " + demux);
            if (it == registrations.end()) {
                registrations[demux] = c.id;
                c.demuxes.push_back(demux);
            }
            respond(c, request.id, json{{"endpoint", EndpointId{config.node_name, demux}}});
            agent.on_registration(demux, now);
        } else if (m == "send") {
            if (c.demuxes.empty()) throw Error("not-registered", "register a demux before sending");
            auto demux = p.value("source-demux", c.demuxes.front());
            if (std::find(c.demuxes.begin(), c.demuxes.end(), demux) == c.demuxes.end())
                throw Error("not-registered", "demux not registered on this connection: " + demux);

            Bundle bundle;
            try {
                bundle.destination = parse_endpoint(p.at("destination").get<std::string>());
            } catch (const Error& e) {
                throw Error("invalid-destination", e.what());
            }
            bundle.lifetime = p.at("lifetime").get<Duration>();
            if (bundle.lifetime == 0) throw Error("zero-lifetime", "lifetime must be positive");
            bundle.payload = base64::decode(p.value("payload", std::string{}));
            bundle.extension_blocks = p.value("extension-blocks", std::vector<ExtensionBlock>{});
            if (const auto it = p.find("report-to"); it != p.end()) bundle.report_to = it->get<EndpointId>();
            // Every event carries the metadata, so it has to fit on a dispatch line.
            if (json(metadata_of(bundle, now)).dump().size() + kEventHeadroom > kMaxLineBytes)
                throw Error("too-large", "bundle metadata would exceed the dispatch line cap");
            bundle.id = BundleId{EndpointId{config.node_name, demux}, now, agent.next_creation_sequence()};

            const auto id = bundle.id;
            const auto outcome = agent.ingest(std::move(bundle), IngestSource::application(), now);
            respond(c, request.id, json{{"bundle-id", id}, {"outcome", to_string(outcome)}});
        } else if (m == "link-dial") {
            start_dial(p.at("address").get<std::string>(), PendingDial{c.id, request.id});
        } else if (m == "link-close") {
            const auto peer = p.at("peer").get<std::string>();
            const auto it = links.find(peer);
            if (it == links.end()) throw Error("unknown-peer", "no active link to " + peer);
            if (auto* link = find_conn(it->second)) kill(*link, "link-closed");
            respond(c, request.id, json::object());
        } else {
            throw Error("unknown-method", "unknown method " + m);
        }
    }

    // -- convergence layer ----------------------------------------------------------

    void start_dial(const std::string& address_text, std::optional<PendingDial> pending) {
        net::Fd fd;
        try {
            fd = net::connect_async(net::parse_address(address_text));
        } catch (const Error& e) {
            respond_pending(pending, e.code() == "bad-address" ? "bad-address" : "connect-refused", nullptr);
            return;
        }
        auto& c = add_conn(ConnType::cla, std::move(fd));
        c.dialed = true;
        c.link_state = LinkState::connecting;
        c.address = address_text;
        c.deadline = wall_clock_ms() + cla::kHandshakeTimeoutMs;
        c.pending_dial = std::move(pending);
    }

    void on_connected(Conn& c) {
        if (net::socket_error(c.fd.get()) != 0) {
            kill(c, "connect-refused");
            return;
        }
        c.link_state = LinkState::handshaking;
        c.deadline = wall_clock_ms() + cla::kHandshakeTimeoutMs;
        send_line(c, Kind::hello, hello_body(Hello{kProtocolVersion, "cla", config.node_name}));
    }

    void on_cla_bytes(Conn& c, const std::string& data) {
        try {
            if (c.link_state == LinkState::handshaking) {
                c.handshake_buf += data;
                const auto nl = c.handshake_buf.find('\n');
                if (nl == std::string::npos) {
                    if (c.handshake_buf.size() > kMaxLineBytes) throw Error("protocol-error", "oversized handshake");
                    return;
                }
                const auto hello_env = decode_message(std::string_view(c.handshake_buf).substr(0, nl));
                auto rest = c.handshake_buf.substr(nl + 1);
                c.handshake_buf.clear();
                if (hello_env.kind != Kind::hello) throw Error("protocol-error", "expected hello");
                const auto hello = parse_hello(hello_env.body);
                if (hello.protocol_version != kProtocolVersion || hello.role != "cla")
                    throw Error("protocol-error", "incompatible convergence-layer hello");
                if (!valid_node_name(hello.node)) throw Error("protocol-error", "invalid peer name");
                if (hello.node == config.node_name) {
                    kill(c, "name-conflict");
                    return;
                }
                if (!activate(c, hello.node)) return;
                c.frames.feed(rest);
            } else if (c.link_state == LinkState::active) {
                c.frames.feed(data);
            }
            const auto now = wall_clock_ms();
            while (auto bundle = c.frames.next()) {
                bundle->previous_node = EndpointId::of_node(c.peer);
                log.record(now, "cla", "rx",
                           json{{"peer", c.peer}, {"id", bundle->id}, {"payload-length", bundle->payload.size()}});
                try {
                    agent.ingest(std::move(*bundle), IngestSource::link(c.peer), now);
                } catch (const Error& e) {
                    throw Error("malformed-frame", e.what());
                }
                settle();
            }
        } catch (const Error& e) {
            kill(c, e.code());
        }
    }

    /// Returns false when this link lost a dial collision and was closed.
    bool activate(Conn& c, const std::string& peer) {
        c.peer = peer;
        const auto& self = config.node_name;
        if (const auto it = links.find(peer); it != links.end()) {
            if (auto* existing = find_conn(it->second)) {
                const auto& dialer_new = c.dialed ? self : peer;
                const auto& dialer_old = existing->dialed ? self : peer;
                if (dialer_new < dialer_old) {
                    kill(*existing, "superseded");
                } else {
                    respond_pending(c.pending_dial, {}, json{{"peer", peer}, {"address", existing->address}});
                    kill(c, "superseded");
                    return false;
                }
            }
        }
        const auto now = wall_clock_ms();
        c.link_state = LinkState::active;
        links[peer] = c.id;
        log.record(now, "link", "up", json{{"peer", peer}, {"address", c.address}});
        agent.link_event(Topic::link_up, peer, c.address, now);
        respond_pending(c.pending_dial, {}, json{{"peer", peer}, {"address", c.address}});
        return true;
    }

    // -- loop -----------------------------------------------------------------------

    void run() {
        for (const auto& peer : config.dial) start_dial(peer, std::nullopt);
        next_scan = wall_clock_ms() + config.expiry_scan_period;

        std::vector<pollfd> pfds;
        std::vector<int> ids;
        while (!stopping.load()) {
            pfds.clear();
            ids.clear();
            for (const int fd : {wake_r.get(), dispatch_fd.get(), app_fd.get(), cla_fd.get()})
                pfds.push_back(pollfd{fd, POLLIN, 0});
            for (auto& [id, conn] : conns) {
                short events = conn->closing ? 0 : POLLIN;
                if (!conn->out.empty() || (conn->type == ConnType::cla && conn->link_state == LinkState::connecting))
                    events |= POLLOUT;
                if (conn->type == ConnType::cla && conn->link_state == LinkState::connecting) events = POLLOUT;
                pfds.push_back(pollfd{conn->fd.get(), events, 0});
                ids.push_back(id);
            }

            const auto now = wall_clock_ms();
            const int timeout = next_scan > now ? static_cast<int>(std::min<Instant>(next_scan - now, 50)) : 0;
            if (::poll(pfds.data(), pfds.size(), timeout) < 0 && errno != EINTR) break;
            if (stopping.load()) break;

            if (pfds[0].revents) {
                char drain[64];
                while (::read(wake_r.get(), drain, sizeof(drain)) > 0) {}
            }
            if (pfds[1].revents & POLLIN) accept_all(dispatch_fd.get(), ConnType::dispatch);
            if (pfds[2].revents & POLLIN) accept_all(app_fd.get(), ConnType::app);
            if (pfds[3].revents & POLLIN) accept_all(cla_fd.get(), ConnType::cla);

            for (std::size_t i = 0; i < ids.size(); ++i) {
                const auto revents = pfds[i + 4].revents;
                if (!revents) continue;
                Conn* c = find_conn(ids[i]);
                if (!c) continue;
                if (c->type == ConnType::cla && c->link_state == LinkState::connecting) {
                    if (revents & (POLLOUT | POLLERR | POLLHUP)) on_connected(*c);
                    continue;
                }
                if (revents & POLLOUT) flush(*c);
                if (!c->dead && (revents & (POLLIN | POLLHUP | POLLERR))) {
                    if (c->closing)
                        kill(*c);
                    else
                        read_conn(*c);
                }
                settle();
            }

            housekeeping();
        }
    }

    void housekeeping() {
        const auto now = wall_clock_ms();
        if (now >= next_scan) {
            agent.expiry_scan(now);
            next_scan = now + config.expiry_scan_period;
        }
        for (auto& [id, conn] : conns) {
            auto& c = *conn;
            if (c.dead) continue;
            if (c.type == ConnType::cla && c.link_state != LinkState::active && now >= c.deadline)
                kill(c, c.link_state == LinkState::connecting ? "connect-refused" : "handshake-timeout");
            else if (c.closing && (c.out.empty() || now >= c.close_deadline))
                kill(c);
        }
        settle();
        std::erase_if(conns, [](const auto& entry) { return entry.second->dead; });
    }

    NodeConfig config;
    EventBus bus;
    Agent agent;
    WireLog log;

    net::Fd dispatch_fd, app_fd, cla_fd;
    net::Address dispatch_bound, app_bound, cla_bound;
    net::Fd wake_r, wake_w;
    std::atomic<bool> stopping{false};

    std::map<int, std::unique_ptr<Conn>> conns;
    int next_conn = 1;
    /// peer node name -> active link connection
    std::map<std::string, int> links;
    /// demux -> application connection
    std::map<std::string, int> registrations;
    Instant next_scan = 0;
};

Node::Node(NodeConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
Node::~Node() = default;

void Node::run() { impl_->run(); }

void Node::stop() {
    impl_->stopping.store(true);
    const char b = 1;
    [[maybe_unused]] const auto n = ::write(impl_->wake_w.get(), &b, 1);
}

const std::string& Node::name() const { return impl_->config.node_name; }
std::string Node::dispatch_address() const { return impl_->dispatch_bound.str(); }
std::string Node::app_address() const { return impl_->app_bound.str(); }
std::string Node::cla_address() const { return impl_->cla_bound.str(); }

std::string Node::ready_line() const {
    return "ready node=" + name() + " dispatch=" + dispatch_address() + " app=" + app_address() +
           " cla=" + cla_address();
}

}  // namespace bpdx
