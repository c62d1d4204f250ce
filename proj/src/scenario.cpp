#include "bpdx/scenario.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>
#include <sstream>
#include <thread>

#include "bpdx/base64.hpp"
#include "bpdx/client.hpp"
#include "bpdx/node.hpp"
#include "bpdx/protocol.hpp"

extern char** environ;

namespace bpdx {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& what) { throw Error("bad-scenario", what); }

Duration time_field(const json& j, const char* key, Duration fallback) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) bad(std::string(key) + " must be a non-negative integer");
    return it->get<Duration>();
}

std::string str_field(const json& j, const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_string()) bad(std::string("missing string field '") + key + "'");
    return it->get<std::string>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Parsing

Scenario parse_scenario(const json& doc) {
    if (!doc.is_object()) bad("scenario must be an object");
    Scenario s;
    s.name = doc.value("name", std::string("scenario"));
    s.duration = time_field(doc, "duration-ms", s.duration);
    s.seed = doc.value<std::uint64_t>("seed", 1);

    std::set<std::string> names;
    for (const auto& n : doc.value("nodes", json::array())) {
        ScenarioNode node;
        node.name = str_field(n, "name");
        if (!valid_node_name(node.name)) bad("invalid node name " + node.name);
        if (!names.insert(node.name).second) bad("duplicate node " + node.name);
        node.bdm = n.value("bdm", json());
        if (!node.bdm.is_null() && (!node.bdm.is_object() || !node.bdm.contains("kind")))
            bad("bdm of " + node.name + " needs a kind");
        try {
            node.default_actions = n.value("default-actions", ActionList{});
        } catch (const json::exception& e) {
            bad(e.what());
        }
        node.scan_period = time_field(n, "scan-period-ms", node.scan_period);
        s.nodes.push_back(std::move(node));
    }
    if (s.nodes.empty()) bad("scenario defines no nodes");
    const auto known = [&](const std::string& name) {
        if (!names.contains(name)) bad("undefined node " + name);
        return name;
    };

    std::vector<Directive> directives;
    for (const auto& t : doc.value("traffic", json::array())) {
        Directive reg;
        reg.op = Directive::Op::register_app;
        reg.node = known(str_field(t, "node"));
        reg.demux = t.value("demux", std::string("src"));
        directives.push_back(reg);
    }
    for (const auto& a : doc.value("apps", json::array())) {
        Directive d;
        d.op = Directive::Op::register_app;
        d.at = time_field(a, "at", 0);
        d.node = known(str_field(a, "node"));
        d.demux = str_field(a, "demux");
        directives.push_back(d);
    }
    for (const auto& l : doc.value("links", json::array())) {
        Directive d;
        const auto op = str_field(l, "op");
        if (op == "dial") d.op = Directive::Op::dial;
        else if (op == "close") d.op = Directive::Op::close;
        else bad("unknown link op " + op);
        d.at = time_field(l, "at", 0);
        d.node = known(str_field(l, "from"));
        d.peer = known(str_field(l, "to"));
        directives.push_back(d);
    }
    for (const auto& t : doc.value("traffic", json::array())) {
        const auto count = t.value<std::size_t>("count", 1);
        const auto interval = time_field(t, "interval-ms", 0);
        Directive d;
        d.op = Directive::Op::send;
        d.at = time_field(t, "at", 0);
        d.node = known(str_field(t, "node"));
        d.demux = t.value("demux", std::string("src"));
        d.destination = str_field(t, "to");
        try {
            parse_endpoint(d.destination);
            d.extension_blocks = t.value("extension-blocks", std::vector<ExtensionBlock>{});
        } catch (const std::exception& e) {
            bad(e.what());
        }
        d.size = t.value<std::size_t>("size", 64);
        d.lifetime = time_field(t, "lifetime-ms", 60000);
        for (std::size_t i = 0; i < count; ++i) {
            directives.push_back(d);
            d.at += interval;
        }
    }
    for (const auto& p : doc.value("probes", json::array())) {
        Directive d;
        d.op = Directive::Op::probe;
        d.node = known(str_field(p, "node"));
        d.at = time_field(p, "at", 0);
        const auto every = time_field(p, "every-ms", 0);
        const auto until = time_field(p, "until-ms", d.at);
        do {
            directives.push_back(d);
            d.at += every;
        } while (every > 0 && d.at <= until);
    }
    std::stable_sort(directives.begin(), directives.end(),
                     [](const Directive& a, const Directive& b) { return a.at < b.at; });
    s.directives = std::move(directives);

    for (const auto& a : doc.value("assertions", json::array())) {
        if (!a.is_object() || !a.contains("type")) bad("assertion needs a type");
        if (a.contains("node")) known(a.at("node").get<std::string>());
        s.assertions.push_back(a);
    }
    return s;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) bad("cannot read " + path);
    try {
        return parse_scenario(json::parse(in));
    } catch (const json::exception& e) {
        bad(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Log analysis

NodeLog load_wire_log(const std::string& path) {
    NodeLog log;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            log.records.push_back(json::parse(line));
        } catch (const json::exception&) {
            // A process killed mid-write can leave a torn last line.
        }
    }
    return log;
}

namespace {

struct TimedEvent {
    Instant t = 0;
    Topic topic{};
    json doc;
    std::string bundle_key;  // empty for link events
};

std::vector<TimedEvent> bus_events(const NodeLog& log) {
    std::vector<TimedEvent> out;
    for (const auto& r : log.records) {
        if (r.value("ch", "") != "bus") continue;
        const auto& ev = r.at("event");
        TimedEvent te{r.at("t").get<Instant>(), parse_topic(ev.at("topic").get<std::string>()), ev, {}};
        if (ev.contains("bundle")) te.bundle_key = ev["bundle"]["id"].dump();
        out.push_back(std::move(te));
    }
    return out;
}

/// Decoded protocol lines of a channel ("dispatch" or "app"), with direction.
struct Line {
    Instant t = 0;
    std::string dir;
    int conn = 0;
    std::string raw;
    Envelope envelope;
};

std::vector<Line> channel_lines(const NodeLog& log, std::string_view channel) {
    std::vector<Line> out;
    for (const auto& r : log.records) {
        if (r.value("ch", "") != channel) continue;
        Line l;
        l.t = r.at("t").get<Instant>();
        l.dir = r.at("dir").get<std::string>();
        l.conn = r.value("conn", 0);
        l.raw = r.at("line").get<std::string>();
        try {
            l.envelope = decode_message(l.raw, kAppMaxLineBytes);
        } catch (const Error&) {
            continue;
        }
        out.push_back(std::move(l));
    }
    return out;
}

struct Transfer {
    Instant t = 0;
    std::string peer;
    std::string key;
};

std::vector<Transfer> cla_records(const NodeLog& log, std::string_view dir) {
    std::vector<Transfer> out;
    for (const auto& r : log.records)
        if (r.value("ch", "") == "cla" && r.value("dir", "") == dir)
            out.push_back({r.at("t").get<Instant>(), r.at("peer").get<std::string>(), r.at("id").dump()});
    return out;
}

struct Delivery {
    Instant t = 0;
    Bundle bundle;
};

std::vector<Delivery> deliveries(const NodeLog& log) {
    std::vector<Delivery> out;
    for (const auto& l : channel_lines(log, "app"))
        if (l.dir == "out" && l.envelope.kind == Kind::event && l.envelope.body.contains("delivery"))
            out.push_back({l.t, bundle_from_json(l.envelope.body.at("delivery"))});
    return out;
}

/// Application sends on a node: bundle id key -> payload bytes.
std::map<std::string, Bytes> sent_payloads(const NodeLog& log) {
    std::map<std::pair<int, std::string>, Bytes> requests;
    std::map<std::string, Bytes> out;
    for (const auto& l : channel_lines(log, "app")) {
        if (l.dir == "in" && l.envelope.kind == Kind::rpc_request && l.envelope.body.value("method", "") == "send") {
            const auto& params = l.envelope.body.at("params");
            requests[{l.conn, l.envelope.body.at("id").dump()}] = base64::decode(params.value("payload", ""));
        } else if (l.dir == "out" && l.envelope.kind == Kind::rpc_response) {
            const auto it = requests.find({l.conn, l.envelope.body.at("id").dump()});
            if (it == requests.end() || !l.envelope.body.contains("result")) continue;
            out[l.envelope.body["result"].at("bundle-id").dump()] = it->second;
        }
    }
    return out;
}

const NodeLog& node_log(const std::map<std::string, NodeLog>& logs, const std::string& node) {
    const auto it = logs.find(node);
    if (it == logs.end()) bad("no log for node " + node);
    return it->second;
}

std::vector<const NodeLog*> selected_logs(const json& a, const std::map<std::string, NodeLog>& logs) {
    std::vector<const NodeLog*> out;
    if (a.contains("node")) {
        out.push_back(&node_log(logs, a.at("node").get<std::string>()));
    } else {
        for (const auto& [name, log] : logs) out.push_back(&log);
    }
    return out;
}

bool count_matches(const json& a, std::size_t n, std::string& expectation) {
    if (a.contains("count")) {
        expectation = "== " + std::to_string(a["count"].get<std::size_t>());
        return n == a["count"].get<std::size_t>();
    }
    bool ok = true;
    expectation.clear();
    if (a.contains("min")) {
        expectation += ">= " + std::to_string(a["min"].get<std::size_t>()) + " ";
        ok = ok && n >= a["min"].get<std::size_t>();
    }
    if (a.contains("max")) {
        expectation += "<= " + std::to_string(a["max"].get<std::size_t>());
        ok = ok && n <= a["max"].get<std::size_t>();
    }
    return ok;
}

AssertionResult evaluate_unchecked(const json& a, const std::map<std::string, NodeLog>& logs, Instant epoch) {
    const auto type = a.at("type").get<std::string>();
    AssertionResult result;
    result.expect_fail = a.value("expect-fail", false);
    result.description = a.value("description", type + (a.contains("node") ? " @" + a["node"].get<std::string>() : ""));
    std::ostringstream detail;
    std::string expectation;

    if (type == "delivered") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        const auto demux = a.value("demux", std::string{});
        const auto within = a.value<Duration>("within-ms", 0);
        std::size_t n = 0;
        Duration worst = 0;
        for (const auto& d : deliveries(log)) {
            if (!demux.empty() && d.bundle.destination.demux != demux) continue;
            ++n;
            const auto latency = d.t > d.bundle.id.creation_time ? d.t - d.bundle.id.creation_time : 0;
            worst = std::max(worst, latency);
        }
        const bool count_ok = count_matches(a, n, expectation);
        result.passed = count_ok && (within == 0 || worst <= within) && (n > 0 || a.contains("count"));
        detail << n << " delivered (expected " << expectation << "), worst latency " << worst << " ms";
        if (within) detail << " (limit " << within << " ms)";
    } else if (type == "event-sequence") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        std::vector<Topic> pattern;
        for (const auto& t : a.at("pattern")) pattern.push_back(parse_topic(t.get<std::string>()));
        std::map<std::string, std::vector<Topic>> per_bundle;
        for (const auto& e : bus_events(log))
            if (!e.bundle_key.empty()) per_bundle[e.bundle_key].push_back(e.topic);
        for (const auto& [key, topics] : per_bundle) {
            std::size_t matched = 0;
            for (const auto t : topics)
                if (matched < pattern.size() && t == pattern[matched]) ++matched;
            if (matched == pattern.size()) result.passed = true;
        }
        detail << per_bundle.size() << " bundle(s) examined; pattern "
               << (result.passed ? "found" : "not found");
    } else if (type == "transmit-count") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        const auto peer = a.value("peer", std::string{});
        std::size_t n = 0;
        for (const auto& tx : cla_records(log, "tx"))
            if (peer.empty() || tx.peer == peer) ++n;
        result.passed = count_matches(a, n, expectation);
        detail << n << " transmission(s), expected " << expectation;
    } else if (type == "max-transmits-per-bundle") {
        const auto limit = a.value<std::size_t>("max", 1);
        std::size_t worst = 0;
        for (const auto* log : selected_logs(a, logs)) {
            std::map<std::string, std::size_t> counts;
            for (const auto& tx : cla_records(*log, "tx")) worst = std::max(worst, ++counts[tx.key]);
        }
        result.passed = worst <= limit;
        detail << "max " << worst << " transmission(s) of one bundle from one node (limit " << limit << ")";
    } else if (type == "rpc-count") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        std::size_t n = 0;
        for (const auto& l : channel_lines(log, "dispatch"))
            if (l.dir == "in" && l.envelope.kind == Kind::rpc_request) ++n;
        result.passed = count_matches(a, n, expectation);
        detail << n << " dispatch RPC request(s), expected " << expectation;
    } else if (type == "event-count") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        const auto topic = parse_topic(a.at("topic").get<std::string>());
        std::size_t n = 0;
        for (const auto& e : bus_events(log))
            if (e.topic == topic) ++n;
        result.passed = count_matches(a, n, expectation);
        detail << n << " " << to_string(topic) << " event(s), expected " << expectation;
    } else if (type == "event-latency") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        const auto from = parse_topic(a.at("from").get<std::string>());
        const auto to = parse_topic(a.at("to").get<std::string>());
        const auto lo = a.value<Duration>("min-ms", 0);
        const auto hi = a.value<Duration>("max-ms", ~Duration{0});
        std::map<std::string, Instant> start, end;
        for (const auto& e : bus_events(log)) {
            if (e.bundle_key.empty()) continue;
            if (e.topic == from) start.try_emplace(e.bundle_key, e.t);
            if (e.topic == to) end.try_emplace(e.bundle_key, e.t);
        }
        std::size_t measured = 0;
        bool all_ok = true;
        for (const auto& [key, t_end] : end) {
            const auto it = start.find(key);
            if (it == start.end()) continue;
            const auto latency = t_end - it->second;
            ++measured;
            detail << "latency " << latency << " ms; ";
            all_ok = all_ok && latency >= lo && latency <= hi;
        }
        result.passed = measured > 0 && all_ok;
        detail << "window [" << lo << ", " << hi << "] ms";
    } else if (type == "event-window") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        const auto topic = parse_topic(a.at("topic").get<std::string>());
        const auto after = epoch + a.value<Duration>("after-ms", 0);
        const auto before = epoch + a.value<Duration>("before-ms", ~Duration{0} - epoch);
        std::size_t n = 0;
        bool all_ok = true;
        for (const auto& e : bus_events(log)) {
            if (e.topic != topic) continue;
            ++n;
            detail << (n > 1 ? ", " : "") << "+" << static_cast<std::int64_t>(e.t - epoch) << " ms";
            all_ok = all_ok && e.t >= after && e.t <= before;
        }
        if (n == 0) detail << "no " << to_string(topic) << " events";
        detail << " (window [" << (after - epoch) << ", " << (before - epoch) << "] ms)";
        result.passed = n > 0 && all_ok;
    } else if (type == "retained") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        const auto min_bundles = a.value<std::size_t>("min-bundles", 1);
        std::set<int> monitors;
        std::map<std::pair<int, std::string>, bool> list_requests;
        std::size_t probes = 0, short_probes = 0;
        for (const auto& l : channel_lines(log, "dispatch")) {
            const auto& body = l.envelope.body;
            if (l.dir == "in" && l.envelope.kind == Kind::hello && body.value("role", "") == "monitor")
                monitors.insert(l.conn);
            if (!monitors.contains(l.conn)) continue;
            if (l.dir == "in" && l.envelope.kind == Kind::rpc_request && body.value("method", "") == method::list_bundles)
                list_requests[{l.conn, body.at("id").dump()}] = true;
            if (l.dir == "out" && l.envelope.kind == Kind::rpc_response &&
                list_requests.contains({l.conn, body.at("id").dump()}) && body.contains("result")) {
                ++probes;
                if (body["result"].at("bundles").size() < min_bundles) ++short_probes;
            }
        }
        result.passed = probes > 0 && short_probes == 0;
        detail << probes << " probe(s), " << short_probes << " with fewer than " << min_bundles << " bundle(s)";
    } else if (type == "no-payload-leak") {
        std::map<std::string, Bytes> sent;
        for (const auto& [name, log] : logs)
            for (auto& [key, payload] : sent_payloads(log)) sent[key] = payload;
        std::vector<std::string> needles;
        for (const auto& [key, payload] : sent)
            if (payload.size() >= 9) needles.push_back(base64::encode(payload));

        std::size_t messages = 0, leaks = 0, length_mismatch = 0;
        const auto scan = [&](const std::string& text) {
            ++messages;
            bool leak = text.find("\"payload\"") != std::string::npos;
            for (const auto& needle : needles) leak = leak || text.find(needle) != std::string::npos;
            if (leak) ++leaks;
        };
        const auto check_meta = [&](const json& meta) {
            const auto it = sent.find(meta.at("id").dump());
            if (it != sent.end() && meta.at("payload-length").get<std::size_t>() != it->second.size())
                ++length_mismatch;
        };
        for (const auto& [name, log] : logs) {
            for (const auto& l : channel_lines(log, "dispatch")) {
                scan(l.raw);
                const auto& body = l.envelope.body;
                if (l.envelope.kind == Kind::event && body.contains("bundle")) check_meta(body["bundle"]);
                if (l.envelope.kind == Kind::rpc_response && body.contains("result") && body["result"].is_object()) {
                    for (const auto& meta : body["result"].value("bundles", json::array())) check_meta(meta);
                    if (body["result"].contains("bundle")) check_meta(body["result"]["bundle"]);
                }
            }
            for (const auto& e : bus_events(log)) {
                scan(e.doc.dump());
                if (e.doc.contains("bundle")) check_meta(e.doc["bundle"]);
            }
        }
        result.passed = leaks == 0 && length_mismatch == 0;
        detail << messages << " event/RPC message(s) scanned, " << leaks << " containing payload bytes, "
               << length_mismatch << " payload-length mismatch(es)";
    } else if (type == "payload-integrity") {
        std::map<std::string, Bytes> sent;
        for (const auto& [name, log] : logs)
            for (auto& [key, payload] : sent_payloads(log)) sent[key] = payload;
        std::size_t checked = 0, corrupt = 0;
        for (const auto* log : selected_logs(a, logs)) {
            for (const auto& d : deliveries(*log)) {
                const auto it = sent.find(json(d.bundle.id).dump());
                if (it == sent.end()) continue;
                ++checked;
                if (it->second != d.bundle.payload) ++corrupt;
            }
        }
        result.passed = checked > 0 && corrupt == 0;
        detail << checked << " delivery(ies) compared, " << corrupt << " corrupt";
    } else if (type == "no-return-to-sender") {
        std::size_t violations = 0, transmissions = 0;
        for (const auto& [name, log] : logs) {
            std::set<std::pair<std::string, std::string>> received;
            for (const auto& rx : cla_records(log, "rx")) received.insert({rx.key, rx.peer});
            for (const auto& tx : cla_records(log, "tx")) {
                ++transmissions;
                if (received.contains({tx.key, tx.peer})) ++violations;
            }
        }
        result.passed = violations == 0;
        detail << transmissions << " transmission(s), " << violations << " back to the sending node";
    } else if (type == "transmit-order") {
        const auto& log = node_log(logs, a.at("node").get<std::string>());
        std::vector<std::string> order;
        for (const auto& tx : cla_records(log, "tx")) order.push_back(tx.key);
        std::vector<std::string> expected;
        for (const auto& id : a.at("ids")) expected.push_back(id.dump());
        result.passed = order == expected;
        detail << order.size() << " transmission(s) in " << (result.passed ? "expected" : "unexpected") << " order";
    } else {
        bad("unknown assertion type " + type);
    }

    if (result.detail.empty()) result.detail = detail.str();
    return result;
}

}  // namespace

AssertionResult evaluate_assertion(const json& assertion, const std::map<std::string, NodeLog>& logs, Instant epoch) {
    try {
        return evaluate_unchecked(assertion, logs, epoch);
    } catch (const std::exception& e) {
        AssertionResult result;
        result.description = assertion.value("type", std::string("assertion"));
        result.expect_fail = assertion.value("expect-fail", false);
        result.detail = std::string("evaluation error: ") + e.what();
        return result;
    }
}

bool ScenarioReport::ok() const {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.ok(); });
}

std::string format_report(const ScenarioReport& report) {
    std::ostringstream out;
    out << "scenario " << report.name << " (logs in " << report.out_dir << ")\n";
    for (const auto& note : report.notes) out << "  note: " << note << "\n";
    for (const auto& r : report.results) {
        out << "  [" << (r.ok() ? "PASS" : "FAIL") << "] " << r.description;
        if (r.expect_fail) out << (r.passed ? " (passed, but failure was expected)" : " (failed as expected)");
        out << ": " << r.detail << "\n";
    }
    out << (report.ok() ? "OK" : "FAILED") << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// Process supervision

namespace {

class Process {
public:
    Process(const std::vector<std::string>& argv, const std::string& stderr_path) {
        int pipe_fds[2];
        if (::pipe2(pipe_fds, O_CLOEXEC) != 0) throw Error("spawn-failure", "pipe failed");
        out_.reset(pipe_fds[0]);
        net::Fd write_end{pipe_fds[1]};

        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        posix_spawn_file_actions_adddup2(&actions, write_end.get(), STDOUT_FILENO);
        posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, stderr_path.c_str(),
                                         O_WRONLY | O_CREAT | O_TRUNC, 0644);
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        const int rc = ::posix_spawn(&pid_, argv[0].c_str(), &actions, nullptr, args.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        if (rc != 0) throw Error("spawn-failure", "cannot spawn " + argv[0]);
        name_ = argv.size() > 2 ? argv[1] + " " + argv[2] : argv[0];
    }

    ~Process() { terminate(); }

    std::string read_line(int timeout_ms) {
        const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                auto line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                return line;
            }
            const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                                  deadline - std::chrono::steady_clock::now())
                                  .count();
            if (left <= 0) throw Error("timeout", name_ + " did not become ready");
            pollfd pfd{out_.get(), POLLIN, 0};
            if (::poll(&pfd, 1, static_cast<int>(left)) <= 0) continue;
            char buf[4096];
            const auto n = ::read(out_.get(), buf, sizeof(buf));
            if (n <= 0) throw Error("spawn-failure", name_ + " exited before becoming ready");
            buffer_.append(buf, static_cast<std::size_t>(n));
        }
    }

    void terminate() {
        if (pid_ <= 0) return;
        ::kill(pid_, SIGTERM);
        for (int i = 0; i < 200; ++i) {
            if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
                pid_ = -1;
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
        pid_ = -1;
    }

private:
    pid_t pid_ = -1;
    net::Fd out_;
    std::string buffer_;
    std::string name_;
};

struct NodeEndpoints {
    std::string dispatch;
    std::string app;
    std::string cla;
};

NodeEndpoints parse_ready(const std::string& line) {
    NodeEndpoints ep;
    std::istringstream in(line);
    std::string token;
    in >> token;
    if (token != "ready") throw Error("spawn-failure", "unexpected startup line: " + line);
    while (in >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) continue;
        const auto key = token.substr(0, eq);
        const auto value = token.substr(eq + 1);
        if (key == "dispatch") ep.dispatch = value;
        if (key == "app") ep.app = value;
        if (key == "cla") ep.cla = value;
    }
    return ep;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size()))
        text.replace(pos, from.size(), to);
    return text;
}

void sleep_until_ms(Instant at) {
    const auto now = wall_clock_ms();
    if (at > now) std::this_thread::sleep_for(std::chrono::milliseconds(at - now));
}

}  // namespace

ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options) {
    ScenarioReport report;
    report.name = scenario.name;
    if (options.cli_path.empty()) throw Error("spawn-failure", "no bpdx executable configured");

    if (options.out_dir.empty()) {
        std::string templ = (fs::temp_directory_path() / ("bpdx-" + scenario.name + "-XXXXXX")).string();
        if (!::mkdtemp(templ.data())) throw Error("spawn-failure", "cannot create output directory");
        report.out_dir = templ;
    } else {
        report.out_dir = options.out_dir;
        fs::create_directories(report.out_dir);
    }
    const fs::path dir = report.out_dir;

    std::map<std::string, NodeEndpoints> endpoints;
    std::vector<std::unique_ptr<Process>> nodes, bdms;
    for (const auto& node : scenario.nodes) {
        std::vector<std::string> argv{options.cli_path, "node", "run", "--name", node.name,
                                      "--dispatch", "127.0.0.1:0", "--app", "127.0.0.1:0", "--cla", "127.0.0.1:0",
                                      "--wire-log", (dir / (node.name + ".wire.jsonl")).string(),
                                      "--scan-period-ms", std::to_string(node.scan_period),
                                      "--default-actions", json(node.default_actions).dump()};
        nodes.push_back(std::make_unique<Process>(argv, (dir / (node.name + ".node.log")).string()));
        endpoints[node.name] = parse_ready(nodes.back()->read_line(5000));
    }

    report.epoch = wall_clock_ms() + options.startup_margin;
    for (const auto& node : scenario.nodes) {
        if (node.bdm.is_null()) continue;
        const auto kind = node.bdm.at("kind").get<std::string>();
        const auto& dispatch = endpoints[node.name].dispatch;
        const auto routes_path = (dir / (node.name + ".routes")).string();
        const auto plan_path = (dir / (node.name + ".plan")).string();
        if (node.bdm.contains("routes")) {
            std::ofstream out(routes_path);
            for (const auto& [dest, hop] : node.bdm["routes"].items()) out << dest << " " << hop.get<std::string>() << "\n";
        }
        std::vector<std::string> argv;
        if (kind == "static") {
            argv = {options.cli_path, "bdm", "static", "--node", dispatch, "--routes", routes_path};
        } else if (kind == "opportunistic") {
            argv = {options.cli_path, "bdm", "opportunistic", "--node", dispatch};
            argv.push_back(node.bdm.value("single-copy", true) ? "--single-copy" : "--flood");
        } else if (kind == "contact") {
            std::ofstream out(plan_path);
            for (const auto& c : node.bdm.at("plan")) {
                out << c.at(0).get<std::string>() << " " << c.at(1).get<std::string>() << " " << c.at(2) << " "
                    << c.at(3);
                if (c.size() > 4) out << " " << c.at(4);
                out << "\n";
            }
            out.close();
            argv = {options.cli_path, "bdm", "contact", "--node", dispatch, "--plan", plan_path,
                    "--epoch-ms", std::to_string(report.epoch)};
        } else if (kind == "external") {
            for (const auto& part : node.bdm.at("command")) {
                auto arg = replace_all(part.get<std::string>(), "{dispatch}", dispatch);
                argv.push_back(replace_all(arg, "{routes}", routes_path));
            }
            if (argv.empty()) bad("external bdm needs a command");
        } else {
            bad("unknown bdm kind " + kind);
        }
        bdms.push_back(std::make_unique<Process>(argv, (dir / (node.name + ".bdm.log")).string()));
        const auto line = bdms.back()->read_line(5000);
        if (line.rfind("ready", 0) != 0) throw Error("spawn-failure", "bdm on " + node.name + " said: " + line);
    }

    {
        std::map<std::string, std::unique_ptr<Session>> apps, monitors;
        const auto app = [&](const std::string& node) -> Session& {
            auto& slot = apps[node];
            if (!slot) slot = std::make_unique<Session>(endpoints[node].app, "app", "scenario", kAppMaxLineBytes);
            return *slot;
        };
        const auto monitor = [&](const std::string& node) -> Session& {
            auto& slot = monitors[node];
            if (!slot) slot = std::make_unique<Session>(endpoints[node].dispatch, "monitor", "scenario");
            return *slot;
        };
        std::mt19937_64 rng(scenario.seed);

        for (const auto& d : scenario.directives) {
            sleep_until_ms(report.epoch + d.at);
            try {
                switch (d.op) {
                    case Directive::Op::register_app:
                        app(d.node).call_ok("register", json{{"demux", d.demux}});
                        break;
                    case Directive::Op::dial:
                        app(d.node).call_ok("link-dial", json{{"address", endpoints[d.peer].cla}});
                        break;
                    case Directive::Op::close:
                        app(d.node).call_ok("link-close", json{{"peer", d.peer}});
                        break;
                    case Directive::Op::send: {
                        Bytes payload(d.size);
                        for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
                        app(d.node).call_ok("send", json{{"destination", d.destination},
                                                         {"source-demux", d.demux},
                                                         {"payload", base64::encode(payload)},
                                                         {"lifetime", d.lifetime},
                                                         {"extension-blocks", d.extension_blocks}});
                        break;
                    }
                    case Directive::Op::probe:
                        monitor(d.node).call_ok(std::string(method::list_bundles));
                        break;
                }
            } catch (const Error& e) {
                report.notes.push_back("directive at +" + std::to_string(d.at) + " ms on " + d.node + " failed: " +
                                       e.code() + " (" + e.what() + ")");
            }
        }
        sleep_until_ms(report.epoch + scenario.duration);
    }

    for (auto& p : bdms) p->terminate();
    for (auto& p : nodes) p->terminate();

    for (const auto& node : scenario.nodes)
        report.logs[node.name] = load_wire_log((dir / (node.name + ".wire.jsonl")).string());
    for (const auto& a : scenario.assertions) report.results.push_back(evaluate_assertion(a, report.logs, report.epoch));

    std::ofstream summary(dir / "report.txt");
    summary << format_report(report);
    return report;
}

}  // namespace bpdx
