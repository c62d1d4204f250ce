#include "bpdx/bdm.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bpdx/client.hpp"

namespace bpdx {

using nlohmann::json;

namespace {

bool forward_pending(const BundleMetadata& meta) {
    return std::find(meta.retention.begin(), meta.retention.end(), "forward-pending") != meta.retention.end();
}

}  // namespace

RpcCall update_actions_call(const BundleId& id, const ActionList& actions) {
    return {std::string(method::update_actions), json{{"bundle-id", id}, {"actions", actions}}};
}

RpcCall list_bundles_call() { return {std::string(method::list_bundles), json::object()}; }

void Dispatcher::track_link(const Event& event) {
    if (event.topic == Topic::link_up) active_.insert(event.peer);
    if (event.topic == Topic::link_down) active_.erase(event.peer);
}

// ---------------------------------------------------------------------------

StaticRouteTable parse_route_table(std::istream& in) {
    StaticRouteTable table;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        std::string dest, hop, extra;
        if (!(fields >> dest >> hop) || (fields >> extra))
            throw Error("bad-routes", "line " + std::to_string(line_no) + ": expected 'destination next-hop'");
        if ((dest != "*" && !valid_node_name(dest)) || !valid_node_name(hop))
            throw Error("bad-routes", "line " + std::to_string(line_no) + ": invalid node name");
        table[dest] = hop;
    }
    return table;
}

StaticRouteTable load_route_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("bad-routes", "cannot read " + path);
    return parse_route_table(in);
}

std::set<Topic> StaticDispatcher::topics() const {
    return {Topic::forwarding_required, Topic::link_up, Topic::link_down};
}

std::optional<std::string> StaticDispatcher::route(const std::string& dest) const {
    if (const auto it = table_.find(dest); it != table_.end()) return it->second;
    if (const auto it = table_.find("*"); it != table_.end()) return it->second;
    return std::nullopt;
}

std::optional<RpcCall> StaticDispatcher::decide(const BundleMetadata& meta) {
    if (is_local(meta) || decided_.contains(meta.id)) return std::nullopt;
    const auto hop = route(meta.destination.node);
    if (!hop || !active_.contains(*hop)) return std::nullopt;
    decided_.insert(meta.id);
    return update_actions_call(meta.id, {Action::send_to(*hop), Action::drop()});
}

std::vector<RpcCall> StaticDispatcher::on_event(const Event& event, Instant) {
    track_link(event);
    std::vector<RpcCall> calls;
    if (event.topic == Topic::forwarding_required && event.bundle) {
        decided_.erase(event.bundle->id);
        if (auto call = decide(*event.bundle)) calls.push_back(std::move(*call));
    } else if (event.topic == Topic::link_up) {
        calls.push_back(list_bundles_call());
    }
    return calls;
}

std::vector<RpcCall> StaticDispatcher::on_bundles(const std::vector<BundleMetadata>& bundles, Instant) {
    std::vector<RpcCall> calls;
    for (const auto& meta : bundles)
        if (forward_pending(meta))
            if (auto call = decide(meta)) calls.push_back(std::move(*call));
    return calls;
}

// ---------------------------------------------------------------------------

std::set<Topic> OpportunisticDispatcher::topics() const {
    return {Topic::forwarding_required, Topic::link_up, Topic::link_down, Topic::bundle_forwarded,
            Topic::action_failed};
}

std::optional<RpcCall> OpportunisticDispatcher::decide(const BundleMetadata& meta) {
    if (is_local(meta)) return std::nullopt;
    std::vector<std::string> candidates;
    for (const auto& peer : active_) {
        if (peer == node_ || (meta.previous_node && meta.previous_node->node == peer)) continue;
        if (seen_.contains({meta.id, peer})) continue;
        candidates.push_back(peer);
    }
    if (candidates.empty()) return std::nullopt;

    if (single_copy_) {
        if (decided_.contains(meta.id)) return std::nullopt;
        const auto direct = std::find(candidates.begin(), candidates.end(), meta.destination.node);
        const auto& peer = direct != candidates.end() ? *direct : candidates.front();
        decided_.insert(meta.id);
        seen_.insert({meta.id, peer});
        return update_actions_call(meta.id, {Action::send_to(peer), Action::drop()});
    }

    ActionList actions;
    for (const auto& peer : candidates) {
        actions.push_back(Action::send_to(peer));
        seen_.insert({meta.id, peer});
    }
    return update_actions_call(meta.id, actions);
}

std::vector<RpcCall> OpportunisticDispatcher::on_event(const Event& event, Instant) {
    track_link(event);
    std::vector<RpcCall> calls;
    switch (event.topic) {
        case Topic::forwarding_required:
            if (event.bundle)
                if (auto call = decide(*event.bundle)) calls.push_back(std::move(*call));
            break;
        case Topic::action_failed:
            if (event.bundle && event.action_index) {
                // The failed send and everything after it never happened.
                const auto& actions = event.bundle->current_actions;
                for (auto i = *event.action_index; i < actions.size(); ++i)
                    if (actions[i].is_send_to()) seen_.erase({event.bundle->id, actions[i].target()});
                decided_.erase(event.bundle->id);
            }
            break;
        case Topic::link_up:
            calls.push_back(list_bundles_call());
            break;
        default:
            break;
    }
    return calls;
}

std::vector<RpcCall> OpportunisticDispatcher::on_bundles(const std::vector<BundleMetadata>& bundles, Instant) {
    std::vector<RpcCall> calls;
    for (const auto& meta : bundles)
        if (forward_pending(meta))
            if (auto call = decide(meta)) calls.push_back(std::move(*call));
    return calls;
}

// ---------------------------------------------------------------------------

std::set<Topic> ContactDispatcher::topics() const {
    return {Topic::forwarding_required, Topic::link_up, Topic::link_down, Topic::action_failed};
}

std::optional<RpcCall> ContactDispatcher::evaluate(const BundleMetadata& meta, Instant now) {
    wake_at_.erase(meta.id);
    const Instant t = now > epoch_ ? now - epoch_ : 0;
    const auto route = earliest_arrival_route(plan_, node_, meta.destination.node, t);
    if (!route || !route->first_contact) return std::nullopt;

    const auto& contact = plan_[*route->first_contact];
    if (contact.start <= t && active_.contains(route->next_hop)) {
        pending_.erase(meta.id);
        return update_actions_call(meta.id, {Action::send_to(route->next_hop), Action::drop()});
    }
    // Before the contact: wake at its start. During it without a link: wait
    // for link-up, and re-plan once the window has closed.
    wake_at_[meta.id] = epoch_ + (contact.start > t ? contact.start : contact.end + 1);
    return std::nullopt;
}

std::vector<RpcCall> ContactDispatcher::evaluate_all(Instant now) {
    std::vector<RpcCall> calls;
    std::vector<BundleMetadata> snapshot;
    for (const auto& [id, meta] : pending_) snapshot.push_back(meta);
    for (const auto& meta : snapshot)
        if (auto call = evaluate(meta, now)) calls.push_back(std::move(*call));
    return calls;
}

std::vector<RpcCall> ContactDispatcher::on_event(const Event& event, Instant now) {
    track_link(event);
    std::vector<RpcCall> calls;
    if (event.topic == Topic::forwarding_required && event.bundle && !is_local(*event.bundle)) {
        pending_[event.bundle->id] = *event.bundle;
        if (auto call = evaluate(*event.bundle, now)) calls.push_back(std::move(*call));
    } else if (event.topic == Topic::link_up) {
        calls = evaluate_all(now);
    }
    return calls;
}

std::vector<RpcCall> ContactDispatcher::on_bundles(const std::vector<BundleMetadata>& bundles, Instant now) {
    for (const auto& meta : bundles)
        if (forward_pending(meta) && !is_local(meta)) pending_.try_emplace(meta.id, meta);
    return evaluate_all(now);
}

std::vector<RpcCall> ContactDispatcher::on_timer(Instant now) {
    std::vector<RpcCall> calls;
    std::vector<BundleId> due;
    for (const auto& [id, at] : wake_at_)
        if (at <= now) due.push_back(id);
    for (const auto& id : due) {
        const auto it = pending_.find(id);
        if (it == pending_.end()) {
            wake_at_.erase(id);
            continue;
        }
        const auto meta = it->second;
        if (auto call = evaluate(meta, now)) calls.push_back(std::move(*call));
    }
    return calls;
}

std::optional<Instant> ContactDispatcher::next_timer() const {
    if (wake_at_.empty()) return std::nullopt;
    return std::min_element(wake_at_.begin(), wake_at_.end(),
                            [](const auto& a, const auto& b) { return a.second < b.second; })
        ->second;
}

// ---------------------------------------------------------------------------

std::size_t run_dispatcher(Dispatcher& dispatcher, const std::string& address, const std::atomic<bool>& stop,
                           bool announce) {
    Connection conn(address, Hello{kProtocolVersion, "bdm", "bdm"});
    dispatcher.set_node(conn.server_hello().node);
    conn.send(Kind::subscribe, subscribe_body(dispatcher.topics()));

    std::map<std::string, RpcCall> outstanding;
    std::size_t issued = 0;
    const auto issue = [&](std::vector<RpcCall> calls) {
        for (auto& call : calls) {
            const auto id = conn.next_request_id();
            conn.send(Kind::rpc_request, request_body(RpcRequest{id, call.method, call.params}));
            outstanding.emplace(id.dump(), std::move(call));
            ++issued;
        }
    };
    issue({list_bundles_call()});
    bool ready = false;

    while (!stop.load()) {
        auto now = wall_clock_ms();
        int timeout = 100;
        if (const auto at = dispatcher.next_timer())
            timeout = *at <= now ? 0 : static_cast<int>(std::min<Instant>(*at - now, 100));

        std::optional<Envelope> envelope;
        try {
            envelope = conn.read(timeout);
        } catch (const Error& e) {
            if (e.code() == "connection-closed") break;
            throw;
        }
        now = wall_clock_ms();
        if (envelope && envelope->kind == Kind::event && envelope->body.contains("topic")) {
            issue(dispatcher.on_event(envelope->body.get<Event>(), now));
        } else if (envelope && envelope->kind == Kind::rpc_response) {
            const auto response = parse_response(envelope->body);
            if (response.id.is_null()) {
                std::cerr << "bdm: node closed the session: " << (response.error ? response.error->message : "") << "\n";
                break;
            }
            const auto it = outstanding.find(response.id.dump());
            if (it == outstanding.end()) continue;
            const auto call = std::move(it->second);
            outstanding.erase(it);
            if (response.error) {
                std::cerr << "bdm: " << call.method << " failed: " << response.error->code << "\n";
            } else if (call.method == method::list_bundles) {
                issue(dispatcher.on_bundles(response.result.at("bundles").get<std::vector<BundleMetadata>>(), now));
                if (!ready) {
                    ready = true;
                    if (announce) std::cout << "ready" << std::endl;
                }
            }
        }
        if (const auto at = dispatcher.next_timer(); at && *at <= now) issue(dispatcher.on_timer(now));
    }
    return issued;
}

}  // namespace bpdx
