#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bpdx/contact_plan.hpp"
#include "bpdx/protocol.hpp"

namespace bpdx {

/// An RPC a dispatcher wants issued.
struct RpcCall {
    std::string method;
    nlohmann::json params = nlohmann::json::object();

    friend bool operator==(const RpcCall&, const RpcCall&) = default;
};

RpcCall update_actions_call(const BundleId& id, const ActionList& actions);
RpcCall list_bundles_call();

/// Decision logic of a Bundle Dispatcher Module, free of I/O. The loop in
/// run_dispatcher() feeds it events, list-bundles results and timer ticks and
/// issues whatever calls it returns.
class Dispatcher {
public:
    virtual ~Dispatcher() = default;

    virtual std::set<Topic> topics() const = 0;
    virtual std::vector<RpcCall> on_event(const Event& event, Instant now) = 0;
    /// Result of a list-bundles call (reconciliation).
    virtual std::vector<RpcCall> on_bundles(const std::vector<BundleMetadata>& bundles, Instant now) = 0;
    virtual std::vector<RpcCall> on_timer(Instant now) { (void)now; return {}; }
    virtual std::optional<Instant> next_timer() const { return std::nullopt; }

    void set_node(std::string node) { node_ = std::move(node); }
    const std::string& node() const noexcept { return node_; }

protected:
    bool is_local(const BundleMetadata& meta) const { return meta.destination.node == node_; }
    void track_link(const Event& event);

    std::string node_;
    /// Peers with an active link, as learned from link events.
    std::set<std::string> active_;
};

/// destination node (or "*") -> next hop
using StaticRouteTable = std::map<std::string, std::string>;

/// "dest next-hop" per line; '#' comments. Throws Error("bad-routes").
StaticRouteTable parse_route_table(std::istream& in);
StaticRouteTable load_route_table(const std::string& path);

/// Forwards along a static route table whenever the route's next hop is up.
class StaticDispatcher : public Dispatcher {
public:
    explicit StaticDispatcher(StaticRouteTable table) : table_(std::move(table)) {}

    std::set<Topic> topics() const override;
    std::vector<RpcCall> on_event(const Event& event, Instant now) override;
    std::vector<RpcCall> on_bundles(const std::vector<BundleMetadata>& bundles, Instant now) override;

    std::optional<std::string> route(const std::string& dest) const;

private:
    std::optional<RpcCall> decide(const BundleMetadata& meta);

    StaticRouteTable table_;
    std::set<BundleId> decided_;
};

/// Hands bundles to whichever neighbor is available. Single-copy mode sends
/// the only copy to one neighbor and drops it; flood mode sends a copy to
/// every neighbor once and keeps the bundle until it expires. Neither mode
/// ever sends a bundle back to the node it came from.
class OpportunisticDispatcher : public Dispatcher {
public:
    explicit OpportunisticDispatcher(bool single_copy) : single_copy_(single_copy) {}

    std::set<Topic> topics() const override;
    std::vector<RpcCall> on_event(const Event& event, Instant now) override;
    std::vector<RpcCall> on_bundles(const std::vector<BundleMetadata>& bundles, Instant now) override;

    bool single_copy() const noexcept { return single_copy_; }
    /// (bundle, peer) pairs a copy was issued to.
    const std::set<std::pair<BundleId, std::string>>& seen() const noexcept { return seen_; }

private:
    std::optional<RpcCall> decide(const BundleMetadata& meta);

    bool single_copy_;
    std::set<BundleId> decided_;
    std::set<std::pair<BundleId, std::string>> seen_;
};

/// Routes over a contact plan with earliest-arrival search and holds bundles
/// until the first contact of their route opens and its link is up.
class ContactDispatcher : public Dispatcher {
public:
    /// Plan times are relative to `epoch` (ms since the Unix epoch).
    ContactDispatcher(std::vector<ContactPlanEntry> plan, Instant epoch = 0)
        : plan_(std::move(plan)), epoch_(epoch) {}

    std::set<Topic> topics() const override;
    std::vector<RpcCall> on_event(const Event& event, Instant now) override;
    std::vector<RpcCall> on_bundles(const std::vector<BundleMetadata>& bundles, Instant now) override;
    std::vector<RpcCall> on_timer(Instant now) override;
    std::optional<Instant> next_timer() const override;

    std::size_t waiting() const noexcept { return pending_.size(); }

private:
    std::vector<RpcCall> evaluate_all(Instant now);
    /// Returns the call when the bundle can go now; otherwise schedules it.
    std::optional<RpcCall> evaluate(const BundleMetadata& meta, Instant now);

    std::vector<ContactPlanEntry> plan_;
    Instant epoch_;
    std::map<BundleId, BundleMetadata> pending_;
    std::map<BundleId, Instant> wake_at_;
};

/// Runs a dispatcher against a node until `stop` becomes true or the
/// connection closes. Prints "ready" to stdout once the initial reconciliation
/// completed when `announce` is set. Returns the number of RPCs issued.
std::size_t run_dispatcher(Dispatcher& dispatcher, const std::string& address, const std::atomic<bool>& stop,
                           bool announce = false);

}  // namespace bpdx
