#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bpdx/event_bus.hpp"
#include "bpdx/protocol.hpp"

namespace bpdx {

enum class Retention { forward_pending, dispatch_pending };

std::string_view to_string(Retention retention) noexcept;

struct StoredBundle {
    Bundle bundle;
    Instant arrival_time = 0;
    std::set<Retention> retention;
    ActionList actions;
    /// Index of the next action to execute; 0 <= exec_cursor <= actions.size().
    std::size_t exec_cursor = 0;
    std::uint64_t update_seq = 0;
    /// Recorded outcome per executed action index.
    std::vector<std::optional<bool>> outcomes;
    /// Set when an action failed; cleared by the next update.
    bool halted = false;

    BundleMetadata metadata() const;
};

struct IngestSource {
    enum class Kind { application, convergence_layer };
    Kind kind = Kind::application;
    std::string peer;

    static IngestSource application() { return {Kind::application, {}}; }
    static IngestSource link(std::string peer) { return {Kind::convergence_layer, std::move(peer)}; }
};

enum class IngestOutcome {
    stored,     // entered the forwarding pipeline
    delivered,  // handed to a local registration
    held,       // local destination without registration (dispatch-pending)
    duplicate,  // id already seen; discarded without events
    expired,    // expired on arrival; discarded, bundle-expired published
};

std::string_view to_string(IngestOutcome outcome) noexcept;

/// Outcome of one engine step, for tracing and tests.
struct StepReport {
    BundleId id;
    std::size_t action_index = 0;
    std::string verb;
    bool success = false;
    bool removed = false;
};

/// The bundle store plus the action-list execution engine. Owns no I/O:
/// transmission and local delivery go through the callbacks below, events go
/// to the bus. Not thread-safe; the node's event loop serializes all calls.
class Agent {
public:
    /// Hands a bundle to the link toward `peer`. Returns false (with a reason)
    /// when no active link exists or the write fails.
    using TransmitFn = std::function<bool(const std::string& peer, const Bundle&, std::string& reason)>;
    /// Delivers to a local registration; false when nothing is registered.
    using DeliverFn = std::function<bool(const Bundle&)>;

    Agent(std::string node_name, EventBus& bus);

    void set_transmit(TransmitFn fn) { transmit_ = std::move(fn); }
    void set_deliver(DeliverFn fn) { deliver_ = std::move(fn); }

    const std::string& node_name() const noexcept { return node_name_; }

    IngestOutcome ingest(Bundle bundle, const IngestSource& source, Instant now);

    /// Throws Error("unknown-bundle") or Error("invalid-action-list").
    void update_actions(const BundleId& id, ActionList actions, Instant now);

    /// Affects only bundles ingested after the call.
    void set_default_actions(ActionList actions);
    const ActionList& default_actions() const noexcept { return default_actions_; }

    std::vector<VerbDescriptor> supported_actions() const { return supported_; }

    /// Ordered by update-seq ascending, i.e. execution priority.
    std::vector<BundleMetadata> list_bundles() const;
    std::optional<BundleMetadata> get_bundle(const BundleId& id) const;
    const StoredBundle* find(const BundleId& id) const;
    std::size_t size() const noexcept { return store_.size(); }

    /// Executes one action of the eligible bundle with the smallest update-seq.
    std::optional<StepReport> execute_next(Instant now);
    /// Steps until no bundle is eligible. Returns the number of steps taken.
    std::size_t run(Instant now);
    bool has_work() const noexcept { return !eligible_.empty(); }

    /// Removes every expired bundle. Returns how many were removed.
    std::size_t expiry_scan(Instant now);

    /// Delivers held bundles for a newly registered demux.
    std::size_t on_registration(const std::string& demux, Instant now);

    void link_event(Topic topic, const std::string& peer, const std::string& address, Instant now);

    /// Allocates a sequence number for locally created bundles.
    std::uint64_t next_creation_sequence() noexcept { return creation_sequence_++; }

    void set_step_observer(std::function<void(const StepReport&)> fn) { step_observer_ = std::move(fn); }

private:
    void publish_bundle(Topic topic, const BundleMetadata& meta, Instant now,
                        std::optional<std::uint64_t> action_index = std::nullopt, std::string reason = {});
    void stamp(StoredBundle& stored);
    void erase(std::map<BundleId, StoredBundle>::iterator it);
    void reschedule(const StoredBundle& stored);

    std::string node_name_;
    EventBus& bus_;
    TransmitFn transmit_;
    DeliverFn deliver_;
    ActionList default_actions_;
    std::vector<VerbDescriptor> supported_;

    std::map<BundleId, StoredBundle> store_;
    /// update-seq -> bundle for bundles with pending, non-halted actions.
    std::map<std::uint64_t, BundleId> eligible_;
    /// Ids already accepted, kept until their expiry for duplicate suppression.
    std::map<BundleId, Instant> seen_;
    std::uint64_t update_counter_ = 0;
    std::uint64_t creation_sequence_ = 0;
    std::function<void(const StepReport&)> step_observer_;
};

}  // namespace bpdx
