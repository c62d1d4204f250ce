#include "bpdx/agent.hpp"

#include <algorithm>

namespace bpdx {

std::string_view to_string(Retention retention) noexcept {
    return retention == Retention::forward_pending ? "forward-pending" : "dispatch-pending";
}

std::string_view to_string(IngestOutcome outcome) noexcept {
    switch (outcome) {
        case IngestOutcome::stored: return "stored";
        case IngestOutcome::delivered: return "delivered";
        case IngestOutcome::held: return "held";
        case IngestOutcome::duplicate: return "duplicate";
        case IngestOutcome::expired: return "expired";
    }
    return "?";
}

BundleMetadata StoredBundle::metadata() const {
    std::vector<std::string> tokens;
    for (const auto r : retention) tokens.emplace_back(to_string(r));
    return metadata_of(bundle, arrival_time, actions, update_seq, std::move(tokens));
}

Agent::Agent(std::string node_name, EventBus& bus)
    : node_name_(std::move(node_name)), bus_(bus), supported_(core_verbs()) {
    if (!valid_node_name(node_name_)) throw Error("bad-config", "invalid node name: " + node_name_);
}

void Agent::publish_bundle(Topic topic, const BundleMetadata& meta, Instant now,
                           std::optional<std::uint64_t> action_index, std::string reason) {
    Event event;
    event.topic = topic;
    event.timestamp = now;
    event.bundle = meta;
    event.action_index = action_index;
    event.reason = std::move(reason);
    bus_.publish(event);
}

void Agent::link_event(Topic topic, const std::string& peer, const std::string& address, Instant now) {
    Event event;
    event.topic = topic;
    event.timestamp = now;
    event.peer = peer;
    event.address = address;
    bus_.publish(event);
}

void Agent::stamp(StoredBundle& stored) {
    eligible_.erase(stored.update_seq);
    stored.update_seq = ++update_counter_;
}

void Agent::reschedule(const StoredBundle& stored) {
    if (!stored.halted && stored.exec_cursor < stored.actions.size())
        eligible_[stored.update_seq] = stored.bundle.id;
    else
        eligible_.erase(stored.update_seq);
}

void Agent::erase(std::map<BundleId, StoredBundle>::iterator it) {
    eligible_.erase(it->second.update_seq);
    store_.erase(it);
}

IngestOutcome Agent::ingest(Bundle bundle, const IngestSource& source, Instant now) {
    (void)source;
    check_well_formed(bundle);
    if (seen_.contains(bundle.id) || store_.contains(bundle.id)) return IngestOutcome::duplicate;

    if (is_expired(bundle, now)) {
        publish_bundle(Topic::bundle_expired, metadata_of(bundle, now), now);
        return IngestOutcome::expired;
    }
    seen_[bundle.id] = expires_at(bundle);

    const bool local = bundle.destination.node == node_name_;
    if (local && deliver_ && deliver_(bundle)) {
        publish_bundle(Topic::bundle_delivered, metadata_of(bundle, now), now);
        return IngestOutcome::delivered;
    }

    StoredBundle stored;
    stored.arrival_time = now;
    if (local) {
        stored.retention = {Retention::dispatch_pending};
    } else {
        stored.retention = {Retention::forward_pending};
        stored.actions = default_actions_;
    }
    stored.outcomes.assign(stored.actions.size(), std::nullopt);
    stored.bundle = std::move(bundle);
    stamp(stored);

    const auto id = stored.bundle.id;
    auto& slot = store_[id] = std::move(stored);
    const auto meta = slot.metadata();
    publish_bundle(Topic::bundle_received, meta, now);
    if (local) return IngestOutcome::held;

    publish_bundle(Topic::forwarding_required, meta, now);
    reschedule(slot);
    return IngestOutcome::stored;
}

void Agent::update_actions(const BundleId& id, ActionList actions, Instant now) {
    (void)now;
    if (const auto err = validate_action_list(actions, supported_))
        throw Error("invalid-action-list", err->str());
    auto it = store_.find(id);
    if (it == store_.end()) throw Error("unknown-bundle", "no stored bundle " + id.str());

    auto& stored = it->second;
    stamp(stored);
    stored.actions = std::move(actions);
    stored.exec_cursor = 0;
    stored.outcomes.assign(stored.actions.size(), std::nullopt);
    stored.halted = false;
    reschedule(stored);
}

void Agent::set_default_actions(ActionList actions) {
    if (const auto err = validate_action_list(actions, supported_))
        throw Error("invalid-action-list", err->str());
    default_actions_ = std::move(actions);
}

std::vector<BundleMetadata> Agent::list_bundles() const {
    std::vector<const StoredBundle*> ordered;
    ordered.reserve(store_.size());
    for (const auto& [id, stored] : store_) ordered.push_back(&stored);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->update_seq < b->update_seq; });
    std::vector<BundleMetadata> out;
    out.reserve(ordered.size());
    for (const auto* stored : ordered) out.push_back(stored->metadata());
    return out;
}

std::optional<BundleMetadata> Agent::get_bundle(const BundleId& id) const {
    const auto* stored = find(id);
    if (!stored) return std::nullopt;
    return stored->metadata();
}

const StoredBundle* Agent::find(const BundleId& id) const {
    const auto it = store_.find(id);
    return it == store_.end() ? nullptr : &it->second;
}

std::optional<StepReport> Agent::execute_next(Instant now) {
    if (eligible_.empty()) return std::nullopt;
    const auto it = store_.find(eligible_.begin()->second);
    auto& stored = it->second;
    const auto index = stored.exec_cursor;
    const auto& action = stored.actions[index];

    StepReport report{stored.bundle.id, index, action.verb};

    if (action.is_send_to()) {
        std::string reason;
        const bool ok = transmit_ && transmit_(action.target(), stored.bundle, reason);
        stored.outcomes[index] = ok;
        report.success = ok;
        if (ok) {
            ++stored.exec_cursor;
            reschedule(stored);
            publish_bundle(Topic::bundle_forwarded, stored.metadata(), now, index);
        } else {
            stored.halted = true;
            reschedule(stored);
            const auto meta = stored.metadata();
            publish_bundle(Topic::action_failed, meta, now, index, reason.empty() ? "no-link" : reason);
            publish_bundle(Topic::forwarding_required, meta, now);
        }
    } else if (action.is_drop()) {
        const bool previous_ok = index == 0 || stored.outcomes[index - 1] == true;
        stored.outcomes[index] = previous_ok;
        ++stored.exec_cursor;
        report.success = previous_ok;
        if (previous_ok) stored.retention.erase(Retention::forward_pending);
        if (stored.retention.empty()) {
            report.removed = true;
            erase(it);
        } else {
            reschedule(stored);
        }
    } else {
        // Announced extension verbs without an executor end up here.
        stored.outcomes[index] = false;
        stored.halted = true;
        reschedule(stored);
        const auto meta = stored.metadata();
        publish_bundle(Topic::action_failed, meta, now, index, "unsupported-verb");
        publish_bundle(Topic::forwarding_required, meta, now);
    }

    if (step_observer_) step_observer_(report);
    return report;
}

std::size_t Agent::run(Instant now) {
    std::size_t steps = 0;
    while (execute_next(now)) ++steps;
    return steps;
}

std::size_t Agent::expiry_scan(Instant now) {
    std::size_t removed = 0;
    for (auto it = store_.begin(); it != store_.end();) {
        if (!is_expired(it->second.bundle, now)) {
            ++it;
            continue;
        }
        auto meta = it->second.metadata();
        meta.retention.clear();
        auto next = std::next(it);
        erase(it);
        it = next;
        ++removed;
        publish_bundle(Topic::bundle_expired, meta, now);
    }
    std::erase_if(seen_, [now](const auto& entry) { return entry.second <= now; });
    return removed;
}

std::size_t Agent::on_registration(const std::string& demux, Instant now) {
    std::vector<const StoredBundle*> held;
    for (const auto& [id, stored] : store_)
        if (stored.retention.contains(Retention::dispatch_pending) && stored.bundle.destination.demux == demux)
            held.push_back(&stored);
    std::sort(held.begin(), held.end(),
              [](const auto* a, const auto* b) { return a->update_seq < b->update_seq; });

    std::size_t delivered = 0;
    for (const auto* ptr : held) {
        auto it = store_.find(ptr->bundle.id);
        if (!deliver_ || !deliver_(it->second.bundle)) break;
        it->second.retention.erase(Retention::dispatch_pending);
        const auto meta = it->second.metadata();
        if (it->second.retention.empty()) erase(it);
        publish_bundle(Topic::bundle_delivered, meta, now);
        ++delivered;
    }
    return delivered;
}

}  // namespace bpdx
