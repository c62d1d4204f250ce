#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "bpdx/protocol.hpp"

namespace bpdx {

using SubscriberId = std::uint64_t;

/// Fan-out of published events to per-subscriber FIFO queues with topic
/// filters. A subscriber whose backlog would exceed its cap is marked as
/// overflowed and stops receiving events; its owner is expected to close it.
class EventBus {
public:
    SubscriberId add_subscriber(std::size_t queue_cap);
    void remove_subscriber(SubscriberId id);

    /// Additive; topics already present are ignored.
    void subscribe(SubscriberId id, const std::set<Topic>& topics);

    void publish(const Event& event);

    std::optional<Event> pop(SubscriberId id);
    std::size_t backlog(SubscriberId id) const;
    bool overflowed(SubscriberId id) const;

    /// Called for every published event, subscribed or not (wire logging).
    void set_tap(std::function<void(const Event&)> tap) { tap_ = std::move(tap); }

    std::size_t subscriber_count() const noexcept { return subscribers_.size(); }

private:
    struct Subscriber {
        std::size_t cap = 0;
        std::set<Topic> topics;
        std::deque<Event> queue;
        bool overflowed = false;
    };

    std::map<SubscriberId, Subscriber> subscribers_;
    SubscriberId next_id_ = 1;
    std::function<void(const Event&)> tap_;
};

}  // namespace bpdx
