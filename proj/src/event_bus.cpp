#include "bpdx/event_bus.hpp"

namespace bpdx {

SubscriberId EventBus::add_subscriber(std::size_t queue_cap) {
    const auto id = next_id_++;
    subscribers_[id].cap = queue_cap;
    return id;
}

void EventBus::remove_subscriber(SubscriberId id) { subscribers_.erase(id); }

void EventBus::subscribe(SubscriberId id, const std::set<Topic>& topics) {
    auto it = subscribers_.find(id);
    if (it != subscribers_.end()) it->second.topics.insert(topics.begin(), topics.end());
}

void EventBus::publish(const Event& event) {
    if (tap_) tap_(event);
    for (auto& [id, sub] : subscribers_) {
        if (sub.overflowed || !sub.topics.contains(event.topic)) continue;
        if (sub.queue.size() >= sub.cap) {
            sub.overflowed = true;
            sub.queue.clear();
            continue;
        }
        sub.queue.push_back(event);
    }
}

std::optional<Event> EventBus::pop(SubscriberId id) {
    auto it = subscribers_.find(id);
    if (it == subscribers_.end() || it->second.queue.empty()) return std::nullopt;
    auto event = std::move(it->second.queue.front());
    it->second.queue.pop_front();
    return event;
}

std::size_t EventBus::backlog(SubscriberId id) const {
    const auto it = subscribers_.find(id);
    return it == subscribers_.end() ? 0 : it->second.queue.size();
}

bool EventBus::overflowed(SubscriberId id) const {
    const auto it = subscribers_.find(id);
    return it != subscribers_.end() && it->second.overflowed;
}

}  // namespace bpdx
