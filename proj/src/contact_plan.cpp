#include "bpdx/contact_plan.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace bpdx {

void check_contact(const ContactPlanEntry& contact) {
    if (!valid_node_name(contact.from) || !valid_node_name(contact.to))
        throw Error("bad-contact", "contact endpoints must be node names");
    if (contact.from == contact.to) throw Error("bad-contact", "contact from a node to itself: " + contact.from);
    if (contact.start >= contact.end) throw Error("bad-contact", "contact must start before it ends");
}

std::vector<ContactPlanEntry> parse_contact_plan(std::istream& in) {
    std::vector<ContactPlanEntry> plan;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;

        std::istringstream fields(line);
        ContactPlanEntry entry;
        std::string extra;
        if (!(fields >> entry.from >> entry.to >> entry.start >> entry.end))
            throw Error("bad-contact-plan", "line " + std::to_string(line_no) + ": expected 'from to start end [owlt]'");
        if (!(fields >> entry.one_way_light_time)) {
            if (!fields.eof()) throw Error("bad-contact-plan", "line " + std::to_string(line_no) + ": bad owlt");
            entry.one_way_light_time = 0;
        } else if (fields >> extra) {
            throw Error("bad-contact-plan", "line " + std::to_string(line_no) + ": trailing fields");
        }
        try {
            check_contact(entry);
        } catch (const Error& e) {
            throw Error("bad-contact-plan", "line " + std::to_string(line_no) + ": " + e.what());
        }
        plan.push_back(std::move(entry));
    }
    return plan;
}

std::vector<ContactPlanEntry> load_contact_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("bad-contact-plan", "cannot read " + path);
    return parse_contact_plan(in);
}

namespace {

constexpr Instant kNever = std::numeric_limits<Instant>::max();

struct Label {
    Instant arrival = kNever;
    std::size_t first_contact = 0;
};

}  // namespace

std::optional<ContactRoute> earliest_arrival_route(const std::vector<ContactPlanEntry>& plan,
                                                   const std::string& source, const std::string& dest,
                                                   Instant t0) {
    if (source == dest) return ContactRoute{source, t0, 0, std::nullopt};

    // Sorted names give indices whose order matches name order.
    std::map<std::string, std::size_t> index;
    index[source];
    index[dest];
    for (const auto& c : plan) {
        index[c.from];
        index[c.to];
    }
    std::vector<std::string> names;
    for (auto& [name, i] : index) {
        i = names.size();
        names.push_back(name);
    }
    const auto n = names.size();
    const auto src = index[source];
    const auto dst = index[dest];

    // labels[node * n + first_hop]: earliest arrival using exactly k contacts.
    std::vector<Label> labels(n * n);
    for (std::size_t ci = 0; ci < plan.size(); ++ci) {
        const auto& c = plan[ci];
        if (index[c.from] != src || t0 > c.end) continue;
        const auto to = index[c.to];
        auto& slot = labels[to * n + to];
        const auto arrival = std::max(t0, c.start) + c.one_way_light_time;
        if (arrival < slot.arrival) slot = Label{arrival, ci};
    }

    std::optional<ContactRoute> best;
    const auto consider = [&](std::size_t hops) {
        for (std::size_t h = 0; h < n; ++h) {
            const auto& label = labels[dst * n + h];
            if (label.arrival == kNever) continue;
            // Hop count only grows and h walks names in ascending order, so a
            // candidate wins only with a strictly earlier arrival.
            if (!best || label.arrival < best->arrival)
                best = ContactRoute{names[h], label.arrival, hops, label.first_contact};
        }
    };
    consider(1);

    // Optimal routes never revisit a node, so n - 1 contacts suffice.
    for (std::size_t hops = 2; hops < n; ++hops) {
        std::vector<Label> next(n * n);
        bool any = false;
        for (const auto& c : plan) {
            const auto from = index[c.from];
            const auto to = index[c.to];
            for (std::size_t h = 0; h < n; ++h) {
                const auto& label = labels[from * n + h];
                if (label.arrival == kNever || label.arrival > c.end) continue;
                const auto arrival = std::max(label.arrival, c.start) + c.one_way_light_time;
                auto& slot = next[to * n + h];
                if (arrival < slot.arrival) {
                    slot = Label{arrival, label.first_contact};
                    any = true;
                }
            }
        }
        if (!any) break;
        labels = std::move(next);
        consider(hops);
    }
    return best;
}

std::optional<NextHop> earliest_arrival(const std::vector<ContactPlanEntry>& plan, const std::string& source,
                                        const std::string& dest, Instant t0) {
    const auto route = earliest_arrival_route(plan, source, dest, t0);
    if (!route) return std::nullopt;
    return NextHop{route->next_hop, route->arrival};
}

}  // namespace bpdx
