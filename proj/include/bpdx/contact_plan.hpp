#pragma once

#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "bpdx/bundle.hpp"

namespace bpdx {

/// A scheduled unidirectional transmission opportunity. Times are plan-relative
/// milliseconds.
struct ContactPlanEntry {
    std::string from;
    std::string to;
    Instant start = 0;
    Instant end = 0;
    Duration one_way_light_time = 0;

    friend bool operator==(const ContactPlanEntry&, const ContactPlanEntry&) = default;
};

/// Throws Error("bad-contact") when start >= end, from == to or a name is invalid.
void check_contact(const ContactPlanEntry& contact);

/// One entry per line: "from to start-ms end-ms [owlt-ms]". Blank lines and
/// lines starting with '#' are skipped. Throws Error("bad-contact-plan").
std::vector<ContactPlanEntry> parse_contact_plan(std::istream& in);
std::vector<ContactPlanEntry> load_contact_plan(const std::string& path);

struct ContactRoute {
    std::string next_hop;
    Instant arrival = 0;
    std::size_t hops = 0;
    /// Index into the plan of the first contact used; absent for source == dest.
    std::optional<std::size_t> first_contact;
};

/// Earliest-arrival route from `source` (present at t0) to `dest`. A bundle at
/// node n at time t may use contact (n->m, [s, e], owlt) iff t <= e, arriving
/// at max(t, s) + owlt. Ties are broken by fewer hops, then by the
/// lexicographically smallest next hop. Returns nothing when unreachable.
std::optional<ContactRoute> earliest_arrival_route(const std::vector<ContactPlanEntry>& plan,
                                                   const std::string& source, const std::string& dest,
                                                   Instant t0);

struct NextHop {
    std::string node;
    Instant arrival = 0;

    friend bool operator==(const NextHop&, const NextHop&) = default;
};

std::optional<NextHop> earliest_arrival(const std::vector<ContactPlanEntry>& plan, const std::string& source,
                                        const std::string& dest, Instant t0);

}  // namespace bpdx
