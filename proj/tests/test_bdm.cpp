#include <gtest/gtest.h>

#include <sstream>

#include "bpdx/bdm.hpp"

using namespace bpdx;
using nlohmann::json;

namespace {

BundleMetadata meta(std::uint64_t seq, const std::string& dest = "Z", std::optional<std::string> prev = {}) {
    BundleMetadata m;
    m.id = BundleId{EndpointId{"A", "src"}, 1000, seq};
    m.destination = EndpointId{dest, "app"};
    m.lifetime = 60000;
    if (prev) m.previous_node = EndpointId::of_node(*prev);
    m.retention = {"forward-pending"};
    return m;
}

Event bundle_event(Topic t, const BundleMetadata& m) {
    Event e;
    e.topic = t;
    e.bundle = m;
    return e;
}

Event link(Topic t, const std::string& peer) {
    Event e;
    e.topic = t;
    e.peer = peer;
    e.address = "x";
    return e;
}

ActionList actions_of(const RpcCall& call) { return call.params.at("actions").get<ActionList>(); }

}  // namespace

TEST(RouteTable, ParsesAndFallsBack) {
    std::istringstream in("Z Y\n# c\n* GW\n");
    StaticDispatcher d(parse_route_table(in));
    EXPECT_EQ(d.route("Z"), "Y");
    EXPECT_EQ(d.route("Q"), "GW");
    StaticDispatcher none(StaticRouteTable{{"Z", "Y"}});
    EXPECT_FALSE(none.route("Q"));
}

TEST(RouteTable, RejectsMalformedLines) {
    std::istringstream in("Z\n");
    EXPECT_THROW(parse_route_table(in), Error);
    std::istringstream extra("Z Y W\n");
    EXPECT_THROW(parse_route_table(extra), Error);
}

TEST(StaticBdm, ForwardsWhenHopActive) {
    StaticDispatcher d(StaticRouteTable{{"Z", "Y"}});
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 0);
    const auto calls = d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(calls[0].method, "update-actions");
    EXPECT_EQ(actions_of(calls[0]), (ActionList{Action::send_to("Y"), Action::drop()}));
}

TEST(StaticBdm, NoRouteMeansNoRpc) {
    StaticDispatcher d(StaticRouteTable{{"Q", "Y"}});
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 0);
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0).empty());
}

TEST(StaticBdm, LinkUpReconcilesExactlyOnce) {
    StaticDispatcher d(StaticRouteTable{{"Z", "Y"}});
    d.set_node("A");
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0).empty());
    const auto on_up = d.on_event(link(Topic::link_up, "Y"), 0);
    ASSERT_EQ(on_up.size(), 1u);
    EXPECT_EQ(on_up[0], list_bundles_call());
    const auto calls = d.on_bundles({meta(1)}, 0);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_TRUE(d.on_bundles({meta(1)}, 0).empty());
}

TEST(StaticBdm, DecidesAgainAfterFailure) {
    StaticDispatcher d(StaticRouteTable{{"Z", "Y"}});
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 0);
    EXPECT_EQ(d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0).size(), 1u);
    d.on_event(link(Topic::link_down, "Y"), 0);
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0).empty());
    d.on_event(link(Topic::link_up, "Y"), 0);
    EXPECT_EQ(d.on_bundles({meta(1)}, 0).size(), 1u);
}

TEST(StaticBdm, IgnoresLocalBundles) {
    StaticDispatcher d(StaticRouteTable{{"*", "Y"}});
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 0);
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "A")), 0).empty());
}

TEST(OpportunisticBdm, SingleCopyToOnlyLink) {
    OpportunisticDispatcher d(true);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "B"), 0);
    const auto calls = d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(actions_of(calls[0]), (ActionList{Action::send_to("B"), Action::drop()}));
}

TEST(OpportunisticBdm, SingleCopyPrefersDestination) {
    OpportunisticDispatcher d(true);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "B"), 0);
    d.on_event(link(Topic::link_up, "Z"), 0);
    const auto calls = d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(actions_of(calls[0])[0].target(), "Z");
}

TEST(OpportunisticBdm, FloodSendsToEveryPeerWithoutDrop) {
    OpportunisticDispatcher d(false);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "B"), 0);
    d.on_event(link(Topic::link_up, "C"), 0);
    const auto calls = d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(actions_of(calls[0]), (ActionList{Action::send_to("B"), Action::send_to("C")}));
}

TEST(OpportunisticBdm, NeverBackToPreviousNode) {
    for (const bool single : {true, false}) {
        OpportunisticDispatcher d(single);
        d.set_node("A");
        d.on_event(link(Topic::link_up, "B"), 0);
        EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "Z", "B")), 0).empty());
    }
}

TEST(OpportunisticBdm, FloodOnlyNewPeersLater) {
    OpportunisticDispatcher d(false);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "B"), 0);
    d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0);
    d.on_event(link(Topic::link_up, "C"), 0);
    const auto calls = d.on_bundles({meta(1)}, 0);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(actions_of(calls[0]), (ActionList{Action::send_to("C")}));
    EXPECT_TRUE(d.on_bundles({meta(1)}, 0).empty());
    EXPECT_EQ(d.seen().size(), 2u);
}

TEST(OpportunisticBdm, FailedSendIsRetried) {
    OpportunisticDispatcher d(true);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "B"), 0);
    const auto first = d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 0);
    ASSERT_EQ(first.size(), 1u);
    auto failed = meta(1);
    failed.current_actions = actions_of(first[0]);
    auto ev = bundle_event(Topic::action_failed, failed);
    ev.action_index = 0;
    ev.reason = "no-link";
    d.on_event(ev, 0);
    d.on_event(link(Topic::link_down, "B"), 0);
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, failed), 0).empty());
    d.on_event(link(Topic::link_up, "B"), 0);
    EXPECT_EQ(d.on_bundles({failed}, 0).size(), 1u);
}

TEST(ContactBdm, HoldsUntilContactStart) {
    ContactDispatcher d({{"A", "Y", 2000, 5000}, {"Y", "Z", 0, 10000}}, 10000);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 10000);
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1)), 10100).empty());
    EXPECT_EQ(d.next_timer(), 12000u);
    EXPECT_TRUE(d.on_timer(11999).empty());
    const auto calls = d.on_timer(12000);
    ASSERT_EQ(calls.size(), 1u);
    EXPECT_EQ(actions_of(calls[0]), (ActionList{Action::send_to("Y"), Action::drop()}));
    EXPECT_EQ(d.waiting(), 0u);
}

TEST(ContactBdm, WaitsForLinkDuringContact) {
    ContactDispatcher d({{"A", "Y", 0, 5000}}, 0);
    d.set_node("A");
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "Y")), 100).empty());
    const auto calls = d.on_event(link(Topic::link_up, "Y"), 200);
    ASSERT_EQ(calls.size(), 1u);
}

TEST(ContactBdm, NoPlanEntryMeansNoRpc) {
    ContactDispatcher d({{"A", "Y", 0, 5000}}, 0);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 0);
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "Q")), 100).empty());
    EXPECT_FALSE(d.next_timer());
}

TEST(ContactBdm, ReplansAfterFailureWithLaterContact) {
    ContactDispatcher d({{"A", "Y", 0, 1000}, {"A", "Y", 3000, 4000}}, 0);
    d.set_node("A");
    d.on_event(link(Topic::link_up, "Y"), 0);
    ASSERT_EQ(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "Y")), 100).size(), 1u);
    d.on_event(link(Topic::link_down, "Y"), 500);
    // The send failed; the node re-publishes forwarding-required.
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "Y")), 500).empty());
    // Link back within the first window.
    EXPECT_EQ(d.on_event(link(Topic::link_up, "Y"), 800).size(), 1u);
}

TEST(ContactBdm, MissedWindowFallsToNextContact) {
    ContactDispatcher d({{"A", "Y", 0, 1000}, {"A", "Y", 3000, 4000}}, 0);
    d.set_node("A");
    EXPECT_TRUE(d.on_event(bundle_event(Topic::forwarding_required, meta(1, "Y")), 100).empty());
    EXPECT_EQ(d.next_timer(), 1001u);
    EXPECT_TRUE(d.on_timer(1001).empty());
    EXPECT_EQ(d.next_timer(), 3000u);
    d.on_event(link(Topic::link_up, "Y"), 2900);
    EXPECT_EQ(d.on_timer(3000).size(), 1u);
}
