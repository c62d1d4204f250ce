#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bpdx/action.hpp"
#include "bpdx/bundle.hpp"

namespace bpdx {

struct NodeConfig {
    std::string node_name;
    ActionList default_actions;
    std::string dispatch_address = "127.0.0.1:4550";
    std::string app_address = "127.0.0.1:4560";
    std::string cla_address = "127.0.0.1:4556";
    Duration expiry_scan_period = 100;
    std::size_t subscriber_queue_cap = 1024;
    /// Peers dialed at startup (host:port of their CLA listeners).
    std::vector<std::string> dial;
    /// JSON-lines wire log; empty disables logging.
    std::string wire_log;
};

/// Reads a JSON config file. Throws Error("bad-config").
NodeConfig load_node_config(const std::string& path);
/// Throws Error("bad-config") on invalid names, addresses or duplicate ports.
void validate(const NodeConfig& config);

/// Line cap of the application channel. Larger than the dispatch cap so that
/// full ADUs fit into one send request.
inline constexpr std::size_t kAppMaxLineBytes = 24u << 20;

/// A bundle node daemon: bundle store and engine, the dispatch listener
/// (events + RPC), the application listener and the TCP convergence layer,
/// all driven by a single poll loop.
class Node {
public:
    /// Binds all listeners. Throws Error("port-in-use") / Error("bad-config").
    explicit Node(NodeConfig config);
    ~Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    /// Runs the event loop until stop() is called.
    void run();
    /// Thread-safe.
    void stop();

    const std::string& name() const;
    /// Bound addresses (port 0 in the config resolves to an ephemeral port).
    std::string dispatch_address() const;
    std::string app_address() const;
    std::string cla_address() const;

    /// "ready node=<name> dispatch=<addr> app=<addr> cla=<addr>"
    std::string ready_line() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace bpdx
