#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "bpdx/action.hpp"
#include "bpdx/bundle.hpp"

namespace bpdx {

struct ScenarioNode {
    std::string name;
    /// {"kind": "static"|"opportunistic"|"contact"|"external", ...}; null for no BDM.
    nlohmann::json bdm;
    ActionList default_actions;
    Duration scan_period = 100;
};

struct Directive {
    enum class Op { dial, close, send, register_app, probe };

    Duration at = 0;
    Op op = Op::dial;
    std::string node;
    std::string peer;
    std::string demux;
    std::string destination;
    std::size_t size = 0;
    Duration lifetime = 60000;
    std::vector<ExtensionBlock> extension_blocks;
};

/// A multi-node run: node set, timed link/traffic/probe directives relative to
/// the scenario epoch, and assertions evaluated on the captured wire logs.
struct Scenario {
    std::string name;
    Duration duration = 3000;
    std::uint64_t seed = 1;
    std::vector<ScenarioNode> nodes;
    /// Sorted by time; ties keep file order.
    std::vector<Directive> directives;
    std::vector<nlohmann::json> assertions;
};

/// Throws Error("bad-scenario").
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::string& path);

struct AssertionResult {
    std::string description;
    bool passed = false;
    /// The scenario expects this assertion to fail (self-tests).
    bool expect_fail = false;
    std::string detail;

    bool ok() const noexcept { return passed != expect_fail; }
};

/// Parsed wire log records of one node.
struct NodeLog {
    std::vector<nlohmann::json> records;
};

NodeLog load_wire_log(const std::string& path);

/// Evaluates one assertion against the logs. Times in assertions are relative
/// to `epoch`.
AssertionResult evaluate_assertion(const nlohmann::json& assertion, const std::map<std::string, NodeLog>& logs,
                                   Instant epoch);

struct ScenarioReport {
    std::string name;
    std::string out_dir;
    Instant epoch = 0;
    std::vector<AssertionResult> results;
    std::map<std::string, NodeLog> logs;
    /// Directives that could not be executed.
    std::vector<std::string> notes;

    bool ok() const;
};

struct RunOptions {
    /// Path of the bpdx executable used to spawn nodes and BDMs.
    std::string cli_path;
    /// Where wire logs and process output go; a fresh temp dir when empty.
    std::string out_dir;
    /// Delay between node startup and the scenario epoch.
    Duration startup_margin = 300;
};

/// Spawns the nodes and BDMs, executes the directives, stops everything and
/// evaluates the assertions. Throws Error("spawn-failure") / Error("timeout").
ScenarioReport run_scenario(const Scenario& scenario, const RunOptions& options);

std::string format_report(const ScenarioReport& report);

}  // namespace bpdx
