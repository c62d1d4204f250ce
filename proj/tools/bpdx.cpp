// bpdx: node daemon, reference BDMs, scenario runner and event tail.

#include <signal.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "bpdx/bdm.hpp"
#include "bpdx/client.hpp"
#include "bpdx/conformance.hpp"
#include "bpdx/node.hpp"
#include "bpdx/scenario.hpp"

using namespace bpdx;
using nlohmann::json;

namespace {

/// Blocks SIGINT/SIGTERM in every thread and runs `on_signal` from a
/// dedicated waiter thread when one arrives.
class SignalWaiter {
public:
    explicit SignalWaiter(std::function<void()> on_signal) {
        sigemptyset(&set_);
        sigaddset(&set_, SIGINT);
        sigaddset(&set_, SIGTERM);
        sigaddset(&set_, SIGUSR1);
        pthread_sigmask(SIG_BLOCK, &set_, nullptr);
        thread_ = std::thread([this, cb = std::move(on_signal)] {
            int sig = 0;
            sigwait(&set_, &sig);
            if (sig != SIGUSR1) cb();
        });
    }
    ~SignalWaiter() {
        pthread_kill(thread_.native_handle(), SIGUSR1);
        thread_.join();
    }

private:
    sigset_t set_;
    std::thread thread_;
};

int fail(const Error& e) {
    std::cerr << "error: " << e.code() << ": " << e.what() << "\n";
    return 1;
}

std::string self_path(const char* argv0) {
    std::error_code ec;
    auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
    return ec ? std::string(argv0) : p.string();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bundle node with external dispatcher modules"};
    app.require_subcommand(1);

    // node run
    auto* node_cmd = app.add_subcommand("node", "node daemon")->require_subcommand(1);
    auto* node_run = node_cmd->add_subcommand("run", "run a node");
    std::string config_path, name, dispatch, app_addr, cla, default_actions, wire_log;
    Duration scan_period = 0;
    std::size_t queue_cap = 0;
    std::vector<std::string> dial;
    node_run->add_option("--config", config_path, "JSON config file");
    node_run->add_option("--name", name, "node name");
    node_run->add_option("--dispatch", dispatch, "dispatch listener (host:port or unix:path)");
    node_run->add_option("--app", app_addr, "application listener");
    node_run->add_option("--cla", cla, "TCP convergence layer listener");
    node_run->add_option("--default-actions", default_actions, "JSON action list applied at ingest");
    node_run->add_option("--scan-period-ms", scan_period, "expiry scan period");
    node_run->add_option("--queue-cap", queue_cap, "per-subscriber event queue cap");
    node_run->add_option("--dial", dial, "peer CLA address to dial at startup");
    node_run->add_option("--wire-log", wire_log, "JSON-lines wire log path");

    // bdm static|opportunistic|contact
    auto* bdm_cmd = app.add_subcommand("bdm", "reference dispatcher modules")->require_subcommand(1);
    std::string bdm_node = "127.0.0.1:4550", routes_path, plan_path;
    Instant epoch = 0;
    bool single_copy = false, flood = false;
    auto* bdm_static = bdm_cmd->add_subcommand("static", "static route table");
    bdm_static->add_option("--node", bdm_node, "node dispatch address");
    bdm_static->add_option("--routes", routes_path, "route file: 'dest next-hop' per line")->required();
    auto* bdm_opp = bdm_cmd->add_subcommand("opportunistic", "forward to whatever neighbor is up");
    bdm_opp->add_option("--node", bdm_node, "node dispatch address");
    auto* single_flag = bdm_opp->add_flag("--single-copy", single_copy, "one copy, dropped after sending (default)");
    bdm_opp->add_flag("--flood", flood, "a copy to every neighbor")->excludes(single_flag);
    auto* bdm_contact = bdm_cmd->add_subcommand("contact", "earliest-arrival routing over a contact plan");
    bdm_contact->add_option("--node", bdm_node, "node dispatch address");
    bdm_contact->add_option("--plan", plan_path, "plan file: 'from to start-ms end-ms [owlt-ms]' per line")
        ->required();
    bdm_contact->add_option("--epoch-ms", epoch, "wall-clock ms that plan time 0 refers to (default: now)");

    // scenario run
    auto* scenario_cmd = app.add_subcommand("scenario", "scripted multi-node runs")->require_subcommand(1);
    auto* scenario_run = scenario_cmd->add_subcommand("run", "run a scenario file");
    std::string scenario_path, out_dir, cli_path;
    scenario_run->add_option("file", scenario_path, "scenario JSON")->required();
    scenario_run->add_option("--out", out_dir, "directory for wire logs");
    scenario_run->add_option("--cli", cli_path, "bpdx executable for child processes (default: this one)");

    // events tail
    auto* events_cmd = app.add_subcommand("events", "event monitoring")->require_subcommand(1);
    auto* events_tail = events_cmd->add_subcommand("tail", "print events as they are published");
    std::string tail_node = "127.0.0.1:4550";
    std::vector<std::string> topics;
    std::size_t count = 0;
    int timeout_ms = -1;
    events_tail->add_option("--node", tail_node, "node dispatch address");
    events_tail->add_option("--topics", topics, "topics to subscribe to (default: all)")->delimiter(',');
    events_tail->add_option("--count", count, "exit after this many events");
    events_tail->add_option("--timeout-ms", timeout_ms, "exit after this long");

    // conformance write
    auto* conformance_cmd = app.add_subcommand("conformance", "golden wire corpus")->require_subcommand(1);
    auto* conformance_write = conformance_cmd->add_subcommand("write", "regenerate the corpus");
    std::string corpus_dir;
    conformance_write->add_option("dir", corpus_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*node_run) {
            NodeConfig config;
            if (!config_path.empty()) config = load_node_config(config_path);
            if (!name.empty()) config.node_name = name;
            if (!dispatch.empty()) config.dispatch_address = dispatch;
            if (!app_addr.empty()) config.app_address = app_addr;
            if (!cla.empty()) config.cla_address = cla;
            if (!default_actions.empty()) {
                try {
                    config.default_actions = json::parse(default_actions).get<ActionList>();
                } catch (const json::exception& e) {
                    throw Error("bad-config", std::string("default-actions: ") + e.what());
                }
            }
            if (scan_period) config.expiry_scan_period = scan_period;
            if (queue_cap) config.subscriber_queue_cap = queue_cap;
            for (const auto& d : dial) config.dial.push_back(d);
            if (!wire_log.empty()) config.wire_log = wire_log;

            Node node(std::move(config));
            SignalWaiter waiter([&] { node.stop(); });
            std::cout << node.ready_line() << std::endl;
            node.run();
            return 0;
        }

        if (*bdm_cmd) {
            std::unique_ptr<Dispatcher> dispatcher;
            if (*bdm_static) dispatcher = std::make_unique<StaticDispatcher>(load_route_table(routes_path));
            if (*bdm_opp) dispatcher = std::make_unique<OpportunisticDispatcher>(!flood);
            if (*bdm_contact)
                dispatcher = std::make_unique<ContactDispatcher>(load_contact_plan(plan_path),
                                                                 epoch ? epoch : wall_clock_ms());
            std::atomic<bool> stop{false};
            SignalWaiter waiter([&] { stop = true; });
            run_dispatcher(*dispatcher, bdm_node, stop, true);
            return 0;
        }

        if (*scenario_run) {
            RunOptions options;
            options.cli_path = cli_path.empty() ? self_path(argv[0]) : cli_path;
            options.out_dir = out_dir;
            const auto report = run_scenario(load_scenario(scenario_path), options);
            std::cout << format_report(report);
            return report.ok() ? 0 : 1;
        }

        if (*events_tail) {
            Session session(tail_node, "monitor", "tail");
            std::set<Topic> wanted;
            for (const auto& t : topics) wanted.insert(parse_topic(t));
            if (wanted.empty()) wanted.insert(std::begin(kAllTopics), std::end(kAllTopics));
            session.subscribe(wanted);
            const auto deadline = timeout_ms < 0 ? Instant{0} : wall_clock_ms() + static_cast<Instant>(timeout_ms);
            std::size_t printed = 0;
            while (count == 0 || printed < count) {
                int wait = -1;
                if (deadline) {
                    const auto now = wall_clock_ms();
                    if (now >= deadline) break;
                    wait = static_cast<int>(deadline - now);
                }
                const auto event = session.next_event(wait < 0 ? 1000 : wait);
                if (!event) {
                    if (session.closed()) throw Error("connection-closed", "node closed the connection");
                    continue;
                }
                std::cout << json(*event).dump() << std::endl;
                ++printed;
            }
            return 0;
        }
        if (*conformance_write) {
            write_conformance_corpus(corpus_dir);
            return 0;
        }
    } catch (const Error& e) {
        return fail(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
