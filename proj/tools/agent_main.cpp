#include <chrono>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "signals.hpp"
#include "vc/agent/agent.hpp"

namespace {

std::chrono::milliseconds seconds(double s) { return std::chrono::milliseconds{static_cast<long long>(s * 1000.0)}; }

}  // namespace

int main(int argc, char** argv) {
  using namespace vc;
  CLI::App cli{"Volunteer agent: seeds its own applications and leeches others"};
  cli.require_subcommand(1);
  auto* run = cli.add_subcommand("run", "Run the agent");

  std::string tracker = "127.0.0.1:6888", runner = "builtin", log_level = "info";
  std::vector<std::string> seeds, leech, deny;
  agent::AgentConfig cfg;
  unsigned m_min = 1, m_max = 1;
  double work_timeout = 0, heartbeat = 2, io_timeout = 5;
  bool cache_app = false;
  std::uint64_t die_after = 0;

  run->add_option("--tracker", tracker, "Tracker HOST:PORT")->capture_default_str();
  run->add_option("--peer-port", cfg.peer_port, "Port serving peers (0 picks a free one)")->capture_default_str();
  run->add_option("--data-dir", cfg.data_dir, "Root of Seed/ and Leech/")->capture_default_str();
  run->add_option("--seed", seeds, "APPFILE:MANIFEST to offer");
  run->add_option("--leech", leech, "'all' or application ids to work on");
  run->add_option("--m-min", m_min, "Records required before voting")->capture_default_str();
  run->add_option("--m-max", m_max, "Maximum records per part")->capture_default_str();
  run->add_option("--work-timeout", work_timeout, "Seconds before a part is reissued (0: 10x published w)");
  run->add_option("--cache-app", cache_app, "Keep the application file between cycles")->capture_default_str();
  run->add_option("--deny", deny, "Node ids whose messages are dropped");
  run->add_option("--runner", runner, "'builtin' or 'exec:COMMAND'")->capture_default_str();
  run->add_option("--heartbeat", heartbeat, "Seconds between status updates")->capture_default_str();
  run->add_option("--io-timeout", io_timeout, "Seconds before a peer exchange is abandoned")->capture_default_str();
  run->add_option("--corrupt-rate", cfg.leech_options.corrupt_rate, "Fault: fraction of results to corrupt")
      ->check(CLI::Range(0.0, 1.0));
  run->add_option("--fault-seed", cfg.leech_options.fault_seed, "Seed for fault decisions");
  run->add_option("--die-after-cycles", die_after, "Fault: SIGKILL self on receiving part K+1 (0: off)");
  run->add_option("--log-level", log_level)->capture_default_str();
  CLI11_PARSE(cli, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("agent"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    cfg.tracker = net::Endpoint::parse(tracker);
    for (const auto& s : seeds) cfg.seeds.push_back(agent::SeedSpec::parse(s));
    for (const auto& l : leech) {
      if (l == "all") {
        cfg.leech_all = true;
      } else {
        cfg.leech.insert(protocol::AppId::parse(l));
      }
    }
    for (const auto& d : deny) cfg.deny.insert(protocol::NodeId::parse(d));
    cfg.policy = metrics::ValidationPolicy{m_min, m_max};
    if (work_timeout > 0) cfg.work_timeout = seconds(work_timeout);
    cfg.runner = runner;
    cfg.heartbeat = seconds(heartbeat);
    cfg.io_timeout = seconds(io_timeout);
    cfg.leech_options.cache_app = cache_app;
    if (die_after > 0) cfg.leech_options.die_after_cycles = die_after;

    const auto signals = block_shutdown_signals();
    agent::Agent a(cfg);
    a.start();
    const int sig = wait_for_shutdown(signals);
    spdlog::info("signal {} received, shutting down", sig);
    a.stop();
  } catch (const std::exception& e) {
    spdlog::critical("{}", e.what());
    return 1;
  }
  return 0;
}
