#include <chrono>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "signals.hpp"
#include "vc/tracker.hpp"

namespace {

std::chrono::milliseconds seconds(double s) { return std::chrono::milliseconds{static_cast<long long>(s * 1000.0)}; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Applications-list tracker for volunteer agents"};
  cli.require_subcommand(1);
  auto* serve = cli.add_subcommand("serve", "Run the tracker");

  vc::tracker::ServerConfig cfg;
  double ping_interval = 5, push_interval = 10, cache_ttl = 10, ping_timeout = 1;
  unsigned max_misses = 3;
  std::string blocklist, log_level = "info";
  serve->add_option("--port", cfg.port, "Listen port (0 picks a free one)")->capture_default_str();
  serve->add_option("--data-dir", cfg.data_dir, "Directory for applist.v1 and tracker.port")->capture_default_str();
  serve->add_option("--ping-interval", ping_interval, "Heartbeat period t, seconds")->capture_default_str();
  serve->add_option("--max-misses", max_misses, "Missed rounds f before a host is removed")->capture_default_str();
  serve->add_option("--push-interval", push_interval, "Minimum seconds between list pushes")->capture_default_str();
  serve->add_option("--list-cache-ttl", cache_ttl, "Seconds a list snapshot is reused for replies")
      ->capture_default_str();
  serve->add_option("--ping-timeout", ping_timeout, "Seconds to wait for a PONG")->capture_default_str();
  serve->add_option("--blocklist", blocklist, "File with one node id per line");
  serve->add_option("--val-hook", cfg.val_hook, "Command run as CMD NODE ADDR MISSES; exit 1 vetoes the host");
  serve->add_option("--log-level", log_level)->capture_default_str();
  CLI11_PARSE(cli, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("tracker"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    cfg.tracker.liveness.t = seconds(ping_interval);
    cfg.tracker.liveness.f = max_misses;
    cfg.tracker.liveness.check();
    cfg.tracker.push_interval = seconds(push_interval);
    cfg.tracker.init_cache_ttl = seconds(cache_ttl);
    cfg.ping_timeout = seconds(ping_timeout);
    if (!blocklist.empty()) cfg.tracker.blocklist = vc::tracker::read_blocklist(blocklist);

    const auto signals = block_shutdown_signals();
    vc::tracker::TrackerServer server(cfg);
    const int sig = wait_for_shutdown(signals);
    spdlog::info("signal {} received, shutting down", sig);
    server.stop();
  } catch (const std::exception& e) {
    spdlog::critical("{}", e.what());
    return 1;
  }
  return 0;
}
