#include <chrono>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "vc/harness.hpp"

namespace {

using vc::harness::Millis;

Millis seconds(double s) { return Millis{static_cast<long long>(s * 1000.0)}; }

struct Common {
  std::string scenario = "I";
  double scale = 1.0;
  bool baseline = false;
  std::string report = "table";
  std::string out = "vc-run";
  unsigned m_min = 1, m_max = 1;
  double t = 2, push_interval = 1, work_timeout = 60;
  unsigned f = 3;
  std::string runner = "builtin";
  bool cache_app = false;
  std::uint64_t seed = 1;
  std::size_t leechers = 2;

  void add(CLI::App* cmd, bool positional) {
    if (positional) {
      cmd->add_option("scenario", scenario, "I, II, III or IV")->required()->check(CLI::IsMember({"I", "II", "III", "IV"}));
    } else {
      cmd->add_option("--scenario", scenario, "I, II, III or IV")->capture_default_str()->check(
          CLI::IsMember({"I", "II", "III", "IV"}));
    }
    cmd->add_option("--scale", scale, "Shrink ranges and part counts, in (0, 1]")->capture_default_str();
    cmd->add_flag("--baseline", baseline, "Also time a sequential run of every part");
    cmd->add_option("--report", report, "table or rows")->capture_default_str()->check(CLI::IsMember({"table", "rows"}));
    cmd->add_option("--out", out, "Run directory (wiped first)")->capture_default_str();
    cmd->add_option("--m-min", m_min)->capture_default_str();
    cmd->add_option("--m-max", m_max)->capture_default_str();
    cmd->add_option("--ping-interval", t, "Tracker heartbeat period, seconds")->capture_default_str();
    cmd->add_option("--max-misses", f)->capture_default_str();
    cmd->add_option("--push-interval", push_interval, "Seconds")->capture_default_str();
    cmd->add_option("--work-timeout", work_timeout, "Seconds before a part is reissued")->capture_default_str();
    cmd->add_option("--runner", runner, "builtin or exec:COMMAND")->capture_default_str();
    cmd->add_option("--cache-app", cache_app)->capture_default_str();
    cmd->add_option("--seed", seed, "Seed for fault decisions")->capture_default_str();
    cmd->add_option("--leechers", leechers, "Scenario I: number of leechers")->capture_default_str()->check(
        CLI::Range(1, 26));
  }

  vc::harness::ScenarioConfig config() const {
    auto cfg = vc::harness::scenario_config(vc::harness::parse_scenario(scenario), scale, leechers);
    cfg.baseline = baseline;
    cfg.out_dir = out;
    cfg.policy = vc::metrics::ValidationPolicy{m_min, m_max};
    cfg.t = seconds(t);
    cfg.f = f;
    cfg.push_interval = seconds(push_interval);
    cfg.work_timeout = seconds(work_timeout);
    cfg.runner = runner;
    cfg.cache_app = cache_app;
    cfg.seed = seed;
    return cfg;
  }
};

int finish(const vc::harness::RunResult& r, const std::string& format) {
  using vc::harness::ReportFormat;
  std::cout << vc::harness::emit_report(r.report, format == "rows" ? ReportFormat::Rows : ReportFormat::Table);
  if (r.mute_removed_after) std::cout << "mute: app expired after " << *r.mute_removed_after << " s\n";
  if (r.mute_leech_clean_after) std::cout << "mute: leech directories gone after " << *r.mute_leech_clean_after << " s\n";
  return r.report.completed ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Runs volunteer-computing scenarios as local processes"};
  cli.require_subcommand(1);
  auto* scenario = cli.add_subcommand("scenario", "Scenario runs");
  scenario->require_subcommand(1);
  std::string log_level = "warn";
  cli.add_option("--log-level", log_level)->capture_default_str();

  Common run_opts;
  auto* run = scenario->add_subcommand("run", "Run a scenario without faults");
  run_opts.add(run, true);

  Common fault_opts;
  std::string kind, node;
  vc::harness::Fault fault;
  double at = 1.0;
  auto* fault_cmd = scenario->add_subcommand("fault", "Run a scenario with one fault active");
  fault_opts.add(fault_cmd, false);
  fault_cmd->add_option("--kind", kind, "kill, corrupt or mute")->required()->check(
      CLI::IsMember({"kill", "corrupt", "mute"}));
  fault_cmd->add_option("--node", node, "Target node name")->required();
  fault_cmd->add_option("--at-part", fault.at_part, "kill: parts completed before dying")->capture_default_str();
  fault_cmd->add_option("--rate", fault.rate, "corrupt: fraction of corrupted results")->capture_default_str();
  fault_cmd->add_option("--at", at, "mute: seconds after the first accepted part")->capture_default_str();
  CLI11_PARSE(cli, argc, argv);

  spdlog::set_default_logger(spdlog::stderr_color_mt("vc"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run) return finish(vc::harness::run_scenario(run_opts.config()), run_opts.report);
    using Kind = vc::harness::Fault::Kind;
    fault.kind = kind == "kill" ? Kind::KillLeecher : kind == "corrupt" ? Kind::CorruptResult : Kind::MuteSeeder;
    fault.node = node;
    fault.at = seconds(at);
    return finish(vc::harness::fault_inject(fault_opts.config(), fault), fault_opts.report);
  } catch (const std::exception& e) {
    spdlog::critical("{}", e.what());
    return 1;
  }
}
