#pragma once

// Runs a tracker and a roster of agents as local processes over loopback,
// waits for every application to finish and turns the agents' event logs
// into per-client reports.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vc/events.hpp"
#include "vc/metrics.hpp"
#include "vc/protocol.hpp"
#include "vc/workloads.hpp"

namespace vc::harness {

namespace fs = std::filesystem;
using Millis = std::chrono::milliseconds;

enum class Scenario { I, II, III, IV, Custom };
std::string_view to_string(Scenario s);
Scenario parse_scenario(std::string_view text);

struct AppSpec {
  std::string name;
  workloads::RangeSpec range;
};

struct NodeSpec {
  std::string name;
  std::vector<std::string> seeds;    // app names
  std::vector<std::string> leeches;  // app names
  double corrupt_rate = 0.0;
  std::optional<std::uint64_t> die_after_cycles;
};

struct Fault {
  enum class Kind { None, KillLeecher, CorruptResult, MuteSeeder };
  Kind kind = Kind::None;
  std::string node;          // target node name
  std::uint64_t at_part = 0; // kill: cycles completed before dying
  double rate = 1.0;         // corrupt
  Millis at{0};              // mute: delay after the first accepted part
};

struct ScenarioConfig {
  Scenario scenario = Scenario::Custom;
  std::vector<AppSpec> apps;
  std::vector<NodeSpec> nodes;
  double scale = 1.0;
  metrics::ValidationPolicy policy{1, 1};
  Millis t{2000};
  unsigned f = 3;
  Millis push_interval{1000};
  Millis ping_timeout{1000};
  std::optional<Millis> work_timeout = Millis{60000};
  Millis io_timeout{3000};
  std::string runner = "builtin";
  bool cache_app = false;
  bool baseline = false;
  std::uint64_t seed = 1;
  fs::path out_dir = "vc-run";
  fs::path bin_dir;  // holds the tracker and agent executables
  /// Abort when no part is accepted for this long; default 10x work timeout.
  std::optional<Millis> watchdog;
  Millis deadline{std::chrono::minutes{30}};

  void check() const;
};

/// lo' = max(3, round((lo-1)s)+1), hi' = round(hi s), parts' = max(1, round(parts s)).
workloads::RangeSpec scale_range(const workloads::RangeSpec& r, double scale);

/// Prebuilt rosters. I: S seeds A1, X and Y (or `leechers` nodes) leech it. II: X seeds A1 and
/// leeches A2, Z seeds A2 and leeches A1, Y leeches both. III: as II with
/// every node leeching both. IV: III plus X2, Y2, Z2 leeching both.
ScenarioConfig scenario_config(Scenario s, double scale = 1.0, std::size_t leechers = 2);

struct ClientRow {
  std::string client;
  std::string app;
  std::uint64_t cycles = 0;
  double hours = 0.0;
  double avg_seconds = 0.0;
  std::uint64_t bytes = 0;  // sum of reported d
  double megabytes() const { return static_cast<double>(bytes) / 1e6; }
  bool operator==(const ClientRow&) const = default;
};

struct AppSummary {
  std::string app;
  std::string id;
  std::uint64_t parts = 0;
  std::uint64_t accepted = 0;
  std::uint64_t p = 0;
  std::optional<double> w;
  std::uint64_t d = 0;
  std::uint64_t reissues = 0;
  std::uint64_t rejected = 0;
  bool dropped = false;
  bool operator==(const AppSummary&) const = default;
};

struct ScenarioReport {
  std::string scenario;
  std::vector<ClientRow> clients;
  std::vector<AppSummary> apps;
  double wall_seconds = 0.0;
  std::optional<double> baseline_seconds;
  bool completed = false;
  std::string diagnostic;

  std::optional<double> speedup() const;
  bool operator==(const ScenarioReport&) const = default;
};

enum class ReportFormat { Table, Rows };
std::string emit_report(const ScenarioReport& report, ReportFormat format);
/// Inverse of the rows format.
ScenarioReport parse_rows(std::string_view text);

struct NodeInfo {
  std::string name;
  fs::path data_dir;
  std::string id;  // NodeId hex
  bool killed = false;
};

struct AppInfo {
  std::string name;
  protocol::AppId id;
  std::string seeder;  // node name
  std::vector<workloads::WorkUnit> units;
  std::uint64_t app_file_bytes = 0;
};

/// Everything a caller needs to inspect a finished run.
struct RunResult {
  ScenarioReport report;
  std::vector<NodeInfo> nodes;
  std::vector<AppInfo> apps;
  fs::path tracker_dir;
  /// Baseline payloads per app name, when a baseline ran.
  std::map<std::string, std::map<std::uint64_t, std::string>> baseline;
  // Mute fault timings, seconds after the seeder was stopped.
  std::optional<double> mute_removed_after;
  std::optional<double> mute_leech_clean_after;

  const NodeInfo& node(std::string_view name) const;
  const AppInfo& app(std::string_view name) const;
  std::vector<events::Event> events(std::string_view node) const;
  /// Accepted payloads held by the app's seeder.
  std::map<std::uint64_t, std::string> accepted(std::string_view app) const;
};

RunResult run_scenario(const ScenarioConfig& cfg);
RunResult fault_inject(ScenarioConfig cfg, const Fault& fault);

/// Computes the report from event logs and the tracker's persisted list.
ScenarioReport build_report(const ScenarioConfig& cfg, const std::vector<NodeInfo>& nodes,
                            const std::vector<AppInfo>& apps, const fs::path& tracker_dir);

/// Runs every part of every app one after another with the configured
/// runner. Returns elapsed seconds.
double run_baseline(const ScenarioConfig& cfg, const std::vector<AppInfo>& apps, const fs::path& work_dir,
                    std::map<std::string, std::map<std::uint64_t, std::string>>& out);

}  // namespace vc::harness
