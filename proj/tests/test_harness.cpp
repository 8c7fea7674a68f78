#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "vc/harness.hpp"
#include "vc/oracle.hpp"

using namespace vc;
using namespace vc::harness;

TEST_CASE("scale_range") {
  const workloads::RangeSpec a1{3, 2'000'000, 2059};
  const workloads::RangeSpec a2{2'000'001, 3'000'000, 1080};
  CHECK(scale_range(a1, 1.0).lo == 3);
  CHECK(scale_range(a1, 1.0).hi == 2'000'000);
  CHECK(scale_range(a1, 1.0).parts == 2059);
  const auto s = scale_range(a1, 0.1);
  CHECK(s.lo == 3);
  CHECK(s.hi == 200'000);
  CHECK(s.parts == 206);
  const auto t = scale_range(a2, 0.1);
  CHECK(t.lo == 200'001);
  CHECK(t.hi == 300'000);
  CHECK(t.parts == 108);
  CHECK(scale_range(a1, 1e-6).parts == 1);
  // Scaled ranges stay disjoint and partitionable.
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> scale(1e-4, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double k = scale(rng);
    const auto x = scale_range(a1, k), y = scale_range(a2, k);
    CHECK(x.hi < y.lo);
    CHECK_NOTHROW(workloads::partition_range(x.parts <= x.hi - x.lo + 1 ? x : workloads::RangeSpec{x.lo, x.hi, 1}));
  }
}

TEST_CASE("prebuilt rosters") {
  auto i = scenario_config(Scenario::I);
  CHECK_NOTHROW(i.check());
  REQUIRE(i.apps.size() == 1);
  CHECK(i.apps[0].range.parts == 2059);
  CHECK(i.nodes.size() == 3);
  CHECK(scenario_config(Scenario::I, 1.0, 3).nodes.size() == 4);

  auto ii = scenario_config(Scenario::II);
  CHECK_NOTHROW(ii.check());
  REQUIRE(ii.apps.size() == 2);
  CHECK(ii.apps[1].range.lo == 2'000'001);
  CHECK(ii.apps[1].range.parts == 1080);
  CHECK(scenario_config(Scenario::III).nodes.size() == 3);
  auto iv = scenario_config(Scenario::IV);
  CHECK(iv.nodes.size() == 6);
  for (const auto& n : iv.nodes) CHECK(n.leeches.size() + n.seeds.size() >= 2);

  CHECK(parse_scenario("IV") == Scenario::IV);
  CHECK(to_string(Scenario::II) == "II");
  CHECK_THROWS(parse_scenario("V"));

  auto bad = ii;
  bad.nodes[0].seeds.push_back("nope");
  CHECK_THROWS(bad.check());
  bad = ii;
  bad.nodes.push_back(bad.nodes[0]);
  CHECK_THROWS(bad.check());
  bad = ii;
  bad.scale = 0.0;
  CHECK_THROWS(bad.check());
  bad = ii;
  bad.nodes[2].seeds.push_back("A1");
  CHECK_THROWS(bad.check());
}

TEST_CASE("rows round trip") {
  ScenarioReport r;
  r.scenario = "I";
  r.completed = true;
  r.wall_seconds = 4.3125;
  r.baseline_seconds = 0.37;
  r.diagnostic = "tab\there\nnewline \\ backslash";
  r.clients = {{"X", "A1", 1031, 0.0123456789, 0.2, 8'290'000}, {"Y", "A1", 1028, 1.0 / 3.0, 0.1, 8'270'000}};
  r.apps = {{"A1", "ab12", 2059, 2059, 2059, 6.35, 16'560'000, 1, 2, false},
            {"A2", "cd34", 1080, 0, 0, std::nullopt, 0, 0, 0, true}};
  CHECK(parse_rows(emit_report(r, ReportFormat::Rows)) == r);
  CHECK(r.speedup() == doctest::Approx(0.37 / 4.3125));
  CHECK(r.clients[0].megabytes() == doctest::Approx(8.29));
}

TEST_CASE("empty report prints headers only") {
  ScenarioReport r;
  r.scenario = "I";
  const auto table = emit_report(r, ReportFormat::Table);
  CHECK(table.find("# of cycle") != std::string::npos);
  CHECK(table.find("Size (MB)") != std::string::npos);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  CHECK(parse_rows(emit_report(r, ReportFormat::Rows)) == r);
  CHECK_FALSE(r.speedup().has_value());
}

TEST_CASE("a tiny scenario completes and its report adds up") {
  auto cfg = scenario_config(Scenario::II, 0.002);
  cfg.bin_dir = VC_BIN_DIR;
  cfg.out_dir = std::filesystem::temp_directory_path() / "vc-harness-test";
  cfg.baseline = true;
  cfg.push_interval = std::chrono::milliseconds{200};
  const auto result = run_scenario(cfg);
  INFO(emit_report(result.report, ReportFormat::Table));
  REQUIRE(result.report.completed);
  for (const auto& app : result.apps) {
    const auto* summary = &result.report.apps[0];
    for (const auto& s : result.report.apps) {
      if (s.app == app.name) summary = &s;
    }
    std::uint64_t cycles = 0, bytes = 0;
    for (const auto& c : result.report.clients) {
      if (c.app == app.name) {
        cycles += c.cycles;
        bytes += c.bytes;
      }
    }
    CHECK(cycles == app.units.size());
    CHECK(summary->parts == app.units.size());
    CHECK(summary->accepted == app.units.size());
    CHECK(summary->p == app.units.size());
    CHECK(summary->d == bytes);
    const auto accepted = result.accepted(app.name);
    CHECK(accepted == result.baseline.at(app.name));
    for (const auto& u : app.units) {
      CHECK(accepted.at(u.index) == workloads::canonical_payload(oracle::primes_between(u.lo, u.hi)));
    }
  }
  std::filesystem::remove_all(cfg.out_dir);
}
