#include "vc/harness.hpp"

#include <signal.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "vc/agent/leecher.hpp"
#include "vc/fsutil.hpp"
#include "vc/process.hpp"
#include "vc/tracker.hpp"

namespace vc::harness {

namespace {

using SteadyClock = std::chrono::steady_clock;

const workloads::RangeSpec kApp1{3, 2'000'000, 2059};
const workloads::RangeSpec kApp2{2'000'001, 3'000'000, 1080};

std::string secs(Millis m) { return fmt::format("{}", static_cast<double>(m.count()) / 1000.0); }

std::string tail_lines(const fs::path& path, std::size_t n) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  std::string out;
  for (std::size_t i = lines.size() > n ? lines.size() - n : 0; i < lines.size(); ++i) out += lines[i] + "\n";
  return out;
}

std::optional<tracker::ApplicationsList> read_applist(const fs::path& tracker_dir) {
  try {
    return tracker::ApplicationsList::deserialize(fsutil::read_file(tracker_dir / "applist.v1"));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

const tracker::AppEntry* find_entry(const tracker::ApplicationsList& list, const std::string& host,
                                    const protocol::AppId& app) {
  return list.find(protocol::NodeId::parse(host), app);
}

std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\t') {
      out += "\\t";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      const char n = s[++i];
      out += n == 't' ? '\t' : n == 'n' ? '\n' : n;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.emplace_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

NodeSpec node(std::string name, std::vector<std::string> seeds, std::vector<std::string> leeches) {
  NodeSpec n;
  n.name = std::move(name);
  n.seeds = std::move(seeds);
  n.leeches = std::move(leeches);
  return n;
}

struct Agents {
  process::Child tracker;
  std::vector<process::Child> nodes;

  void shutdown() {
    for (auto& c : nodes) {
      c.signal(SIGCONT);
      c.signal(SIGTERM);
    }
    for (auto& c : nodes) c.terminate(Millis{10000});
    tracker.terminate(Millis{5000});
  }
};

}  // namespace

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::I:
      return "I";
    case Scenario::II:
      return "II";
    case Scenario::III:
      return "III";
    case Scenario::IV:
      return "IV";
    case Scenario::Custom:
      return "custom";
  }
  return "custom";
}

Scenario parse_scenario(std::string_view text) {
  for (auto s : {Scenario::I, Scenario::II, Scenario::III, Scenario::IV, Scenario::Custom}) {
    if (text == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown scenario '" + std::string(text) + "'");
}

void ScenarioConfig::check() const {
  if (!(scale > 0.0 && scale <= 1.0)) throw std::invalid_argument("scale must be in (0, 1]");
  policy.check();
  if (apps.empty()) throw std::invalid_argument("scenario has no applications");
  std::set<std::string> names;
  for (const auto& a : apps) {
    if (!names.insert(a.name).second) throw std::invalid_argument("duplicate app " + a.name);
  }
  std::set<std::string> node_names;
  std::map<std::string, int> seeders;
  for (const auto& n : nodes) {
    if (!node_names.insert(n.name).second) throw std::invalid_argument("duplicate node " + n.name);
    for (const auto& s : n.seeds) {
      if (!names.count(s)) throw std::invalid_argument("node " + n.name + " seeds unknown app " + s);
      ++seeders[s];
    }
    for (const auto& l : n.leeches) {
      if (!names.count(l)) throw std::invalid_argument("node " + n.name + " leeches unknown app " + l);
    }
  }
  for (const auto& a : apps) {
    if (seeders[a.name] != 1) throw std::invalid_argument("app " + a.name + " needs exactly one seeder");
  }
}

workloads::RangeSpec scale_range(const workloads::RangeSpec& r, double scale) {
  workloads::RangeSpec out;
  out.lo = std::max<std::uint64_t>(3, static_cast<std::uint64_t>(std::llround(static_cast<double>(r.lo - 1) * scale)) + 1);
  out.hi = static_cast<std::uint64_t>(std::llround(static_cast<double>(r.hi) * scale));
  out.parts = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::llround(static_cast<double>(r.parts) * scale)));
  return out;
}

ScenarioConfig scenario_config(Scenario s, double scale, std::size_t leechers) {
  ScenarioConfig cfg;
  cfg.scenario = s;
  cfg.scale = scale;
  switch (s) {
    case Scenario::I:
      cfg.apps = {{"A1", kApp1}};
      cfg.nodes = {node("S", {"A1"}, {})};
      for (std::size_t i = 0; i < leechers; ++i) {
        cfg.nodes.push_back(node(i < 2 ? std::string(1, "XY"[i]) : "L" + std::to_string(i + 1), {}, {"A1"}));
      }
      break;
    case Scenario::II:
      cfg.apps = {{"A1", kApp1}, {"A2", kApp2}};
      cfg.nodes = {node("X", {"A1"}, {"A2"}), node("Y", {}, {"A1", "A2"}), node("Z", {"A2"}, {"A1"})};
      break;
    case Scenario::III:
    case Scenario::IV:
      cfg.apps = {{"A1", kApp1}, {"A2", kApp2}};
      cfg.nodes = {node("X", {"A1"}, {"A1", "A2"}), node("Y", {}, {"A1", "A2"}), node("Z", {"A2"}, {"A1", "A2"})};
      if (s == Scenario::IV) {
        for (const char* extra : {"X2", "Y2", "Z2"}) cfg.nodes.push_back(node(extra, {}, {"A1", "A2"}));
      }
      break;
    case Scenario::Custom:
      break;
  }
  return cfg;
}

std::optional<double> ScenarioReport::speedup() const {
  if (!baseline_seconds || wall_seconds <= 0.0) return std::nullopt;
  return *baseline_seconds / wall_seconds;
}

// ---------------------------------------------------------------------------
// Reports

std::string emit_report(const ScenarioReport& report, ReportFormat format) {
  std::string out;
  if (format == ReportFormat::Table) {
    out += fmt::format("Scenario {}\n", report.scenario);
    out += fmt::format("{:<8} {:<6} {:>10} {:>10} {:>10} {:>10}\n", "Client", "App", "# of cycle", "Time (h)",
                       "Avg (s)", "Size (MB)");
    for (const auto& c : report.clients) {
      out += fmt::format("{:<8} {:<6} {:>10} {:>10.4f} {:>10.4f} {:>10.2f}\n", c.client, c.app, c.cycles, c.hours,
                         c.avg_seconds, c.megabytes());
    }
    out += fmt::format("\n{:<6} {:>8} {:>8} {:>8} {:>10} {:>10} {:>8} {:>8} {:>7}\n", "App", "Parts", "Accepted",
                       "p", "w (s)", "d (MB)", "Reissued", "Rejected", "Dropped");
    for (const auto& a : report.apps) {
      out += fmt::format("{:<6} {:>8} {:>8} {:>8} {:>10} {:>10.2f} {:>8} {:>8} {:>7}\n", a.app, a.parts, a.accepted,
                         a.p, a.w ? fmt::format("{:.4f}", *a.w) : "-", static_cast<double>(a.d) / 1e6, a.reissues,
                         a.rejected, a.dropped ? "yes" : "no");
    }
    if (report.wall_seconds > 0.0 || report.baseline_seconds) {
      out += fmt::format("\nwall time {:.2f} s", report.wall_seconds);
      if (report.baseline_seconds) {
        out += fmt::format(", sequential {:.2f} s, speedup {:.2f}", *report.baseline_seconds, *report.speedup());
      }
      out += "\n";
    }
    if (!report.diagnostic.empty()) out += "\n" + report.diagnostic;
    return out;
  }

  out += fmt::format("scenario\t{}\n", escape(report.scenario));
  out += fmt::format("completed\t{}\n", report.completed ? 1 : 0);
  out += fmt::format("wall_seconds\t{}\n", report.wall_seconds);
  if (report.baseline_seconds) out += fmt::format("baseline_seconds\t{}\n", *report.baseline_seconds);
  if (!report.diagnostic.empty()) out += fmt::format("diagnostic\t{}\n", escape(report.diagnostic));
  for (const auto& c : report.clients) {
    const auto key = fmt::format("client\t{}\t{}", escape(c.client), escape(c.app));
    out += fmt::format("{}\tcycles\t{}\n", key, c.cycles);
    out += fmt::format("{}\thours\t{}\n", key, c.hours);
    out += fmt::format("{}\tavg_seconds\t{}\n", key, c.avg_seconds);
    out += fmt::format("{}\tbytes\t{}\n", key, c.bytes);
  }
  for (const auto& a : report.apps) {
    const auto key = fmt::format("app\t{}", escape(a.app));
    out += fmt::format("{}\tid\t{}\n", key, a.id);
    out += fmt::format("{}\tparts\t{}\n", key, a.parts);
    out += fmt::format("{}\taccepted\t{}\n", key, a.accepted);
    out += fmt::format("{}\tp\t{}\n", key, a.p);
    if (a.w) out += fmt::format("{}\tw\t{}\n", key, *a.w);
    out += fmt::format("{}\td\t{}\n", key, a.d);
    out += fmt::format("{}\treissues\t{}\n", key, a.reissues);
    out += fmt::format("{}\trejected\t{}\n", key, a.rejected);
    out += fmt::format("{}\tdropped\t{}\n", key, a.dropped ? 1 : 0);
  }
  return out;
}

ScenarioReport parse_rows(std::string_view text) {
  ScenarioReport r;
  auto client = [&](const std::string& name, const std::string& app) -> ClientRow& {
    for (auto& c : r.clients) {
      if (c.client == name && c.app == app) return c;
    }
    auto& c = r.clients.emplace_back();
    c.client = name;
    c.app = app;
    return c;
  };
  auto app = [&](const std::string& name) -> AppSummary& {
    for (auto& a : r.apps) {
      if (a.app == name) return a;
    }
    r.apps.emplace_back().app = name;
    return r.apps.back();
  };
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    const auto bad = [&] { return std::invalid_argument("malformed report row: " + line); };
    if (f[0] == "scenario" && f.size() == 2) {
      r.scenario = unescape(f[1]);
    } else if (f[0] == "completed" && f.size() == 2) {
      r.completed = f[1] == "1";
    } else if (f[0] == "wall_seconds" && f.size() == 2) {
      r.wall_seconds = std::stod(f[1]);
    } else if (f[0] == "baseline_seconds" && f.size() == 2) {
      r.baseline_seconds = std::stod(f[1]);
    } else if (f[0] == "diagnostic" && f.size() == 2) {
      r.diagnostic = unescape(f[1]);
    } else if (f[0] == "client" && f.size() == 5) {
      auto& c = client(unescape(f[1]), unescape(f[2]));
      if (f[3] == "cycles") {
        c.cycles = std::stoull(f[4]);
      } else if (f[3] == "hours") {
        c.hours = std::stod(f[4]);
      } else if (f[3] == "avg_seconds") {
        c.avg_seconds = std::stod(f[4]);
      } else if (f[3] == "bytes") {
        c.bytes = std::stoull(f[4]);
      } else {
        throw bad();
      }
    } else if (f[0] == "app" && f.size() == 4) {
      auto& a = app(unescape(f[1]));
      const auto& k = f[2];
      const auto& v = f[3];
      if (k == "id") {
        a.id = v;
      } else if (k == "parts") {
        a.parts = std::stoull(v);
      } else if (k == "accepted") {
        a.accepted = std::stoull(v);
      } else if (k == "p") {
        a.p = std::stoull(v);
      } else if (k == "w") {
        a.w = std::stod(v);
      } else if (k == "d") {
        a.d = std::stoull(v);
      } else if (k == "reissues") {
        a.reissues = std::stoull(v);
      } else if (k == "rejected") {
        a.rejected = std::stoull(v);
      } else if (k == "dropped") {
        a.dropped = v == "1";
      } else {
        throw bad();
      }
    } else {
      throw bad();
    }
  }
  return r;
}

ScenarioReport build_report(const ScenarioConfig& cfg, const std::vector<NodeInfo>& nodes,
                            const std::vector<AppInfo>& apps, const fs::path& tracker_dir) {
  ScenarioReport report;
  report.scenario = std::string(to_string(cfg.scenario));
  std::map<std::string, std::string> app_name;
  for (const auto& a : apps) app_name[a.id.hex()] = a.name;

  std::map<std::string, std::uint64_t> bytes_per_app;
  for (const auto& node : nodes) {
    const auto log = events::read_log(node.data_dir / "events.log");
    for (const auto& a : apps) {
      const auto hex = a.id.hex();
      ClientRow row{node.name, a.name};
      std::optional<double> first, last;
      double seconds = 0.0;
      bool touched = false;
      for (const auto& e : log) {
        if (e.app != hex) continue;
        if (e.event == "recv_app" || e.event == "recv_data") {
          touched = true;
          if (!first || e.timestamp < *first) first = e.timestamp;
        } else if (e.event == "cycle") {
          ++row.cycles;
          row.bytes += e.bytes.value_or(0);
          seconds += e.seconds.value_or(0.0);
          if (!last || e.timestamp > *last) last = e.timestamp;
        }
      }
      if (!touched && row.cycles == 0) continue;
      if (first && last && *last > *first) row.hours = (*last - *first) / 3600.0;
      if (row.cycles > 0) row.avg_seconds = seconds / static_cast<double>(row.cycles);
      bytes_per_app[a.name] += row.bytes;
      report.clients.push_back(row);
    }
  }

  const auto list = read_applist(tracker_dir);
  for (const auto& a : apps) {
    AppSummary s;
    s.app = a.name;
    s.id = a.id.hex();
    s.parts = a.units.size();
    s.d = bytes_per_app[a.name];
    const auto seeder =
        std::find_if(nodes.begin(), nodes.end(), [&](const NodeInfo& n) { return n.name == a.seeder; });
    if (seeder != nodes.end()) {
      std::set<std::uint64_t> accepted;
      for (const auto& e : events::read_log(seeder->data_dir / "events.log")) {
        if (e.app != s.id) continue;
        if (e.event == "accept" && e.part) accepted.insert(*e.part);
        if (e.event == "reissue") ++s.reissues;
        if (e.event == "reject") ++s.rejected;
      }
      s.accepted = accepted.size();
      const tracker::AppEntry* entry = list && !seeder->id.empty() ? find_entry(*list, seeder->id, a.id) : nullptr;
      if (entry) {
        s.p = entry->announcement.metrics.p;
        s.w = entry->announcement.metrics.w;
      } else {
        s.dropped = true;
      }
    }
    report.apps.push_back(s);
  }
  return report;
}

// ---------------------------------------------------------------------------
// RunResult

const NodeInfo& RunResult::node(std::string_view name) const {
  for (const auto& n : nodes) {
    if (n.name == name) return n;
  }
  throw std::out_of_range("no node " + std::string(name));
}

const AppInfo& RunResult::app(std::string_view name) const {
  for (const auto& a : apps) {
    if (a.name == name) return a;
  }
  throw std::out_of_range("no app " + std::string(name));
}

std::vector<events::Event> RunResult::events(std::string_view name) const {
  return events::read_log(node(name).data_dir / "events.log");
}

std::map<std::uint64_t, std::string> RunResult::accepted(std::string_view name) const {
  const auto& a = app(name);
  const auto dir = node(a.seeder).data_dir / "Seed" / a.id.hex() / "result";
  std::map<std::uint64_t, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto stem = entry.path().filename().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    out[std::stoull(stem)] = fsutil::read_file(entry.path());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Running

double run_baseline(const ScenarioConfig& cfg, const std::vector<AppInfo>& apps, const fs::path& work_dir,
                    std::map<std::string, std::map<std::uint64_t, std::string>>& out) {
  auto runner = agent::make_runner(cfg.runner);
  const std::atomic<bool> never{false};
  struct Prepared {
    const AppInfo* app;
    fs::path app_file;
    std::vector<fs::path> parts;
  };
  std::vector<Prepared> prepared;
  for (const auto& a : apps) {
    const auto dir = work_dir / a.name;
    fs::create_directories(dir);
    Prepared p{&a, dir / "app", {}};
    fsutil::write_file(p.app_file, workloads::prime_app_source(a.name));
    for (const auto& u : a.units) {
      p.parts.push_back(dir / std::to_string(u.index));
      fsutil::write_file(p.parts.back(), workloads::encode_data_part(u));
    }
    prepared.push_back(std::move(p));
  }
  const auto start = SteadyClock::now();
  for (const auto& p : prepared) {
    auto& results = out[p.app->name];
    for (std::size_t i = 0; i < p.parts.size(); ++i) {
      auto payload = runner->run(p.app_file, p.parts[i], never);
      if (!payload) throw std::runtime_error("baseline run failed for " + p.app->name + " part " + std::to_string(i));
      results[p.app->units[i].index] = std::move(*payload);
    }
  }
  return std::chrono::duration<double>(SteadyClock::now() - start).count();
}

RunResult run_scenario(const ScenarioConfig& cfg) { return fault_inject(cfg, Fault{}); }

RunResult fault_inject(ScenarioConfig cfg, const Fault& fault) {
  if (fault.kind == Fault::Kind::KillLeecher || fault.kind == Fault::Kind::CorruptResult ||
      fault.kind == Fault::Kind::MuteSeeder) {
    auto it = std::find_if(cfg.nodes.begin(), cfg.nodes.end(), [&](const NodeSpec& n) { return n.name == fault.node; });
    if (it == cfg.nodes.end()) throw std::invalid_argument("fault targets unknown node " + fault.node);
    if (fault.kind == Fault::Kind::KillLeecher) it->die_after_cycles = fault.at_part;
    if (fault.kind == Fault::Kind::CorruptResult) it->corrupt_rate = fault.rate;
    if (fault.kind == Fault::Kind::MuteSeeder && it->seeds.empty()) {
      throw std::invalid_argument("mute fault needs a seeder, " + fault.node + " seeds nothing");
    }
  }
  cfg.check();

  RunResult result;
  const auto out = fs::absolute(cfg.out_dir);
  fs::remove_all(out);
  for (const char* d : {"apps", "logs", "tracker", "nodes"}) fs::create_directories(out / d);
  auto bin_dir = cfg.bin_dir.empty() ? fs::read_symlink("/proc/self/exe").parent_path() : cfg.bin_dir;
  result.tracker_dir = out / "tracker";

  for (const auto& a : cfg.apps) {
    AppInfo info;
    info.name = a.name;
    info.units = workloads::partition_range(scale_range(a.range, cfg.scale));
    const auto source = workloads::prime_app_source(a.name);
    info.id = protocol::AppId::of_content(source);
    info.app_file_bytes = source.size();
    fsutil::write_file(out / "apps" / (a.name + ".app"), source);
    fsutil::write_file(out / "apps" / (a.name + ".manifest"), workloads::format_manifest(info.units));
    for (const auto& n : cfg.nodes) {
      if (std::find(n.seeds.begin(), n.seeds.end(), a.name) != n.seeds.end()) info.seeder = n.name;
    }
    result.apps.push_back(std::move(info));
  }

  Agents procs;
  std::map<std::string, std::size_t> proc_index;
  const auto work_timeout = cfg.work_timeout.value_or(Millis{300000});
  const auto watchdog = cfg.watchdog.value_or(std::max(Millis{30000}, work_timeout * 10));

  procs.tracker = process::Child::spawn(
      {(bin_dir / "tracker").string(), "serve", "--port", "0", "--data-dir", result.tracker_dir.string(),
       "--ping-interval", secs(cfg.t), "--max-misses", std::to_string(cfg.f), "--push-interval",
       secs(cfg.push_interval), "--list-cache-ttl", secs(std::min(cfg.push_interval, Millis{1000})),
       "--ping-timeout", secs(cfg.ping_timeout)},
      out / "logs" / "tracker.log");
  const auto port_file = result.tracker_dir / "tracker.port";
  for (auto until = SteadyClock::now() + std::chrono::seconds{10}; !fs::exists(port_file);) {
    if (SteadyClock::now() > until || !procs.tracker.running()) {
      procs.shutdown();
      throw std::runtime_error("tracker did not start:\n" + tail_lines(out / "logs" / "tracker.log", 20));
    }
    std::this_thread::sleep_for(Millis{20});
  }
  auto port_text = fsutil::read_file(port_file);
  const std::string tracker_addr = "127.0.0.1:" + std::to_string(std::stoul(port_text));

  const double start_epoch = fsutil::epoch_seconds();
  const auto start = SteadyClock::now();
  for (const auto& n : cfg.nodes) {
    NodeInfo info;
    info.name = n.name;
    info.data_dir = out / "nodes" / n.name;
    fs::create_directories(info.data_dir);
    info.id = protocol::NodeId::random().hex();
    fsutil::write_file(info.data_dir / "node_id", info.id + "\n");
    std::vector<std::string> argv{(bin_dir / "agent").string(),
                                  "run",
                                  "--tracker",
                                  tracker_addr,
                                  "--peer-port",
                                  "0",
                                  "--data-dir",
                                  info.data_dir.string(),
                                  "--m-min",
                                  std::to_string(cfg.policy.m_min),
                                  "--m-max",
                                  std::to_string(cfg.policy.m_max),
                                  "--runner",
                                  cfg.runner,
                                  "--heartbeat",
                                  secs(cfg.t),
                                  "--io-timeout",
                                  secs(cfg.io_timeout),
                                  "--cache-app",
                                  cfg.cache_app ? "true" : "false",
                                  "--fault-seed",
                                  std::to_string(cfg.seed)};
    if (cfg.work_timeout) {
      argv.push_back("--work-timeout");
      argv.push_back(secs(*cfg.work_timeout));
    }
    for (const auto& s : n.seeds) {
      argv.push_back("--seed");
      argv.push_back((out / "apps" / (s + ".app")).string() + ":" + (out / "apps" / (s + ".manifest")).string());
    }
    for (const auto& l : n.leeches) {
      argv.push_back("--leech");
      argv.push_back(result.app(l).id.hex());
    }
    if (n.corrupt_rate > 0.0) {
      argv.push_back("--corrupt-rate");
      argv.push_back(fmt::format("{}", n.corrupt_rate));
    }
    if (n.die_after_cycles) {
      argv.push_back("--die-after-cycles");
      argv.push_back(std::to_string(*n.die_after_cycles));
    }
    proc_index[n.name] = procs.nodes.size();
    procs.nodes.push_back(process::Child::spawn(argv, out / "logs" / (n.name + ".log")));
    result.nodes.push_back(std::move(info));
  }

  auto diagnostic = [&](const std::string& why) {
    std::string d = why + "\n";
    d += "--- tracker ---\n" + tail_lines(out / "logs" / "tracker.log", 15);
    for (const auto& n : result.nodes) d += "--- " + n.name + " ---\n" + tail_lines(out / "logs" / (n.name + ".log"), 15);
    return d;
  };

  // Supervision.
  bool completed = false;
  std::string failure;
  std::size_t last_accepted = 0;
  auto last_progress = SteadyClock::now();
  std::optional<SteadyClock::time_point> first_accept, muted_at;
  const NodeSpec* mute_node = nullptr;
  if (fault.kind == Fault::Kind::MuteSeeder) {
    for (const auto& n : cfg.nodes) {
      if (n.name == fault.node) mute_node = &n;
    }
  }

  while (true) {
    std::this_thread::sleep_for(Millis{100});
    const auto now = SteadyClock::now();
    if (!procs.tracker.running()) {
      failure = "tracker exited";
      break;
    }
    bool lost = false;
    for (auto& n : result.nodes) {
      auto& child = procs.nodes[proc_index[n.name]];
      if (n.killed || child.running()) continue;
      const auto& spec = *std::find_if(cfg.nodes.begin(), cfg.nodes.end(), [&](const NodeSpec& s) { return s.name == n.name; });
      if (spec.die_after_cycles) {
        n.killed = true;
        spdlog::info("node {} died as scheduled", n.name);
      } else {
        failure = "node " + n.name + " exited unexpectedly";
        lost = true;
      }
    }
    if (lost) break;

    std::map<std::string, std::vector<events::Event>> logs;
    for (const auto& n : result.nodes) logs[n.name] = events::read_log(n.data_dir / "events.log");
    std::size_t accepted_total = 0;
    bool all_accepted = true;
    std::map<std::string, std::size_t> accepted_per_app;
    for (const auto& a : result.apps) {
      std::set<std::uint64_t> parts;
      for (const auto& e : logs[a.seeder]) {
        if (e.event == "accept" && e.app == a.id.hex() && e.part) parts.insert(*e.part);
      }
      accepted_per_app[a.name] = parts.size();
      accepted_total += parts.size();
      if (parts.size() < a.units.size()) all_accepted = false;
    }
    if (accepted_total > last_accepted) {
      last_accepted = accepted_total;
      last_progress = now;
    }
    if (accepted_total > 0 && !first_accept) first_accept = now;

    if (mute_node) {
      if (!muted_at && first_accept && now - *first_accept >= fault.at) {
        procs.nodes[proc_index[mute_node->name]].signal(SIGSTOP);
        muted_at = now;
        last_progress = now;
        spdlog::info("muted seeder {}", mute_node->name);
      }
      if (muted_at) {
        const double since = std::chrono::duration<double>(now - *muted_at).count();
        const auto& muted = result.node(mute_node->name);
        if (!result.mute_removed_after) {
          const auto list = read_applist(result.tracker_dir);
          bool present = false;
          if (list) {
            for (const auto& app_name : mute_node->seeds) {
              if (find_entry(*list, muted.id, result.app(app_name).id)) present = true;
            }
          }
          if (list && !present) result.mute_removed_after = since;
        }
        if (result.mute_removed_after) {
          bool clean = true;
          for (const auto& n : result.nodes) {
            if (n.name == mute_node->name) continue;
            for (const auto& app_name : mute_node->seeds) {
              if (fs::exists(n.data_dir / "Leech" / result.app(app_name).id.hex())) clean = false;
            }
          }
          if (clean) {
            result.mute_leech_clean_after = since;
            completed = true;
            break;
          }
        }
        if (since > 60.0) {
          failure = "muted seeder was never expired";
          break;
        }
      } else if (all_accepted) {
        failure = "scenario finished before the seeder could be muted";
        break;
      }
    } else if (all_accepted) {
      const auto list = read_applist(result.tracker_dir);
      bool settled = list.has_value();
      for (const auto& a : result.apps) {
        if (!settled) break;
        const auto* entry = find_entry(*list, result.node(a.seeder).id, a.id);
        if (!entry || entry->announcement.parts_remaining != 0 ||
            entry->totals.runs != accepted_per_app[a.name]) {
          settled = false;
          break;
        }
        for (const auto& n : cfg.nodes) {
          if (std::find(n.leeches.begin(), n.leeches.end(), a.name) == n.leeches.end()) continue;
          if (result.node(n.name).killed) continue;
          const auto& log = logs[n.name];
          const bool done = std::any_of(log.begin(), log.end(), [&](const events::Event& e) {
            return e.event == "done" && e.app == a.id.hex();
          });
          if (!done) {
            settled = false;
            break;
          }
        }
      }
      if (settled) {
        completed = true;
        break;
      }
    }
    if (now - last_progress > watchdog) {
      failure = fmt::format("no part accepted for {} s ({} of parts accepted)",
                            std::chrono::duration_cast<std::chrono::seconds>(watchdog).count(), accepted_total);
      break;
    }
    if (now - start > cfg.deadline) {
      failure = "scenario deadline exceeded";
      break;
    }
  }

  // Wall time: from launch to the last accepted part.
  double last_accept_ts = start_epoch;
  for (const auto& a : result.apps) {
    for (const auto& e : result.events(a.seeder)) {
      if (e.event == "accept") last_accept_ts = std::max(last_accept_ts, e.timestamp);
    }
  }
  procs.shutdown();

  result.report = build_report(cfg, result.nodes, result.apps, result.tracker_dir);
  result.report.completed = completed;
  result.report.wall_seconds = last_accept_ts - start_epoch;
  if (!completed) result.report.diagnostic = diagnostic(failure);

  if (cfg.baseline && completed) {
    result.report.baseline_seconds = run_baseline(cfg, result.apps, out / "baseline", result.baseline);
  }
  return result;
}

}  // namespace vc::harness
