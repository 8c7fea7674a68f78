#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "vc/fsutil.hpp"
#include "vc/net.hpp"
#include "vc/tracker.hpp"

using namespace vc;
using namespace vc::tracker;
using protocol::Message;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

namespace {

struct FakeClock {
  TimePoint t = TimePoint{} + std::chrono::hours(1000);
  NowFn fn() {
    return [this] { return t; };
  }
};

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vc-tracker-" + protocol::NodeId::random().hex());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

protocol::AppAnnouncement ann(const std::string& seed, std::uint64_t parts = 10) {
  protocol::AppAnnouncement a;
  a.app = protocol::AppId::of_content(seed);
  a.part_count = parts;
  a.parts_remaining = parts;
  return a;
}

UpsertApps upsert(const NodeId& host, std::vector<protocol::AppAnnouncement> apps) {
  return UpsertApps{host, "127.0.0.1:7000", std::move(apps), true};
}

std::uint64_t write(Synchronizer& s, Change c) {
  std::vector<Change> batch{std::move(c)};
  return s.write_list(batch);
}

Message hello(const NodeId& n, std::vector<protocol::AppAnnouncement> apps = {}) {
  return Message{n, protocol::Hello{7000, std::move(apps)}};
}

}  // namespace

TEST_CASE("write_list and read_list") {
  FakeClock clock;
  Synchronizer sync({}, clock.fn());
  CHECK(sync.read_list()->revision == 0);
  CHECK(sync.read_list()->entries.empty());
  CHECK(sync.write_list({}) == 0);

  const auto h = NodeId::random();
  CHECK(write(sync, upsert(h, {ann("a"), ann("b")})) == 1);
  auto snap = sync.read_list();
  REQUIRE(snap->entries.size() == 2);
  const auto* e = snap->find(h, protocol::AppId::of_content("a"));
  REQUIRE(e);
  CHECK(e->announcement.address == "127.0.0.1:7000");
  CHECK(e->announcement.host == h);
  CHECK(e->registered_at == clock.t);

  // Timestamp refresh: last_update advances, revision stays.
  clock.t += 5s;
  CHECK(write(sync, RefreshHost{h}) == 1);
  e = sync.read_list()->find(h, protocol::AppId::of_content("a"));
  CHECK(e->last_update == clock.t);
  CHECK(e->last_update >= e->registered_at);

  // Re-offering the same apps changes nothing.
  CHECK(write(sync, upsert(h, {ann("a"), ann("b")})) == 1);
  // Offering a subset drops the rest.
  CHECK(write(sync, upsert(h, {ann("a")})) == 2);
  CHECK(sync.read_list()->entries.size() == 1);

  const auto other = NodeId::random();
  write(sync, upsert(other, {ann("c")}));
  CHECK(write(sync, RemoveHost{h}) == 4);
  CHECK_FALSE(sync.read_list()->has_host(h));
  CHECK(sync.read_list()->has_host(other));
  CHECK(write(sync, DropApp{other, protocol::AppId::of_content("c")}) == 5);
  CHECK(sync.read_list()->entries.empty());
}

TEST_CASE("status updates publish replicated metrics") {
  Synchronizer sync;
  const auto h = NodeId::random();
  auto a = ann("a", 20);
  a.policy = {3, 3};
  write(sync, upsert(h, {a}));
  auto e = sync.read_list()->find(h, a.app);
  CHECK(e->announcement.metrics.p == 0);
  CHECK_FALSE(e->announcement.metrics.w.has_value());

  CHECK(write(sync, StatusChange{h, a.app, {4, 100, 10.0}, 16}) == 2);
  e = sync.read_list()->find(h, a.app);
  CHECK(e->announcement.metrics == metrics::MetricTriple{300, 12, 7.5});
  CHECK(e->announcement.parts_remaining == 16);
  CHECK(e->totals == metrics::RunTotals{4, 100, 10.0});
  // Same totals again: idempotent.
  CHECK(write(sync, StatusChange{h, a.app, {4, 100, 10.0}, 16}) == 2);
  // Unknown entry: ignored.
  CHECK(write(sync, StatusChange{NodeId::random(), a.app, {1, 1, 1.0}, 0}) == 2);
}

TEST_CASE("list survives a restart") {
  TempDir dir;
  const auto path = dir.path / "applist.v1";
  const auto h = NodeId::random();
  std::string before;
  {
    Synchronizer sync(path);
    write(sync, upsert(h, {ann("a"), ann("b")}));
    write(sync, StatusChange{h, protocol::AppId::of_content("a"), {3, 30, 1.5}, 7});
    before = sync.read_list()->serialize();
  }
  Synchronizer again(path);
  CHECK(again.read_list()->serialize() == before);
  CHECK(again.read_list()->revision == 2);
  CHECK(ApplicationsList::deserialize(fsutil::read_file(path)).serialize() == before);
}

TEST_CASE("failed persistence leaves memory unchanged") {
  Synchronizer sync("/nonexistent-dir/for/sure/applist.v1");
  CHECK_THROWS(write(sync, upsert(NodeId::random(), {ann("a")})));
  CHECK(sync.read_list()->revision == 0);
  CHECK(sync.read_list()->entries.empty());
}

TEST_CASE("snapshots are never torn under concurrent writes") {
  Synchronizer sync;
  std::atomic<bool> done{false};
  std::atomic<int> bad{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 4; ++r) {
    readers.emplace_back([&] {
      while (!done) {
        const auto snap = sync.read_list();
        std::map<NodeId, std::vector<std::uint64_t>> by_host;
        for (const auto& [key, e] : snap->entries) by_host[key.first].push_back(e.announcement.part_count);
        if (by_host.size() != snap->revision) ++bad;
        for (const auto& [_, counts] : by_host) {
          if (counts.size() != 3 || counts[0] != counts[1] || counts[1] != counts[2]) ++bad;
        }
      }
    });
  }
  for (std::uint64_t k = 1; k <= 300; ++k) {
    write(sync, upsert(NodeId::random(), {ann("a" + std::to_string(k), k), ann("b" + std::to_string(k), k),
                                          ann("c" + std::to_string(k), k)}));
  }
  done = true;
  for (auto& t : readers) t.join();
  CHECK(bad == 0);
  CHECK(sync.read_list()->revision == 300);
}

TEST_CASE("queued changes from one caller apply in order") {
  Synchronizer sync;
  sync.start();
  const auto h = NodeId::random();
  for (int i = 0; i < 50; ++i) sync.enqueue(upsert(h, {ann("x" + std::to_string(i))}));
  sync.flush();
  const auto snap = sync.read_list();
  REQUIRE(snap->entries.size() == 1);
  CHECK(snap->entries.begin()->first.second == protocol::AppId::of_content("x49"));
  sync.stop();
}

TEST_CASE("HELLO registers, unknown hosts are told to say hello") {
  FakeClock clock;
  Synchronizer sync({}, clock.fn());
  sync.start();
  TrackerCore core(sync, {}, {}, clock.fn());
  const auto n = NodeId::random();

  auto reply = core.validate_message(Message{n, protocol::Offer{{ann("a")}}}, "127.0.0.1");
  REQUIRE(reply.as<protocol::Error>());
  CHECK(reply.as<protocol::Error>()->code == "UNKNOWN_HOST");

  reply = core.validate_message(hello(n, {ann("a")}), "10.0.0.5");
  CHECK(reply.as<protocol::ListPush>());
  sync.flush();
  const auto* e = sync.read_list()->find(n, protocol::AppId::of_content("a"));
  REQUIRE(e);
  CHECK(e->announcement.address == "10.0.0.5:7000");
  REQUIRE(core.host(n));
  CHECK(core.host(n)->address.str() == "10.0.0.5:7000");

  reply = core.validate_message(Message{n, protocol::DropNotice{protocol::AppId::of_content("a")}}, "10.0.0.5");
  CHECK(reply.as<protocol::ListPush>());
  sync.flush();
  CHECK(sync.read_list()->entries.empty());

  reply = core.validate_message(Message{n, protocol::Ping{1}}, "10.0.0.5");
  REQUIRE(reply.as<protocol::Error>());
  CHECK(reply.as<protocol::Error>()->code == protocol::kUnexpected);
  sync.stop();
}

TEST_CASE("blocklisted senders and malformed frames change nothing") {
  Synchronizer sync;
  sync.start();
  const auto bad = NodeId::random();
  TrackerConfig cfg;
  cfg.blocklist = {bad};
  TrackerCore core(sync, cfg);
  CHECK_FALSE(core.recv_message(protocol::encode(hello(bad, {ann("a")}))).has_value());
  const auto good = NodeId::random();
  CHECK(core.recv_message(protocol::encode(hello(good))).has_value());
  for (const char* junk : {"", "{", "null", "{\"v\":1}", "{\"v\":1,\"kind\":\"HELLO\"}", "\x01\x02"}) {
    CHECK_THROWS_AS(core.recv_message(junk), protocol::ProtocolError);
  }
  sync.flush();
  CHECK(sync.read_list()->revision == 0);
  sync.stop();
}

TEST_CASE("mute host expires after f missed rounds") {
  FakeClock clock;
  Synchronizer sync({}, clock.fn());
  sync.start();
  TrackerConfig cfg;
  cfg.liveness = {5000ms, 3};
  TrackerCore core(sync, cfg, {}, clock.fn());
  const auto mute = NodeId::random();
  const auto live = NodeId::random();
  core.validate_message(hello(mute, {ann("m")}), "127.0.0.1");
  core.validate_message(hello(live, {ann("l")}), "127.0.0.1");
  sync.flush();
  REQUIRE(sync.read_list()->entries.size() == 2);

  auto round = [&] {
    clock.t += 5s;
    core.ping_hosts([&](const HostRecord& h) { return h.node == live; });
    sync.flush();
  };
  round();
  CHECK(core.host(mute)->consecutive_misses == 1);
  round();
  CHECK(core.host(mute)->consecutive_misses == 2);
  CHECK(sync.read_list()->has_host(mute));
  // Any accepted message counts as a sign of life.
  core.validate_message(Message{mute, protocol::Offer{{ann("m")}}}, "127.0.0.1");
  CHECK(core.host(mute)->consecutive_misses == 0);
  round();
  round();
  round();
  CHECK_FALSE(core.host(mute).has_value());
  CHECK_FALSE(sync.read_list()->has_host(mute));
  CHECK(sync.read_list()->has_host(live));
  CHECK(core.host(live)->consecutive_misses == 0);
  CHECK(core.host(live)->last_seen == clock.t);
  sync.stop();
}

TEST_CASE("hook veto blocks the host and drops its apps") {
  Synchronizer sync;
  sync.start();
  const auto flaky = NodeId::random();
  const auto fine = NodeId::random();
  std::atomic<bool> veto{false};
  TrackerCore core(sync, {}, [&](const HostRecord& h) { return veto && h.node == flaky; });
  core.validate_message(hello(flaky, {ann("f")}), "127.0.0.1");
  core.validate_message(hello(fine, {ann("g")}), "127.0.0.1");
  sync.flush();
  CHECK(sync.read_list()->has_host(flaky));

  veto = true;
  core.ping_hosts([](const HostRecord&) { return true; });
  sync.flush();
  CHECK(core.is_blocked(flaky));
  CHECK_FALSE(sync.read_list()->has_host(flaky));
  CHECK(sync.read_list()->has_host(fine));

  // Blocked hosts are never pinged and their messages are dropped.
  std::vector<NodeId> pinged;
  std::mutex mu;
  core.ping_hosts([&](const HostRecord& h) {
    std::lock_guard lk(mu);
    pinged.push_back(h.node);
    return true;
  });
  CHECK(pinged == std::vector<NodeId>{fine});
  CHECK_FALSE(core.recv_message(protocol::encode(hello(flaky))).has_value());
  sync.stop();
}

TEST_CASE("a failing hook keeps the host") {
  Synchronizer sync;
  sync.start();
  const auto n = NodeId::random();
  TrackerCore core(sync, {}, [](const HostRecord&) -> bool { throw std::runtime_error("boom"); });
  core.validate_message(hello(n, {ann("a")}), "127.0.0.1");
  core.ping_hosts([](const HostRecord&) { return true; });
  sync.flush();
  CHECK_FALSE(core.is_blocked(n));
  CHECK(sync.read_list()->has_host(n));
  sync.stop();
}

TEST_CASE("command hook exit codes") {
  HostRecord rec;
  rec.node = NodeId::random();
  rec.address = {"127.0.0.1", 7000};
  CHECK_FALSE(command_hook("exit 0")(rec));
  CHECK(command_hook("exit 1")(rec));
  CHECK_THROWS(command_hook("exit 3")(rec));
  // Arguments arrive as node, address, misses.
  CHECK(command_hook("test \"$1\" = " + rec.node.hex() + " && test \"$2\" = 127.0.0.1:7000 && exit 1")(rec));
}

TEST_CASE("init_list reads through a timed cache") {
  FakeClock clock;
  Synchronizer sync({}, clock.fn());
  TrackerConfig cfg;
  cfg.init_cache_ttl = 10s;
  TrackerCore core(sync, cfg, {}, clock.fn());
  auto first = core.init_list();
  CHECK(first.as<protocol::ListPush>()->apps.empty());
  CHECK(core.read_count() == 1);

  const std::vector<Change> batch{upsert(NodeId::random(), {ann("a"), ann("b"), ann("c")})};
  sync.write_list(batch);
  clock.t += 3s;
  CHECK(core.init_list().as<protocol::ListPush>()->apps.empty());
  CHECK(core.read_count() == 1);
  clock.t += 8s;
  const auto fresh = core.init_list();
  CHECK(core.read_count() == 2);
  CHECK(fresh.as<protocol::ListPush>()->apps.size() == 3);
  CHECK(fresh.as<protocol::ListPush>()->revision == 1);
}

TEST_CASE("push only after a revision change and at most once per interval") {
  FakeClock clock;
  Synchronizer sync({}, clock.fn());
  sync.start();
  TrackerConfig cfg;
  cfg.push_interval = 10s;
  TrackerCore core(sync, cfg, {}, clock.fn());
  const auto a = NodeId::random(), b = NodeId::random();
  core.validate_message(hello(a, {ann("a")}), "127.0.0.1");
  core.validate_message(hello(b), "127.0.0.1");
  sync.flush();

  std::map<NodeId, int> received;
  std::mutex mu;
  auto send = [&](const HostRecord& h, const Message& m) {
    REQUIRE(m.as<protocol::ListPush>());
    std::lock_guard lk(mu);
    ++received[h.node];
  };
  CHECK(core.push_list(send));
  CHECK(received[a] == 1);
  CHECK(received[b] == 1);
  CHECK_FALSE(core.push_list(send));  // no revision change

  core.validate_message(Message{a, protocol::DropNotice{protocol::AppId::of_content("a")}}, "127.0.0.1");
  sync.flush();
  clock.t += 2s;
  CHECK_FALSE(core.push_list(send));  // throttled
  clock.t += 9s;
  CHECK(core.push_list(send));
  CHECK(received[a] == 2);
  CHECK(received[b] == 2);
  // Unreachable recipients are skipped.
  const auto c = NodeId::random();
  core.validate_message(hello(c, {ann("c")}), "127.0.0.1");
  sync.flush();
  clock.t += 11s;
  CHECK(core.push_list([&](const HostRecord& h, const Message& m) {
    if (h.node == c) throw net::NetError("down");
    send(h, m);
  }));
  CHECK(received[a] == 3);
  sync.stop();
}

TEST_CASE("persisted hosts are adopted and can expire") {
  TempDir dir;
  const auto h = NodeId::random();
  {
    Synchronizer sync(dir.path / "applist.v1");
    write(sync, upsert(h, {ann("a")}));
  }
  Synchronizer sync(dir.path / "applist.v1");
  sync.start();
  TrackerConfig cfg;
  cfg.liveness = {1000ms, 1};
  TrackerCore core(sync, cfg);
  core.adopt_persisted_hosts();
  REQUIRE(core.host(h));
  core.ping_hosts([](const HostRecord&) { return false; });
  sync.flush();
  CHECK(sync.read_list()->entries.empty());
  sync.stop();
}

TEST_CASE("server expires a host that accepts connections but never answers") {
  TempDir dir;
  // A listener whose backlog accepts connections but nobody reads them.
  net::Listener silent(0, "127.0.0.1");
  ServerConfig cfg;
  cfg.port = 0;
  cfg.data_dir = dir.path;
  cfg.tracker.liveness = {200ms, 3};
  cfg.tracker.push_interval = 100ms;
  cfg.ping_timeout = 100ms;
  TrackerServer server(cfg);
  CHECK(fsutil::read_file(dir.path / "tracker.port") == std::to_string(server.port()) + "\n");

  const auto n = NodeId::random();
  const net::Endpoint tracker{"127.0.0.1", server.port()};
  const auto reply = net::request(tracker, Message{n, protocol::Hello{silent.port(), {ann("a")}}});
  CHECK(reply.as<protocol::ListPush>());
  const auto start = std::chrono::steady_clock::now();
  server.synchronizer().flush();
  REQUIRE(server.synchronizer().read_list()->has_host(n));
  while (server.synchronizer().read_list()->has_host(n) && std::chrono::steady_clock::now() - start < 5s) {
    std::this_thread::sleep_for(20ms);
  }
  const auto elapsed = std::chrono::steady_clock::now() - start;
  CHECK_FALSE(server.synchronizer().read_list()->has_host(n));
  // f rounds of period t plus one ping timeout, with scheduling slack.
  CHECK(elapsed <= 3 * 200ms + 100ms + 500ms);
  CHECK(ApplicationsList::deserialize(fsutil::read_file(dir.path / "applist.v1")).entries.empty());
  server.stop();
}
