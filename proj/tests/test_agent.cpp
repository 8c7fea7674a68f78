#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <thread>

#include "vc/agent/agent.hpp"
#include "vc/fsutil.hpp"
#include "vc/oracle.hpp"

using namespace vc;
using namespace vc::agent;
using protocol::Message;
using namespace std::chrono_literals;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vc-agent-" + NodeId::random().hex());
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const workloads::RangeSpec kRange{3, 100, 5};

std::string expected(std::uint64_t part) {
  const auto unit = workloads::partition_range(kRange).at(part);
  return workloads::canonical_payload(oracle::primes_between(unit.lo, unit.hi));
}

struct SeedFixture {
  TempDir dir;
  SeedStore store{dir.path / "Seed"};
  NodeId self = NodeId::random();
  AppId id = store.import(workloads::prime_app_source("primes"), workloads::partition_range(kRange));

  std::unique_ptr<SeededApp> make(metrics::ValidationPolicy policy, std::chrono::milliseconds timeout = 60s,
                                  ResultHook hook = {}) {
    SeedOptions o;
    o.policy = policy;
    o.work_timeout = timeout;
    o.hook = std::move(hook);
    return std::make_unique<SeededApp>(store, id, self, o);
  }
};

ResultRecord record(const AppId& app, std::uint64_t part, std::string payload, const NodeId& who) {
  return ResultRecord{app, part, std::move(payload), 100, 0.5, who};
}

// Majority rule computed from scratch.
VoteOutcome majority_oracle(const std::vector<std::string>& votes, metrics::ValidationPolicy policy) {
  if (votes.size() < policy.m_min) return {VoteStatus::Pending, std::nullopt};
  for (const auto& candidate : votes) {
    const auto n = std::count(votes.begin(), votes.end(), candidate);
    if (2 * static_cast<std::size_t>(n) > votes.size()) return {VoteStatus::Accepted, candidate};
  }
  if (votes.size() >= policy.m_max) return {VoteStatus::Exhausted, std::nullopt};
  return {VoteStatus::Pending, std::nullopt};
}

// Replies to every connection with the given frames.
struct FakeSeeder {
  net::TcpServer server;
  explicit FakeSeeder(std::vector<Message> replies)
      : server(0, [replies](net::Connection& c) {
          if (!c.read_frame()) return;
          for (const auto& r : replies) c.send(r);
        }) {}
  protocol::AppAnnouncement announce(const AppId& app) const {
    protocol::AppAnnouncement a;
    a.app = app;
    a.host = NodeId::random();
    a.address = "127.0.0.1:" + std::to_string(server.port());
    a.part_count = 5;
    a.parts_remaining = 5;
    return a;
  }
};

struct FakeContext : LeechContext {
  NodeId me = NodeId::random();
  protocol::AppAnnouncement ann;
  const NodeId& self() const override { return me; }
  std::optional<protocol::AppAnnouncement> lookup(const AppId&) override { return ann; }
  void refresh_list() override {}
  void host_vanished(const AppId&) override {}
};

}  // namespace

TEST_CASE("eval agrees with a brute-force majority rule") {
  const std::vector<std::string> alphabet{"a", "b", "c"};
  std::size_t checked = 0;
  for (std::uint32_t m_min = 1; m_min <= 4; ++m_min) {
    for (std::uint32_t m_max = m_min; m_max <= 4; ++m_max) {
      const metrics::ValidationPolicy policy{m_min, m_max};
      for (std::size_t n = 0; n <= 4; ++n) {
        std::size_t combos = 1;
        for (std::size_t i = 0; i < n; ++i) combos *= alphabet.size();
        for (std::size_t code = 0; code < combos; ++code) {
          std::vector<std::string> votes;
          VoteState state;
          for (std::size_t i = 0, c = code; i < n; ++i, c /= alphabet.size()) {
            votes.push_back(alphabet[c % alphabet.size()]);
            state.records.push_back(record(AppId{}, 0, votes.back(), NodeId::random()));
          }
          const auto want = majority_oracle(votes, policy);
          const auto got = eval(state, policy);
          CHECK(got.status == want.status);
          CHECK(got.payload == want.payload);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 1000);
}

TEST_CASE("dist hands out the lowest open part") {
  SeedFixture f;
  auto app = f.make({1, 1});
  const auto a = NodeId::random(), b = NodeId::random();
  const auto now = SysClock::now();
  CHECK(app->dist(a, now) == 0u);
  CHECK(app->dist(b, now) == 1u);
  CHECK(app->dist(a, now) == 2u);
  CHECK(app->dist(a, now, 0) == 0u);  // hint re-issues a held part
  CHECK(app->dist(b, now, 0) == 3u);  // hint for a part it does not hold is ignored
  CHECK(app->dist(b, now) == 4u);
  CHECK_FALSE(app->dist(a, now).has_value());
  CHECK_FALSE(app->complete());
  for (std::uint64_t p = 0; p < 5; ++p) {
    CHECK(app->val(record(f.id, p, expected(p), p % 2 ? b : a), now).verdict == Verdict::Accepted);
  }
  CHECK(app->complete());
  CHECK_FALSE(app->dist(a, now).has_value());
  CHECK(app->totals().runs == 5);
  CHECK(app->accepted_parts().size() == 5);
}

TEST_CASE("dist replicates each part m_min times to distinct nodes") {
  SeedFixture f;
  auto app = f.make({2, 3});
  const auto a = NodeId::random(), b = NodeId::random(), c = NodeId::random();
  const auto now = SysClock::now();
  CHECK(app->dist(a, now) == 0u);
  CHECK(app->dist(b, now) == 0u);
  CHECK(app->dist(c, now) == 1u);
  CHECK(app->assignees(0).size() == 2);
  // Disagreement asks for one more vote.
  CHECK(app->val(record(f.id, 0, expected(0), a), now).verdict == Verdict::Pending);
  CHECK(app->val(record(f.id, 0, workloads::canonical_payload({}), b), now).verdict == Verdict::Pending);
  CHECK(app->vote_records(0) == 2);
  CHECK(app->dist(c, now) == 0u);
  CHECK(app->val(record(f.id, 0, expected(0), c), now).verdict == Verdict::Accepted);
  CHECK(app->accepted_parts() == std::set<std::uint64_t>{0});
  CHECK(f.store.load_result(f.id, 0) == expected(0));
  // p counts replicated runs.
  CHECK(app->published().p == 2);
}

TEST_CASE("tail reissues stale assignments") {
  SeedFixture f;
  auto app = f.make({2, 2}, 1000ms);
  const auto a = NodeId::random(), b = NodeId::random(), c = NodeId::random();
  const auto t0 = SysClock::now();
  CHECK(app->dist(a, t0) == 0u);
  CHECK(app->dist(b, t0 + 200ms) == 0u);
  CHECK(app->tail(t0 + 500ms).empty());
  CHECK(app->tail(t0 + 1100ms) == std::vector<std::uint64_t>{0});
  CHECK(app->assignees(0).size() == 1);
  CHECK(app->dist(c, t0 + 1100ms) == 0u);
  CHECK(app->tail(t0 + 5s) == std::vector<std::uint64_t>{0});
  CHECK(app->assignees(0).empty());
  // A late result from a reissued holder still counts.
  CHECK(app->val(record(f.id, 0, expected(0), a), t0 + 6s).verdict == Verdict::Pending);
}

TEST_CASE("val rejects bad records") {
  SeedFixture f;
  const auto bad = NodeId::random();
  auto app = f.make({1, 1}, 60s, [&](const ResultRecord& r) { return r.submitter != bad; });
  const auto a = NodeId::random();
  const auto now = SysClock::now();

  auto r = app->val(record(f.id, 0, "not a payload", a), now);
  CHECK(r.verdict == Verdict::Rejected);
  CHECK(r.reason == "malformed payload");
  // Primes outside the part's range.
  CHECK(app->val(record(f.id, 0, expected(4), a), now).verdict == Verdict::Rejected);
  r = app->val(record(f.id, 9, expected(0), a), now);
  CHECK(r.reason == "part out of range");
  r = app->val(record(AppId::of_content("other"), 0, expected(0), a), now);
  CHECK(r.reason == "unknown application");
  r = app->val(record(f.id, 0, expected(0), bad), now);
  CHECK(r.reason == "rejected by validation hook");
  CHECK(app->accepted_parts().empty());
  CHECK(app->totals().runs == 0);

  CHECK(app->val(record(f.id, 0, expected(0), a), now).verdict == Verdict::Accepted);
  CHECK(app->val(record(f.id, 0, expected(0), NodeId::random()), now).verdict == Verdict::Duplicate);
  r = app->val(record(f.id, 0, workloads::canonical_payload({}), NodeId::random()), now);
  CHECK(r.reason == "disagrees with accepted result");
  CHECK(app->totals().runs == 1);
}

TEST_CASE("val handles duplicates, outvoting and exhausted votes") {
  SeedFixture f;
  const auto a = NodeId::random(), b = NodeId::random(), c = NodeId::random();
  const auto now = SysClock::now();
  {
    auto app = f.make({3, 3});
    CHECK(app->val(record(f.id, 1, expected(1), a), now).verdict == Verdict::Pending);
    CHECK(app->val(record(f.id, 1, expected(1), a), now).verdict == Verdict::Duplicate);
    CHECK(app->val(record(f.id, 1, expected(1), b), now).verdict == Verdict::Pending);
    const auto r = app->val(record(f.id, 1, workloads::canonical_payload({}), c), now);
    CHECK(r.verdict == Verdict::Rejected);
    CHECK(r.reason == "outvoted");
    CHECK(r.completed_part);
    CHECK(f.store.load_result(f.id, 1) == expected(1));
  }
  {
    auto app = f.make({2, 2});
    CHECK(app->val(record(f.id, 2, expected(2), a), now).verdict == Verdict::Pending);
    const auto r = app->val(record(f.id, 2, workloads::canonical_payload({}), b), now);
    CHECK(r.verdict == Verdict::Rejected);
    CHECK_FALSE(r.completed_part);
    CHECK(app->vote_records(2) == 0);
    CHECK_FALSE(app->accepted_parts().count(2));
    CHECK(app->dist(a, now) == 0u);
  }
}

TEST_CASE("seeder counters survive a restart") {
  SeedFixture f;
  const auto a = NodeId::random();
  {
    auto app = f.make({1, 1});
    for (std::uint64_t p : {0, 3}) app->val(record(f.id, p, expected(p), a), SysClock::now());
  }
  auto again = f.make({1, 1});
  CHECK(again->accepted_parts() == std::set<std::uint64_t>{0, 3});
  CHECK(again->totals() == metrics::RunTotals{2, 200, 1.0});
  CHECK(again->parts_remaining() == 3);
}

TEST_CASE("leech store save and load") {
  TempDir dir;
  LeechStore store(dir.path / "Leech");
  const auto app = AppId::of_content("x");
  CHECK_THROWS_AS(store.load_result(app, 0), NotFound);
  store.store_part(app, 4, "data");
  store.save_result(app, 4, "5\n7\n");
  CHECK(store.load_result(app, 4) == "5\n7\n");
  CHECK(store.pending_results(app) == std::vector<std::uint64_t>{4});
  CHECK(store.apps() == std::vector<AppId>{app});
  store.clear_part(app, 4);
  CHECK(store.pending_results(app).empty());
  CHECK_FALSE(fs::exists(store.part_path(app, 4)));
  store.remove(app);
  store.remove(app);
  CHECK_FALSE(store.exists(app));

  const TimeRecord t{3, 10.0, 16.35, "ok"};
  CHECK(TimeRecord::parse(t.format()) == t);
  const TimeRecord open{3, 10.0, std::nullopt, "incomplete"};
  CHECK(TimeRecord::parse(open.format()) == open);
}

TEST_CASE("time measures between marks") {
  TempDir dir;
  LeechStore store(dir.path);
  const auto app = AppId::of_content("x");
  CHECK(time({5.0, 5.0}, store, app, 0, true) == 0.0);
  CHECK(time({10.0, 16.35}, store, app, 1, true).value() == doctest::Approx(6.35).epsilon(1e-12));
  CHECK_FALSE(time({10.0, std::nullopt}, store, app, 2, false).has_value());
  const auto log = store.time_log(app);
  REQUIRE(log.size() == 3);
  CHECK(log[1].status == "ok");
  CHECK(log[2].status == "incomplete");
  CHECK_FALSE(log[2].end.has_value());
  CHECK(collect(4100, 6.35) == Collected{4100, 6.35});
}

TEST_CASE("stop is idempotent and cancels requests") {
  TempDir dir;
  LeechStore store(dir.path);
  LeechSlot slot;
  const auto app = AppId::of_content("x");
  store.store_part(app, 0, "data");
  stop(store, slot, app);
  stop(store, slot, app);
  CHECK_FALSE(store.exists(app));
  CHECK(slot.cancelled);
  protocol::AppAnnouncement ann;
  ann.app = app;
  ann.address = "127.0.0.1:1";
  CHECK(std::holds_alternative<Cancelled>(req(ann, NodeId::random(), store, slot, {})));
}

TEST_CASE("tampered application payloads are discarded") {
  const auto app_bytes = workloads::prime_app_source("primes");
  const auto id = AppId::of_content(app_bytes);
  auto tampered = app_bytes;
  tampered[100] ^= 0x01;
  const auto unit = workloads::partition_range(kRange)[0];
  FakeSeeder seeder({Message{NodeId::random(), protocol::AppPayload{id, tampered}},
                     Message{NodeId::random(), protocol::DataPayload{id, 0, workloads::encode_data_part(unit)}}});
  TempDir dir;
  LeechStore store(dir.path / "Leech");
  LeechSlot slot;
  events::EventLog events(dir.path / "events.log");
  const auto out = req(seeder.announce(id), NodeId::random(), store, slot, {}, &events);
  CHECK(std::holds_alternative<HashMismatch>(out));
  CHECK_FALSE(store.exists(id));
  bool logged = false;
  for (const auto& e : events::read_log(dir.path / "events.log")) logged |= e.event == "hash_mismatch";
  CHECK(logged);
}

TEST_CASE("NO_WORK leaves no files") {
  const auto id = AppId::of_content("x");
  TempDir dir;
  LeechStore store(dir.path / "Leech");
  LeechSlot slot;
  {
    FakeSeeder busy({Message{NodeId::random(), protocol::Error{std::string(protocol::kNoWork), "busy"}}});
    const auto out = req(busy.announce(id), NodeId::random(), store, slot, {});
    REQUIRE(std::holds_alternative<NoWork>(out));
    CHECK_FALSE(std::get<NoWork>(out).complete);
  }
  FakeSeeder done({Message{NodeId::random(), protocol::Error{std::string(protocol::kNoWork), "complete"}}});
  const auto out = req(done.announce(id), NodeId::random(), store, slot, {});
  CHECK(std::get<NoWork>(out).complete);
  CHECK(store.apps().empty());
}

TEST_CASE("unreachable hosts raise NetError") {
  TempDir dir;
  LeechStore store(dir.path);
  LeechSlot slot;
  net::Listener closed(0, "127.0.0.1");
  const auto port = closed.port();
  closed.shutdown();
  protocol::AppAnnouncement ann;
  ann.app = AppId::of_content("x");
  ann.address = "127.0.0.1:" + std::to_string(port);
  CHECK_THROWS_AS(req(ann, NodeId::random(), store, slot, {true, std::nullopt, 500ms}), net::NetError);
}

TEST_CASE("corrupt payloads stay well formed but differ") {
  for (std::uint64_t p = 0; p < 5; ++p) {
    const auto good = expected(p);
    const auto bad = corrupt_payload(good, 3);
    CHECK(bad != good);
    CHECK_NOTHROW(workloads::parse_payload(bad));
  }
  CHECK(corrupt_payload(workloads::canonical_payload({}), 42) == "42\n");
}

TEST_CASE("agent routes peer messages") {
  TempDir dir;
  const auto app_file = dir.path / "primes.app";
  const auto manifest = dir.path / "primes.manifest";
  fsutil::write_file(app_file, workloads::prime_app_source("primes"));
  fsutil::write_file(manifest, workloads::format_manifest(workloads::partition_range(kRange)));
  const auto denied = NodeId::random();
  AgentConfig cfg;
  cfg.data_dir = dir.path / "node";
  cfg.seeds = {SeedSpec::parse(app_file.string() + ":" + manifest.string())};
  cfg.deny = {denied};
  Agent agent(cfg);
  REQUIRE(agent.seeded_apps().size() == 1);
  const auto id = agent.seeded_apps()[0];
  CHECK(id == AppId::of_content(workloads::prime_app_source("primes")));
  CHECK(fsutil::read_file(cfg.data_dir / "node_id").find(agent.self().hex()) == 0);

  const auto peer = NodeId::random();
  auto replies = agent.handle(Message{peer, protocol::Ping{77}});
  REQUIRE(replies.size() == 1);
  CHECK(replies[0].as<protocol::Pong>()->nonce == 77);
  CHECK(agent.handle(Message{denied, protocol::Ping{1}}).empty());
  CHECK(agent.handle(Message{denied, protocol::WorkRequest{id, true, std::nullopt}}).empty());

  replies = agent.handle(Message{peer, protocol::WorkRequest{AppId::of_content("nope"), true, std::nullopt}});
  REQUIRE(replies.size() == 1);
  CHECK(replies[0].as<protocol::Error>()->code == protocol::kUnknownApp);

  replies = agent.handle(Message{peer, protocol::WorkRequest{id, true, std::nullopt}});
  REQUIRE(replies.size() == 2);
  CHECK(replies[0].as<protocol::AppPayload>()->payload.size() == 4096);
  CHECK(replies[1].as<protocol::DataPayload>()->part == 0);
  replies = agent.handle(Message{peer, protocol::WorkRequest{id, false, std::nullopt}});
  REQUIRE(replies.size() == 1);
  CHECK(replies[0].as<protocol::DataPayload>()->part == 1);

  replies = agent.handle(Message{peer, protocol::ResultSubmit{id, 0, expected(0), 10, 0.1}});
  CHECK(replies.at(0).as<protocol::ResultAck>()->status == "accepted");
  replies = agent.handle(Message{peer, protocol::ResultSubmit{id, 0, expected(0), 10, 0.1}});
  CHECK(replies.at(0).as<protocol::ResultAck>()->status == "duplicate");
  replies = agent.handle(Message{peer, protocol::ResultSubmit{id, 1, "4\n", 10, 0.1}});
  CHECK(replies.at(0).as<protocol::ResultReject>());
}

TEST_CASE("a restarted leecher resends its saved result and finishes the app") {
  TempDir dir;
  const auto app_file = dir.path / "primes.app";
  const auto manifest = dir.path / "primes.manifest";
  fsutil::write_file(app_file, workloads::prime_app_source("primes"));
  fsutil::write_file(manifest, workloads::format_manifest(workloads::partition_range(kRange)));
  AgentConfig cfg;
  cfg.data_dir = dir.path / "seeder";
  cfg.peer_port = 0;
  cfg.seeds = {SeedSpec::parse(app_file.string() + ":" + manifest.string())};
  {
    net::Listener closed(0, "127.0.0.1");
    cfg.tracker = {"127.0.0.1", closed.port()};
  }
  cfg.work_timeout = 60s;
  Agent seeder(cfg);
  seeder.start();
  const auto id = seeder.seeded_apps().at(0);

  FakeContext ctx;
  ctx.ann = seeder.seeded(id)->announcement();
  ctx.ann.address = "127.0.0.1:" + std::to_string(seeder.peer_port());

  // State left behind by a crash after SAVE: part 0 assigned to us, result on disk.
  REQUIRE(seeder.seeded(id)->dist(ctx.me, SysClock::now()) == 0u);
  LeechStore store(dir.path / "leecher" / "Leech");
  store.store_app(id, workloads::prime_app_source("primes"));
  store.store_part(id, 0, seeder.seeded(id)->part_bytes(0));
  store.append_time(id, TimeRecord{0, 100.0, 100.25, "ok"});
  store.save_result(id, 0, expected(0));

  BuiltinRunner runner;
  events::EventLog events(dir.path / "leecher" / "events.log");
  LeechOptions opts;
  opts.idle_backoff = 20ms;
  LeechWorker worker(ctx, store, runner, &events, id, opts);
  worker.start();
  const auto deadline = std::chrono::steady_clock::now() + 20s;
  while (!worker.finished() && std::chrono::steady_clock::now() < deadline) std::this_thread::sleep_for(20ms);
  REQUIRE(worker.finished());
  worker.join();

  CHECK(seeder.seeded(id)->complete());
  SeedStore seeds(cfg.data_dir / "Seed");
  for (std::uint64_t p = 0; p < 5; ++p) CHECK(seeds.load_result(id, p) == expected(p));
  CHECK_FALSE(store.exists(id));

  std::vector<std::uint64_t> cycles;
  bool done = false;
  for (const auto& e : events::read_log(dir.path / "leecher" / "events.log")) {
    if (e.event == "cycle") cycles.push_back(*e.part);
    done |= e.event == "done";
  }
  CHECK(done);
  REQUIRE(cycles.size() == 5);
  CHECK(cycles[0] == 0);
  // The first cycle carries the timing recovered from the Time log.
  for (const auto& e : events::read_log(dir.path / "leecher" / "events.log")) {
    if (e.event == "cycle" && e.part == 0u) CHECK(*e.seconds == doctest::Approx(0.25));
  }
  seeder.stop();
}
