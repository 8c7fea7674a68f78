#pragma once

// Tracking server: connection handling (RECV, PING, PUSH), host tracking
// (VAL, INIT, INFO) and the synchronizer (WRITE, READ) that owns the
// applications list.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "vc/metrics.hpp"
#include "vc/net.hpp"
#include "vc/protocol.hpp"

namespace vc::tracker {

using protocol::AppId;
using protocol::NodeId;
using SysClock = std::chrono::system_clock;
using TimePoint = SysClock::time_point;
using NowFn = std::function<TimePoint()>;

struct LivenessPolicy {
  std::chrono::milliseconds t{5000};  // ping / status period
  unsigned f = 3;                     // consecutive misses before removal

  void check() const;
};

struct HostRecord {
  NodeId node;
  net::Endpoint address;
  TimePoint last_seen{};
  unsigned consecutive_misses = 0;
  bool blocked = false;
};

struct AppEntry {
  protocol::AppAnnouncement announcement;
  metrics::RunTotals totals;  // latest accepted STATUS_UPDATE
  TimePoint registered_at{};
  TimePoint last_update{};
};

using EntryKey = std::pair<NodeId, AppId>;

struct ApplicationsList {
  std::uint64_t revision = 0;
  std::map<EntryKey, AppEntry> entries;

  std::vector<protocol::AppAnnouncement> announcements() const;
  bool has_host(const NodeId& host) const;
  const AppEntry* find(const NodeId& host, const AppId& app) const;

  /// Persistence notation (same JSON dialect as the wire), one line.
  std::string serialize() const;
  static ApplicationsList deserialize(std::string_view text);
};

// ---- list changes (INFO -> WRITE) ----

/// HELLO/OFFER: register the host's offered applications. With
/// replace_apps, entries of the host that are not offered are dropped.
struct UpsertApps {
  NodeId host;
  std::string address;
  std::vector<protocol::AppAnnouncement> apps;
  bool replace_apps = true;
};
struct StatusChange {
  NodeId host;
  AppId app;
  metrics::RunTotals totals;
  std::uint64_t parts_remaining = 0;
};
struct RefreshHost {
  NodeId host;
};
struct RemoveHost {
  NodeId host;
};
struct DropApp {
  NodeId host;
  AppId app;
};
using Change = std::variant<UpsertApps, StatusChange, RefreshHost, RemoveHost, DropApp>;

/// Single writer over the applications list. Readers get immutable
/// snapshots; every write goes through write_list, either directly or via
/// the queue drained by the writer thread.
class Synchronizer {
 public:
  /// Loads `persist_path` when it exists. An empty path disables
  /// persistence.
  explicit Synchronizer(std::filesystem::path persist_path = {}, NowFn now = SysClock::now);
  ~Synchronizer();
  Synchronizer(const Synchronizer&) = delete;
  Synchronizer& operator=(const Synchronizer&) = delete;

  /// WRITE. Applies the batch atomically; the revision advances once when
  /// the batch changed list content. On persistence failure the in-memory
  /// list is left untouched and the error propagates.
  std::uint64_t write_list(std::span<const Change> batch);

  /// READ.
  std::shared_ptr<const ApplicationsList> read_list() const;

  /// INFO. Changes from one caller keep their order.
  void enqueue(Change change);
  void start();
  void stop();
  /// Blocks until every change enqueued before the call has been written.
  void flush();

 private:
  void writer_loop();

  std::filesystem::path persist_path_;
  NowFn now_;
  std::mutex write_mu_;
  std::shared_ptr<const ApplicationsList> current_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable drained_cv_;
  std::deque<Change> queue_;
  std::uint64_t enqueued_ = 0;
  std::uint64_t written_ = 0;
  bool stopping_ = false;
  std::thread writer_;
};

/// Optional VAL customization: returns true to veto (blocklist) a host.
using HostHook = std::function<bool(const HostRecord&)>;

struct TrackerConfig {
  LivenessPolicy liveness;
  std::chrono::milliseconds init_cache_ttl{10000};
  std::chrono::milliseconds push_interval{10000};
  std::set<NodeId> blocklist;
};

/// Tracker-side procedures. Thread-safe; network I/O is injected so the
/// rules can be driven by tests with a fake clock.
class TrackerCore {
 public:
  TrackerCore(Synchronizer& sync, TrackerConfig config, HostHook hook = {}, NowFn now = SysClock::now);

  const TrackerConfig& config() const { return config_; }

  /// RECV. Decodes the frame and drops it (nullopt) when the sender is
  /// blocklisted. Throws protocol::ProtocolError on malformed input.
  std::optional<protocol::Message> recv_message(std::string_view raw) const;

  /// VAL for a routed message. Returns the reply frame to send back.
  protocol::Message validate_message(const protocol::Message& msg, const std::string& peer_host);

  /// VAL for one ping status.
  void validate_ping(const NodeId& host, bool alive);

  /// PING round over every non-blocked host. `pinger` returns true when the
  /// host answered PONG in time; hosts are probed concurrently.
  void ping_hosts(const std::function<bool(const HostRecord&)>& pinger);

  /// INIT: LIST_PUSH built from the cached snapshot.
  protocol::Message init_list();
  std::size_t read_count() const { return read_count_; }

  /// PUSH: sends the current snapshot to every live host when the revision
  /// advanced and the push interval has elapsed. Returns true if it pushed.
  bool push_list(const std::function<void(const HostRecord&, const protocol::Message&)>& send);

  std::vector<HostRecord> hosts() const;
  std::optional<HostRecord> host(const NodeId& id) const;
  bool is_blocked(const NodeId& id) const;

  /// Registers hosts that own entries in a list reloaded from disk so they
  /// are pinged (and expire) like live ones.
  void adopt_persisted_hosts();

  const NodeId& self() const { return self_; }

 private:
  void touch_host(const NodeId& id, const std::optional<net::Endpoint>& address);
  bool run_hook(const HostRecord& rec);
  void block_host(const NodeId& id);

  Synchronizer& sync_;
  TrackerConfig config_;
  HostHook hook_;
  NowFn now_;
  NodeId self_ = NodeId::random();

  mutable std::mutex mu_;
  std::map<NodeId, HostRecord> hosts_;
  std::set<NodeId> blocklist_;

  std::mutex cache_mu_;
  std::shared_ptr<const ApplicationsList> cache_;
  TimePoint cache_at_{};
  std::size_t read_count_ = 0;

  std::mutex push_mu_;
  std::uint64_t pushed_revision_ = 0;
  std::optional<TimePoint> last_push_;
};

struct ServerConfig {
  std::uint16_t port = protocol::kDefaultTrackerPort;
  std::filesystem::path data_dir = ".";
  TrackerConfig tracker;
  std::chrono::milliseconds ping_timeout{1000};
  std::string val_hook;  // shell command, empty = none
};

/// Builds a HostHook that runs `command node address misses`; exit 0 keeps
/// the host, exit 1 vetoes it, anything else is a hook failure.
HostHook command_hook(std::string command);

std::set<NodeId> read_blocklist(const std::filesystem::path& path);

/// The tracker process: TCP sessions feeding TrackerCore, plus the ping and
/// push loops. Writes the bound port to `data_dir/tracker.port`.
class TrackerServer {
 public:
  explicit TrackerServer(ServerConfig config);
  ~TrackerServer();

  std::uint16_t port() const;
  TrackerCore& core() { return *core_; }
  Synchronizer& synchronizer() { return *sync_; }
  void stop();

 private:
  void handle(net::Connection& conn);
  void ping_loop();
  void push_loop();

  ServerConfig config_;
  std::unique_ptr<Synchronizer> sync_;
  std::unique_ptr<TrackerCore> core_;
  std::unique_ptr<net::TcpServer> server_;
  std::mutex stop_mu_;
  std::condition_variable stop_cv_;
  bool stopping_ = false;
  std::thread ping_thread_;
  std::thread push_thread_;
};

}  // namespace vc::tracker
