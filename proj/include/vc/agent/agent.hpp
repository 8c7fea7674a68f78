#pragma once

// The volunteer process: a connector that serves seeded applications to
// peers, a tracker loop (HELLO, STATUS_UPDATE, TAIL) and one leech worker
// per foreign application.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "vc/agent/leecher.hpp"
#include "vc/agent/seeder.hpp"
#include "vc/agent/store.hpp"
#include "vc/events.hpp"
#include "vc/net.hpp"
#include "vc/protocol.hpp"

namespace vc::agent {

/// APPSPEC: `APPFILE:MANIFEST`.
struct SeedSpec {
  fs::path app_file;
  fs::path manifest;
  static SeedSpec parse(std::string_view text);
};

struct AgentConfig {
  net::Endpoint tracker{"127.0.0.1", protocol::kDefaultTrackerPort};
  std::uint16_t peer_port = protocol::kDefaultPeerPort;
  fs::path data_dir = ".";
  std::vector<SeedSpec> seeds;
  bool leech_all = false;
  std::set<AppId> leech;
  metrics::ValidationPolicy policy{1, 1};
  std::optional<std::chrono::milliseconds> work_timeout;
  std::set<NodeId> deny;
  std::string runner = "builtin";
  LeechOptions leech_options;
  std::chrono::milliseconds heartbeat{2000};
  std::chrono::milliseconds tail_interval{250};
  std::chrono::milliseconds io_timeout{5000};
};

class Agent final : public LeechContext {
 public:
  explicit Agent(AgentConfig config);
  ~Agent() override;
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  /// Binds the peer port and starts the tracker loop.
  void start();
  /// Stops workers (leaving Leech/ in place for recovery) and the server.
  void stop();

  std::uint16_t peer_port() const;
  std::vector<AppId> seeded_apps() const;
  SeededApp* seeded(const AppId& app);
  std::uint64_t list_revision() const;
  std::set<AppId> active_leeches() const;

  /// RECV: routes one decoded message. Returns the replies to send back;
  /// denied senders get none.
  std::vector<protocol::Message> handle(const protocol::Message& msg);

  const NodeId& self() const override { return self_; }
  std::optional<protocol::AppAnnouncement> lookup(const AppId& app) override;
  void refresh_list() override;
  void host_vanished(const AppId& app) override;

 private:
  void on_list(const protocol::ListPush& list);
  void reconcile_locked();
  std::optional<protocol::Message> tracker_call(const protocol::Message& msg);
  bool hello();
  void tracker_loop();
  void reap();
  std::vector<protocol::AppAnnouncement> seed_announcements() const;
  bool wants(const AppId& app) const { return config_.leech_all || config_.leech.count(app) > 0; }

  AgentConfig config_;
  NodeId self_;
  SeedStore seed_store_;
  LeechStore leech_store_;
  events::EventLog events_;
  std::unique_ptr<Runner> runner_;
  std::map<AppId, std::unique_ptr<SeededApp>> seeded_;
  std::atomic<std::uint64_t> cycle_counter_{0};

  mutable std::mutex mu_;
  std::uint64_t revision_ = 0;
  bool have_list_ = false;
  std::map<AppId, protocol::AppAnnouncement> list_;
  std::map<AppId, std::unique_ptr<LeechWorker>> workers_;
  std::vector<std::unique_ptr<LeechWorker>> retired_;
  std::set<AppId> finished_apps_;

  std::mutex loop_mu_;
  std::condition_variable loop_cv_;
  std::set<AppId> dirty_;
  bool stopping_ = false;
  std::atomic<bool> registered_{false};

  std::unique_ptr<net::TcpServer> server_;
  std::thread loop_thread_;
};

/// Loads `data_dir/node_id`, creating it on first use.
NodeId load_or_create_node_id(const fs::path& data_dir);

}  // namespace vc::agent
