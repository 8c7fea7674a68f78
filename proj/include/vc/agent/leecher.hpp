#pragma once

// Leecher-side working procedures (REQ, SCAN, RUN, TIME, COLLECT, SAVE,
// LOAD, STOP) and the per-application worker that chains them.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>

#include "vc/agent/store.hpp"
#include "vc/events.hpp"
#include "vc/metrics.hpp"
#include "vc/net.hpp"
#include "vc/protocol.hpp"

namespace vc::agent {

using protocol::NodeId;

/// Executes an application file against one data part.
class Runner {
 public:
  virtual ~Runner() = default;
  /// Result payload, or nullopt when the run failed or was cancelled.
  virtual std::optional<std::string> run(const fs::path& app, const fs::path& data,
                                         const std::atomic<bool>& cancel) = 0;
};

/// In-process prime search for application files that carry the builtin
/// marker line.
class BuiltinRunner final : public Runner {
 public:
  std::optional<std::string> run(const fs::path& app, const fs::path& data, const std::atomic<bool>& cancel) override;
};

/// Runs `command <app> <data>` and takes stdout as the payload. Foreign
/// code runs unconfined, so this is opt-in.
class ExecRunner final : public Runner {
 public:
  explicit ExecRunner(std::string command, std::chrono::milliseconds timeout = std::chrono::minutes{30})
      : command_(std::move(command)), timeout_(timeout) {}
  std::optional<std::string> run(const fs::path& app, const fs::path& data, const std::atomic<bool>& cancel) override;

 private:
  std::string command_;
  std::chrono::milliseconds timeout_;
};

/// "builtin" or "exec:COMMAND".
std::unique_ptr<Runner> make_runner(std::string_view spec);

/// Serializes filesystem work on Leech/<AppId> with STOP.
struct LeechSlot {
  std::mutex mu;
  std::atomic<bool> cancelled{false};  // STOP requested
  std::atomic<bool> shutdown{false};   // agent exiting, keep files
  bool halted() const { return cancelled || shutdown; }
};

struct WorkItem {
  AppId app;
  std::uint64_t part = 0;
  NodeId host;
  net::Endpoint host_address;
  bool app_transferred = false;
  metrics::Bytes app_bytes = 0;   // wire payload bytes this cycle
  metrics::Bytes data_bytes = 0;
};

struct NoWork {
  bool complete = false;
};
struct HashMismatch {};
struct Cancelled {};

using ReqOutcome = std::variant<WorkItem, NoWork, HashMismatch, Cancelled>;

struct ReqOptions {
  bool want_app = true;
  std::optional<std::uint64_t> hint;
  std::chrono::milliseconds timeout{5000};
};

/// REQ. Fetches the next part from the host, verifies the application hash
/// and stores both payloads. Throws net::NetError when the host cannot be
/// reached and protocol::ProtocolError on a bad reply.
ReqOutcome req(const protocol::AppAnnouncement& ann, const NodeId& self, LeechStore& store, LeechSlot& slot,
               const ReqOptions& options, events::EventLog* events = nullptr);

/// SCAN: bytes of the application (when transferred this cycle) plus the
/// data part. Throws NotFound if a file is missing.
metrics::Bytes scan(const WorkItem& item, const LeechStore& store);

struct TimeMarks {
  double begin = 0.0;
  std::optional<double> end;
};

struct RunOutcome {
  std::optional<std::string> payload;
  TimeMarks marks;
};

/// RUN, bracketed by begin/end marks.
RunOutcome run(const WorkItem& item, const LeechStore& store, Runner& runner, const std::atomic<bool>& cancel);

/// TIME: elapsed seconds between the marks, appended to the Time log. A
/// missing end mark is logged as incomplete and yields nullopt.
std::optional<double> time(const TimeMarks& marks, LeechStore& store, const AppId& app, std::uint64_t part,
                           bool succeeded);

struct Collected {
  metrics::Bytes d = 0;
  double w = 0.0;
  bool operator==(const Collected&) const = default;
};

/// COLLECT.
inline Collected collect(metrics::Bytes scanned, double seconds) { return {scanned, seconds}; }

/// STOP: cancels in-flight work and removes Leech/<AppId>. Idempotent.
void stop(LeechStore& store, LeechSlot& slot, const AppId& app);

/// What a worker needs from its agent.
class LeechContext {
 public:
  virtual ~LeechContext() = default;
  virtual const NodeId& self() const = 0;
  /// Latest announcement of `app` in the agent's copy of the list.
  virtual std::optional<protocol::AppAnnouncement> lookup(const AppId& app) = 0;
  /// STAT on the leecher side: fetch a fresh list from the tracker.
  virtual void refresh_list() = 0;
  /// Invoked when the host vanished; expected to call stop().
  virtual void host_vanished(const AppId& app) = 0;
};

struct LeechOptions {
  bool cache_app = false;
  unsigned run_retries = 2;
  unsigned submit_attempts = 5;
  std::chrono::milliseconds io_timeout{5000};
  std::chrono::milliseconds idle_backoff{250};
  // Fault injection.
  double corrupt_rate = 0.0;
  std::uint64_t fault_seed = 0;
  std::optional<std::uint64_t> die_after_cycles;
  std::atomic<std::uint64_t>* cycle_counter = nullptr;
};

/// Returns a structurally valid payload that differs from `payload`.
std::string corrupt_payload(std::string_view payload, std::uint64_t lo_hint);

class LeechWorker {
 public:
  LeechWorker(LeechContext& ctx, LeechStore& store, Runner& runner, events::EventLog* events, AppId app,
              LeechOptions options);
  ~LeechWorker();
  LeechWorker(const LeechWorker&) = delete;
  LeechWorker& operator=(const LeechWorker&) = delete;

  void start();
  /// STOP from the agent's tracker: cancel and drop the subtree.
  void stop();
  /// Leave files in place (restart recovery) and exit.
  void shutdown();
  void join();
  bool finished() const { return finished_; }
  const AppId& app() const { return app_; }

 private:
  enum class SubmitResult { Acked, Rejected, Stopped, GaveUp };

  void loop();
  void cycle_once(const protocol::AppAnnouncement& ann);
  SubmitResult submit(const WorkItem& item, const std::string& payload, const Collected& collected);
  void recover_pending(const protocol::AppAnnouncement& ann);
  void sleep_for(std::chrono::milliseconds d);

  LeechContext& ctx_;
  LeechStore& store_;
  Runner& runner_;
  events::EventLog* events_;
  AppId app_;
  LeechOptions options_;
  LeechSlot slot_;
  std::mt19937_64 rng_;

  std::optional<std::uint64_t> hint_;
  unsigned failures_ = 0;
  bool done_ = false;

  std::mutex sleep_mu_;
  std::condition_variable sleep_cv_;
  std::atomic<bool> finished_{false};
  std::thread thread_;
};

}  // namespace vc::agent
