#pragma once

// Seeder-side tracking of one offered application: part distribution
// (DIST), result validation (VAL), majority voting (EVAL), timeouts (TAIL)
// and the counters behind status updates (STAT).

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vc/agent/store.hpp"
#include "vc/events.hpp"
#include "vc/metrics.hpp"
#include "vc/protocol.hpp"

namespace vc::agent {

using protocol::NodeId;
using SysClock = std::chrono::system_clock;
using TimePoint = SysClock::time_point;

struct ResultRecord {
  AppId app;
  std::uint64_t part = 0;
  std::string payload;
  metrics::Bytes reported_d = 0;
  double reported_w = 0.0;
  NodeId submitter;
};

struct VoteState {
  std::vector<ResultRecord> records;
  std::optional<std::string> accepted;
};

enum class VoteStatus { Pending, Accepted, Exhausted };

struct VoteOutcome {
  VoteStatus status = VoteStatus::Pending;
  std::optional<std::string> payload;  // set when Accepted
};

/// Pending below m_min records; Accepted once more than half of the
/// collected records agree byte-wise; Exhausted when m_max records hold no
/// majority.
VoteOutcome eval(const VoteState& vote, const metrics::ValidationPolicy& policy);

struct Assignment {
  NodeId node;
  TimePoint assigned_at{};
  TimePoint deadline{};
};

/// Optional VAL customization: returns true when the record is acceptable.
using ResultHook = std::function<bool(const ResultRecord&)>;

/// Structural check of a payload against the part it answers.
using PayloadCheck = std::function<bool(std::uint64_t part, std::string_view payload)>;

struct SeedOptions {
  metrics::ValidationPolicy policy;
  std::optional<std::chrono::milliseconds> work_timeout;  // default: 10x published w, else 300 s
  ResultHook hook;
  PayloadCheck check;  // default: canonical prime payload within the part's range
};

enum class Verdict { Accepted, Pending, Duplicate, Rejected };

struct ValResult {
  Verdict verdict = Verdict::Rejected;
  std::string reason;
  bool completed_part = false;  // this record closed the vote
};

class SeededApp {
 public:
  /// Rebuilds accepted parts from result files and counters from the
  /// Tracker log.
  SeededApp(SeedStore& store, AppId id, NodeId self, SeedOptions options, events::EventLog* events = nullptr);

  const AppId& id() const { return id_; }

  /// DIST: lowest-index part that still needs an assignee and that the
  /// requester is not already working on or voting for. `hint` re-issues a
  /// part the requester already holds.
  std::optional<std::uint64_t> dist(const NodeId& requester, TimePoint now,
                                    std::optional<std::uint64_t> hint = std::nullopt);

  /// VAL followed by EVAL.
  ValResult val(const ResultRecord& rec, TimePoint now);

  /// TAIL: drops assignments past their deadline; returns the parts made
  /// reissuable.
  std::vector<std::uint64_t> tail(TimePoint now);

  std::string app_bytes() const { return app_bytes_; }
  std::string part_bytes(std::uint64_t part) const { return store_.read_part(id_, part); }

  std::uint64_t part_count() const { return part_count_; }
  std::uint64_t parts_remaining() const;
  bool complete() const { return parts_remaining() == 0; }
  metrics::RunTotals totals() const;
  metrics::MetricTriple published() const;
  std::chrono::milliseconds work_timeout() const;
  const metrics::ValidationPolicy& policy() const { return options_.policy; }
  protocol::AppAnnouncement announcement() const;

  std::vector<Assignment> assignees(std::uint64_t part) const;
  std::size_t vote_records(std::uint64_t part) const;
  std::set<std::uint64_t> accepted_parts() const;

 private:
  std::chrono::milliseconds work_timeout_locked() const;
  void log(std::string_view event, const NodeId* node, std::uint64_t part,
           std::optional<std::uint64_t> bytes = {}, std::optional<double> seconds = {});

  SeedStore& store_;
  AppId id_;
  NodeId self_;
  SeedOptions options_;
  events::EventLog* events_;
  std::string app_bytes_;
  std::uint64_t part_count_ = 0;
  std::vector<std::optional<workloads::WorkUnit>> units_;

  mutable std::mutex mu_;
  std::map<std::uint64_t, std::vector<Assignment>> assignments_;
  std::map<std::uint64_t, VoteState> votes_;
  std::set<std::uint64_t> accepted_;
  metrics::RunTotals totals_;
};

}  // namespace vc::agent
