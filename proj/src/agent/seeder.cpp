#include "vc/agent/seeder.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "vc/fsutil.hpp"

namespace vc::agent {

VoteOutcome eval(const VoteState& vote, const metrics::ValidationPolicy& policy) {
  const auto n = vote.records.size();
  if (n < policy.m_min) return {VoteStatus::Pending, std::nullopt};
  std::map<std::string_view, std::size_t> counts;
  for (const auto& r : vote.records) {
    if (++counts[r.payload] * 2 > n) return {VoteStatus::Accepted, r.payload};
  }
  if (n >= policy.m_max) return {VoteStatus::Exhausted, std::nullopt};
  return {VoteStatus::Pending, std::nullopt};
}

SeededApp::SeededApp(SeedStore& store, AppId id, NodeId self, SeedOptions options, events::EventLog* events)
    : store_(store), id_(id), self_(self), options_(std::move(options)), events_(events) {
  options_.policy.check();
  app_bytes_ = store_.read_app(id_);
  part_count_ = store_.part_count(id_);
  units_.resize(part_count_);
  for (std::uint64_t i = 0; i < part_count_; ++i) {
    try {
      units_[i] = workloads::decode_data_part(store_.read_part(id_, i), i);
    } catch (const std::exception&) {
      // Not a range part; only the generic canonical-text check applies.
    }
  }
  if (!options_.check) {
    options_.check = [this](std::uint64_t part, std::string_view payload) {
      if (units_[part]) return workloads::payload_fits_unit(*units_[part], payload);
      try {
        workloads::parse_payload(payload);
        return true;
      } catch (const std::invalid_argument&) {
        return false;
      }
    };
  }
  for (auto p : store_.result_parts(id_)) {
    if (p < part_count_) accepted_.insert(p);
  }
  // Replay acceptances so counters survive restarts.
  std::set<std::uint64_t> counted;
  for (const auto& line : store_.tracker_log(id_)) {
    std::istringstream in(line);
    double ts = 0;
    std::string event, node;
    std::uint64_t part = 0, bytes = 0;
    double seconds = 0;
    if (!(in >> ts >> event >> part >> node) || event != "accept") continue;
    if (!(in >> bytes >> seconds)) continue;
    if (!accepted_.count(part) || !counted.insert(part).second) continue;
    totals_.runs += 1;
    totals_.bytes += bytes;
    totals_.seconds += seconds;
  }
}

void SeededApp::log(std::string_view event, const NodeId* node, std::uint64_t part, std::optional<std::uint64_t> bytes,
                    std::optional<double> seconds) {
  const std::string who = node ? node->hex() : "-";
  std::string line = fmt::format("{:.6f} {} {} {}", fsutil::epoch_seconds(), event, part, who);
  if (bytes) line += fmt::format(" {} {:.17g}", *bytes, seconds.value_or(0.0));
  try {
    store_.append_tracker_log(id_, line);
  } catch (const std::exception& e) {
    spdlog::error("tracker log append failed: {}", e.what());
  }
  if (events_) events_->record(node ? node->hex() : "", event, id_.hex(), part, bytes, seconds);
}

std::chrono::milliseconds SeededApp::work_timeout_locked() const {
  if (options_.work_timeout) return *options_.work_timeout;
  const auto m = metrics::replicated_metrics(metrics::from_totals(totals_), options_.policy);
  if (!m.w) return std::chrono::milliseconds{300'000};
  return std::max(std::chrono::milliseconds{1000},
                  std::chrono::milliseconds{static_cast<std::int64_t>(*m.w * 10'000.0)});
}

std::chrono::milliseconds SeededApp::work_timeout() const {
  std::lock_guard lk(mu_);
  return work_timeout_locked();
}

std::optional<std::uint64_t> SeededApp::dist(const NodeId& requester, TimePoint now,
                                             std::optional<std::uint64_t> hint) {
  std::lock_guard lk(mu_);
  const auto deadline = now + work_timeout_locked();
  if (hint && *hint < part_count_ && !accepted_.count(*hint)) {
    auto& held = assignments_[*hint];
    auto it = std::find_if(held.begin(), held.end(), [&](const Assignment& a) { return a.node == requester; });
    if (it != held.end()) {
      it->assigned_at = now;
      it->deadline = deadline;
      return *hint;
    }
  }
  const auto& policy = options_.policy;
  for (std::uint64_t part = 0; part < part_count_; ++part) {
    if (accepted_.count(part)) continue;
    auto& held = assignments_[part];
    const auto& records = votes_[part].records;
    const auto n = records.size();
    const std::size_t target = n < policy.m_min ? policy.m_min : std::min<std::size_t>(policy.m_max, n + 1);
    if (n + held.size() >= target) continue;
    const bool involved =
        std::any_of(held.begin(), held.end(), [&](const Assignment& a) { return a.node == requester; }) ||
        std::any_of(records.begin(), records.end(), [&](const ResultRecord& r) { return r.submitter == requester; });
    if (involved) continue;
    held.push_back({requester, now, deadline});
    log("assign", &requester, part);
    return part;
  }
  return std::nullopt;
}

ValResult SeededApp::val(const ResultRecord& rec, TimePoint /*now*/) {
  std::lock_guard lk(mu_);
  auto drop_assignment = [&] {
    auto it = assignments_.find(rec.part);
    if (it == assignments_.end()) return;
    std::erase_if(it->second, [&](const Assignment& a) { return a.node == rec.submitter; });
  };
  auto reject = [&](std::string reason) {
    drop_assignment();
    log("reject", &rec.submitter, rec.part);
    return ValResult{Verdict::Rejected, std::move(reason), false};
  };

  if (rec.app != id_) return ValResult{Verdict::Rejected, "unknown application", false};
  if (rec.part >= part_count_) {
    log("reject", &rec.submitter, rec.part);
    return ValResult{Verdict::Rejected, "part out of range", false};
  }
  if (!options_.check(rec.part, rec.payload)) return reject("malformed payload");
  if (options_.hook) {
    bool ok = false;
    try {
      ok = options_.hook(rec);
    } catch (const std::exception& e) {
      spdlog::warn("result hook failed for part {}: {}", rec.part, e.what());
    }
    if (!ok) return reject("rejected by validation hook");
  }

  auto& vote = votes_[rec.part];
  if (accepted_.count(rec.part)) {
    drop_assignment();
    if (vote.accepted && *vote.accepted == rec.payload) return ValResult{Verdict::Duplicate, "already accepted", false};
    const auto stored = store_.load_result(id_, rec.part);
    if (stored && *stored == rec.payload) return ValResult{Verdict::Duplicate, "already accepted", false};
    return reject("disagrees with accepted result");
  }
  for (const auto& r : vote.records) {
    if (r.submitter == rec.submitter) {
      drop_assignment();
      return ValResult{Verdict::Duplicate, "already voted", false};
    }
  }
  if (vote.records.size() >= options_.policy.m_max) return reject("vote is full");

  drop_assignment();
  vote.records.push_back(rec);
  const auto outcome = eval(vote, options_.policy);
  switch (outcome.status) {
    case VoteStatus::Pending:
      return ValResult{Verdict::Pending, "", false};
    case VoteStatus::Exhausted: {
      for (const auto& r : vote.records) log("reject", &r.submitter, rec.part);
      log("reissue", nullptr, rec.part);
      vote.records.clear();
      return ValResult{Verdict::Rejected, "no majority, part reissued", false};
    }
    case VoteStatus::Accepted:
      break;
  }

  const auto& canonical = *outcome.payload;
  const ResultRecord* first = nullptr;
  for (const auto& r : vote.records) {
    if (r.payload == canonical && !first) {
      first = &r;
    }
  }
  totals_.runs += 1;
  totals_.bytes += first->reported_d;
  totals_.seconds += first->reported_w;
  log("accept", &first->submitter, rec.part, first->reported_d, first->reported_w);
  for (const auto& r : vote.records) {
    if (&r == first) continue;
    if (r.payload == canonical) {
      log("agree", &r.submitter, rec.part);
    } else {
      log("reject", &r.submitter, rec.part);
    }
  }
  store_.save_result(id_, rec.part, canonical);
  accepted_.insert(rec.part);
  vote.accepted = canonical;
  vote.records.clear();
  assignments_.erase(rec.part);
  if (rec.payload == canonical) return ValResult{Verdict::Accepted, "", true};
  return ValResult{Verdict::Rejected, "outvoted", true};
}

std::vector<std::uint64_t> SeededApp::tail(TimePoint now) {
  std::lock_guard lk(mu_);
  std::vector<std::uint64_t> reissued;
  for (auto& [part, held] : assignments_) {
    bool any = false;
    for (auto it = held.begin(); it != held.end();) {
      if (it->deadline <= now) {
        log("reissue", &it->node, part);
        it = held.erase(it);
        any = true;
      } else {
        ++it;
      }
    }
    if (any) reissued.push_back(part);
  }
  return reissued;
}

std::uint64_t SeededApp::parts_remaining() const {
  std::lock_guard lk(mu_);
  return part_count_ - accepted_.size();
}

metrics::RunTotals SeededApp::totals() const {
  std::lock_guard lk(mu_);
  return totals_;
}

metrics::MetricTriple SeededApp::published() const {
  return metrics::replicated_metrics(metrics::from_totals(totals()), options_.policy);
}

protocol::AppAnnouncement SeededApp::announcement() const {
  protocol::AppAnnouncement a;
  a.app = id_;
  a.host = self_;
  a.metrics = published();
  a.part_count = part_count_;
  a.parts_remaining = parts_remaining();
  a.policy = options_.policy;
  return a;
}

std::vector<Assignment> SeededApp::assignees(std::uint64_t part) const {
  std::lock_guard lk(mu_);
  auto it = assignments_.find(part);
  return it == assignments_.end() ? std::vector<Assignment>{} : it->second;
}

std::size_t SeededApp::vote_records(std::uint64_t part) const {
  std::lock_guard lk(mu_);
  auto it = votes_.find(part);
  return it == votes_.end() ? 0 : it->second.records.size();
}

std::set<std::uint64_t> SeededApp::accepted_parts() const {
  std::lock_guard lk(mu_);
  return accepted_;
}

}  // namespace vc::agent
