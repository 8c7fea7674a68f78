#include "vc/agent/leecher.hpp"

#include <signal.h>

#include <spdlog/spdlog.h>

#include "vc/fsutil.hpp"
#include "vc/process.hpp"
#include "vc/workloads.hpp"

namespace vc::agent {

using protocol::Message;

// ---------------------------------------------------------------------------
// Runners

std::optional<std::string> BuiltinRunner::run(const fs::path& app, const fs::path& data,
                                              const std::atomic<bool>& cancel) {
  try {
    const auto source = fsutil::read_file(app);
    const std::string marker = std::string(workloads::kBuiltinPrimesMarker) + "\n";
    if (source.find(marker) == std::string::npos) {
      spdlog::warn("application {} is not runnable in-process; configure --runner exec:CMD", app.string());
      return std::nullopt;
    }
    const auto unit = workloads::decode_data_part(fsutil::read_file(data));
    auto payload = workloads::prime_app_runner(unit);
    if (cancel) return std::nullopt;
    return payload;
  } catch (const std::exception& e) {
    spdlog::warn("builtin run failed: {}", e.what());
    return std::nullopt;
  }
}

std::optional<std::string> ExecRunner::run(const fs::path& app, const fs::path& data,
                                           const std::atomic<bool>& cancel) {
  const auto result =
      process::run_capture(process::shell_command(command_, {app.string(), data.string()}), timeout_, &cancel);
  if (!result.exited || result.exit_code != 0 || result.spawn_failed) return std::nullopt;
  return result.output;
}

std::unique_ptr<Runner> make_runner(std::string_view spec) {
  if (spec.empty() || spec == "builtin") return std::make_unique<BuiltinRunner>();
  if (spec.starts_with("exec:") && spec.size() > 5) return std::make_unique<ExecRunner>(std::string(spec.substr(5)));
  throw std::invalid_argument("runner must be 'builtin' or 'exec:COMMAND'");
}

// ---------------------------------------------------------------------------
// Procedures

ReqOutcome req(const protocol::AppAnnouncement& ann, const NodeId& self, LeechStore& store, LeechSlot& slot,
               const ReqOptions& options, events::EventLog* events) {
  if (slot.halted()) return Cancelled{};
  const auto host = net::Endpoint::parse(ann.address);
  auto conn = net::Connection::open(host, options.timeout, options.timeout);
  conn.send(Message{self, protocol::WorkRequest{ann.app, options.want_app, options.hint}});
  auto reply = conn.receive();
  if (const auto* err = reply.as<protocol::Error>()) {
    if (err->code == protocol::kNoWork) return NoWork{err->detail == "complete"};
    throw std::runtime_error("work request refused: " + err->code + " " + err->detail);
  }
  std::optional<std::string> app_bytes;
  if (auto* ap = std::get_if<protocol::AppPayload>(&reply.body)) {
    app_bytes = std::move(ap->payload);
    reply = conn.receive();
  }
  auto* dp = std::get_if<protocol::DataPayload>(&reply.body);
  if (!dp || dp->app != ann.app) throw std::runtime_error("host did not send a data part");

  WorkItem item;
  item.app = ann.app;
  item.part = dp->part;
  item.host = ann.host;
  item.host_address = host;
  item.app_transferred = app_bytes.has_value();
  item.app_bytes = app_bytes ? app_bytes->size() : 0;
  item.data_bytes = dp->payload.size();
  const auto app_hex = ann.app.hex();
  const auto self_hex = self.hex();
  if (events) {
    if (app_bytes) events->record(self_hex, "recv_app", app_hex, item.part, item.app_bytes);
    events->record(self_hex, "recv_data", app_hex, item.part, item.data_bytes);
  }
  if (app_bytes && protocol::AppId::of_content(*app_bytes) != ann.app) {
    spdlog::warn("application payload for {} fails its content hash; discarded", ann.app.short_hex());
    if (events) events->record(self_hex, "hash_mismatch", app_hex, item.part, item.app_bytes);
    return HashMismatch{};
  }
  std::lock_guard lk(slot.mu);
  if (slot.halted()) return Cancelled{};
  if (app_bytes) store.store_app(ann.app, *app_bytes);
  store.store_part(ann.app, item.part, dp->payload);
  return item;
}

metrics::Bytes scan(const WorkItem& item, const LeechStore& store) {
  std::error_code ec;
  metrics::Bytes total = 0;
  if (item.app_transferred) {
    const auto n = fs::file_size(store.app_path(item.app), ec);
    if (ec) throw NotFound("application file missing");
    total += n;
  }
  const auto n = fs::file_size(store.part_path(item.app, item.part), ec);
  if (ec) throw NotFound("data part missing");
  return total + n;
}

RunOutcome run(const WorkItem& item, const LeechStore& store, Runner& runner, const std::atomic<bool>& cancel) {
  RunOutcome out;
  out.marks.begin = fsutil::epoch_seconds();
  out.payload = runner.run(store.app_path(item.app), store.part_path(item.app, item.part), cancel);
  if (cancel) {
    out.payload.reset();
    return out;
  }
  out.marks.end = fsutil::epoch_seconds();
  return out;
}

std::optional<double> time(const TimeMarks& marks, LeechStore& store, const AppId& app, std::uint64_t part,
                           bool succeeded) {
  TimeRecord rec{part, marks.begin, marks.end, "incomplete"};
  std::optional<double> elapsed;
  if (marks.end) {
    elapsed = std::max(0.0, *marks.end - marks.begin);
    rec.status = succeeded ? "ok" : "failed";
  }
  store.append_time(app, rec);
  return elapsed;
}

void stop(LeechStore& store, LeechSlot& slot, const AppId& app) {
  slot.cancelled = true;
  std::lock_guard lk(slot.mu);
  store.remove(app);
}

std::string corrupt_payload(std::string_view payload, std::uint64_t lo_hint) {
  auto values = workloads::parse_payload(payload);
  if (values.empty()) {
    values.push_back(lo_hint);
  } else {
    values.pop_back();
  }
  return workloads::canonical_payload(values);
}

// ---------------------------------------------------------------------------
// Worker

LeechWorker::LeechWorker(LeechContext& ctx, LeechStore& store, Runner& runner, events::EventLog* events, AppId app,
                         LeechOptions options)
    : ctx_(ctx),
      store_(store),
      runner_(runner),
      events_(events),
      app_(app),
      options_(options),
      rng_(options.fault_seed ^ std::hash<std::string>{}(app.hex())) {}

LeechWorker::~LeechWorker() {
  shutdown();
  join();
}

void LeechWorker::start() {
  thread_ = std::thread([this] { loop(); });
}

void LeechWorker::stop() {
  agent::stop(store_, slot_, app_);
  sleep_cv_.notify_all();
}

void LeechWorker::shutdown() {
  slot_.shutdown = true;
  sleep_cv_.notify_all();
}

void LeechWorker::join() {
  if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

void LeechWorker::sleep_for(std::chrono::milliseconds d) {
  std::unique_lock lk(sleep_mu_);
  sleep_cv_.wait_for(lk, d, [this] { return slot_.halted(); });
}

void LeechWorker::loop() {
  if (auto ann = ctx_.lookup(app_)) {
    try {
      recover_pending(*ann);
    } catch (const std::exception& e) {
      spdlog::warn("recovering pending results for {} failed: {}", app_.short_hex(), e.what());
    }
  }
  while (!slot_.halted() && !done_) {
    auto ann = ctx_.lookup(app_);
    if (!ann) {
      ctx_.host_vanished(app_);
      break;
    }
    try {
      cycle_once(*ann);
    } catch (const net::NetError& e) {
      spdlog::info("host {} unreachable for {}: {}", ann->address, app_.short_hex(), e.what());
      if (events_) events_->record(ctx_.self().hex(), "req_failed", app_.hex());
      ctx_.refresh_list();
      sleep_for(options_.idle_backoff * 4);
    } catch (const std::exception& e) {
      spdlog::warn("cycle for {} failed: {}", app_.short_hex(), e.what());
      sleep_for(options_.idle_backoff * 4);
    }
  }
  finished_ = true;
}

void LeechWorker::cycle_once(const protocol::AppAnnouncement& ann) {
  ReqOptions ro;
  ro.timeout = options_.io_timeout;
  ro.hint = hint_;
  ro.want_app = true;
  if (options_.cache_app) {
    try {
      ro.want_app = AppId::of_content(fsutil::read_file(store_.app_path(app_))) != app_;
    } catch (const std::exception&) {
    }
  }
  auto outcome = req(ann, ctx_.self(), store_, slot_, ro, events_);
  if (std::holds_alternative<Cancelled>(outcome)) return;
  if (const auto* nw = std::get_if<NoWork>(&outcome)) {
    hint_.reset();
    if (nw->complete) {
      std::lock_guard lk(slot_.mu);
      if (!slot_.halted()) store_.remove(app_);
      done_ = true;
      if (events_) events_->record(ctx_.self().hex(), "done", app_.hex());
      return;
    }
    sleep_for(options_.idle_backoff);
    return;
  }
  if (std::holds_alternative<HashMismatch>(outcome)) {
    sleep_for(options_.idle_backoff);
    return;
  }
  const auto item = std::get<WorkItem>(outcome);
  if (options_.die_after_cycles && options_.cycle_counter &&
      options_.cycle_counter->fetch_add(1) >= *options_.die_after_cycles) {
    spdlog::warn("fault injection: dying while holding part {}", item.part);
    ::raise(SIGKILL);
  }

  const auto d = scan(item, store_);
  if (events_) events_->record(ctx_.self().hex(), "scan", app_.hex(), item.part, d);
  const auto outcome_run = run(item, store_, runner_, slot_.cancelled);
  std::optional<double> w;
  {
    std::lock_guard lk(slot_.mu);
    if (slot_.cancelled) return;
    w = time(outcome_run.marks, store_, app_, item.part, outcome_run.payload.has_value());
  }
  if (!outcome_run.payload || !w) {
    if (events_) events_->record(ctx_.self().hex(), "run_failed", app_.hex(), item.part);
    if (++failures_ <= options_.run_retries) {
      hint_ = item.part;
    } else {
      failures_ = 0;
      hint_.reset();
      std::lock_guard lk(slot_.mu);
      if (!slot_.halted()) store_.clear_part(app_, item.part);
    }
    return;
  }
  failures_ = 0;
  hint_.reset();

  std::string payload = *outcome_run.payload;
  if (options_.corrupt_rate > 0.0 && std::bernoulli_distribution(options_.corrupt_rate)(rng_)) {
    std::uint64_t lo = 2;
    try {
      lo = workloads::decode_data_part(fsutil::read_file(store_.part_path(app_, item.part))).lo;
    } catch (const std::exception&) {
    }
    payload = corrupt_payload(payload, lo);
    if (events_) events_->record(ctx_.self().hex(), "corrupt", app_.hex(), item.part);
  }
  const auto collected = collect(d, *w);
  std::string loaded;
  {
    std::lock_guard lk(slot_.mu);
    if (slot_.halted()) return;
    store_.save_result(app_, item.part, payload);
    loaded = store_.load_result(app_, item.part);
  }
  submit(item, loaded, collected);
}

LeechWorker::SubmitResult LeechWorker::submit(const WorkItem& item, const std::string& payload,
                                              const Collected& collected) {
  const Message msg{ctx_.self(), protocol::ResultSubmit{app_, item.part, payload, collected.d, collected.w}};
  const auto self_hex = ctx_.self().hex();
  const auto app_hex = app_.hex();
  for (unsigned attempt = 0; attempt < options_.submit_attempts; ++attempt) {
    if (slot_.halted()) return SubmitResult::Stopped;
    Message reply;
    try {
      reply = net::request(item.host_address, msg, options_.io_timeout);
    } catch (const std::exception& e) {
      spdlog::info("submitting part {} of {} failed: {}", item.part, app_.short_hex(), e.what());
      if (events_) events_->record(self_hex, "send_failed", app_hex, item.part);
      ctx_.refresh_list();
      const auto ann = ctx_.lookup(app_);
      if (!ann || ann->host != item.host) {
        ctx_.host_vanished(app_);
        return SubmitResult::Stopped;
      }
      sleep_for(options_.idle_backoff * (1u << std::min(attempt, 5u)));
      continue;
    }
    if (const auto* ack = reply.as<protocol::ResultAck>()) {
      const bool counted = ack->status == "accepted" || ack->status == "pending";
      if (events_) {
        events_->record(self_hex, counted ? "cycle" : "duplicate", app_hex, item.part, collected.d, collected.w);
      }
      std::lock_guard lk(slot_.mu);
      if (!slot_.cancelled) store_.clear_part(app_, item.part);
      return SubmitResult::Acked;
    }
    if (reply.as<protocol::ResultReject>()) {
      if (events_) events_->record(self_hex, "rejected", app_hex, item.part, collected.d, collected.w);
      std::lock_guard lk(slot_.mu);
      if (!slot_.cancelled) store_.clear_part(app_, item.part);
      return SubmitResult::Rejected;
    }
    break;
  }
  std::lock_guard lk(slot_.mu);
  if (!slot_.halted()) store_.clear_part(app_, item.part);
  return SubmitResult::GaveUp;
}

void LeechWorker::recover_pending(const protocol::AppAnnouncement& ann) {
  const auto pending = store_.pending_results(app_);
  if (pending.empty()) return;
  const auto times = store_.time_log(app_);
  for (auto part : pending) {
    if (slot_.halted()) return;
    WorkItem item;
    item.app = app_;
    item.part = part;
    item.host = ann.host;
    item.host_address = net::Endpoint::parse(ann.address);
    item.app_transferred = fs::exists(store_.app_path(app_));
    metrics::Bytes d = 0;
    try {
      d = scan(item, store_);
    } catch (const NotFound&) {
    }
    double w = 0.0;
    for (const auto& t : times) {
      if (t.part == part && t.status == "ok" && t.end) w = *t.end - t.begin;
    }
    spdlog::info("resending saved result for part {} of {}", part, app_.short_hex());
    submit(item, store_.load_result(app_, part), collect(d, w));
  }
}

}  // namespace vc::agent
