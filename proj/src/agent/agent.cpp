#include "vc/agent/agent.hpp"

#include <spdlog/spdlog.h>

#include "vc/fsutil.hpp"

namespace vc::agent {

using protocol::Message;

SeedSpec SeedSpec::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
    throw std::invalid_argument("APPSPEC must be APPFILE:MANIFEST, got '" + std::string(text) + "'");
  }
  return {fs::path(std::string(text.substr(0, colon))), fs::path(std::string(text.substr(colon + 1)))};
}

NodeId load_or_create_node_id(const fs::path& data_dir) {
  const auto path = data_dir / "node_id";
  if (fs::exists(path)) {
    auto text = fsutil::read_file(path);
    while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
    return NodeId::parse(text);
  }
  const auto id = NodeId::random();
  fsutil::write_file_atomic(path, id.hex() + "\n");
  return id;
}

Agent::Agent(AgentConfig config)
    : config_(std::move(config)),
      self_((fs::create_directories(config_.data_dir), load_or_create_node_id(config_.data_dir))),
      seed_store_(config_.data_dir / "Seed"),
      leech_store_(config_.data_dir / "Leech"),
      events_(config_.data_dir / "events.log"),
      runner_(make_runner(config_.runner)) {
  config_.policy.check();
  for (const auto& spec : config_.seeds) {
    const auto app = fsutil::read_file(spec.app_file);
    const auto units = workloads::read_manifest(spec.manifest);
    const auto id = seed_store_.import(app, units);
    spdlog::info("seeding {} ({} parts) from {}", id.short_hex(), units.size(), spec.app_file.string());
  }
  for (const auto& id : seed_store_.apps()) {
    SeedOptions opts;
    opts.policy = config_.policy;
    opts.work_timeout = config_.work_timeout;
    seeded_.emplace(id, std::make_unique<SeededApp>(seed_store_, id, self_, opts, &events_));
    dirty_.insert(id);
  }
  config_.leech_options.io_timeout = config_.io_timeout;
  config_.leech_options.cycle_counter = &cycle_counter_;
}

Agent::~Agent() { stop(); }

void Agent::start() {
  server_ = std::make_unique<net::TcpServer>(
      config_.peer_port,
      [this](net::Connection& conn) {
        auto frame = conn.read_frame();
        if (!frame) return;
        Message msg;
        try {
          msg = protocol::decode(*frame);
        } catch (const protocol::ProtocolError& e) {
          spdlog::warn("closing connection from {}: {}", conn.peer_host(), e.what());
          return;
        }
        for (const auto& reply : handle(msg)) conn.send(reply);
      },
      config_.io_timeout);
  spdlog::info("agent {} serving peers on port {}", self_.hex(), server_->port());
  loop_thread_ = std::thread([this] { tracker_loop(); });
}

void Agent::stop() {
  {
    std::lock_guard lk(loop_mu_);
    if (stopping_) return;
    stopping_ = true;
  }
  loop_cv_.notify_all();
  if (loop_thread_.joinable()) loop_thread_.join();
  std::map<AppId, std::unique_ptr<LeechWorker>> workers;
  std::vector<std::unique_ptr<LeechWorker>> retired;
  {
    std::lock_guard lk(mu_);
    workers.swap(workers_);
    retired.swap(retired_);
  }
  for (auto& [_, w] : workers) w->shutdown();
  workers.clear();
  retired.clear();
  if (server_) server_->stop();
}

std::uint16_t Agent::peer_port() const { return server_ ? server_->port() : config_.peer_port; }

std::vector<AppId> Agent::seeded_apps() const {
  std::vector<AppId> out;
  for (const auto& [id, _] : seeded_) out.push_back(id);
  return out;
}

SeededApp* Agent::seeded(const AppId& app) {
  auto it = seeded_.find(app);
  return it == seeded_.end() ? nullptr : it->second.get();
}

std::uint64_t Agent::list_revision() const {
  std::lock_guard lk(mu_);
  return revision_;
}

std::set<AppId> Agent::active_leeches() const {
  std::lock_guard lk(mu_);
  std::set<AppId> out;
  for (const auto& [id, _] : workers_) out.insert(id);
  return out;
}

std::vector<Message> Agent::handle(const Message& msg) {
  if (config_.deny.count(msg.sender)) return {};
  if (const auto* ping = msg.as<protocol::Ping>()) return {Message{self_, protocol::Pong{ping->nonce}}};
  if (const auto* list = msg.as<protocol::ListPush>()) {
    on_list(*list);
    return {};
  }
  if (const auto* wr = msg.as<protocol::WorkRequest>()) {
    auto* app = seeded(wr->app);
    if (!app) return {Message{self_, protocol::Error{std::string(protocol::kUnknownApp), wr->app.hex()}}};
    const auto part = app->dist(msg.sender, SysClock::now(), wr->part);
    if (!part) {
      const auto detail = app->complete() ? "complete" : "busy";
      return {Message{self_, protocol::Error{std::string(protocol::kNoWork), detail}}};
    }
    std::vector<Message> out;
    if (wr->want_app) out.push_back(Message{self_, protocol::AppPayload{app->id(), app->app_bytes()}});
    out.push_back(Message{self_, protocol::DataPayload{app->id(), *part, app->part_bytes(*part)}});
    return out;
  }
  if (const auto* rs = msg.as<protocol::ResultSubmit>()) {
    auto* app = seeded(rs->app);
    if (!app) return {Message{self_, protocol::Error{std::string(protocol::kUnknownApp), rs->app.hex()}}};
    ResultRecord rec{rs->app, rs->part, rs->payload, rs->reported_d, rs->reported_w, msg.sender};
    const auto result = app->val(rec, SysClock::now());
    if (result.completed_part) {
      {
        std::lock_guard lk(loop_mu_);
        dirty_.insert(rs->app);
      }
      loop_cv_.notify_all();
    }
    switch (result.verdict) {
      case Verdict::Accepted:
        return {Message{self_, protocol::ResultAck{rs->app, rs->part, "accepted"}}};
      case Verdict::Pending:
        return {Message{self_, protocol::ResultAck{rs->app, rs->part, "pending"}}};
      case Verdict::Duplicate:
        return {Message{self_, protocol::ResultAck{rs->app, rs->part, "duplicate"}}};
      case Verdict::Rejected:
        return {Message{self_, protocol::ResultReject{rs->app, rs->part, result.reason}}};
    }
  }
  return {Message{self_, protocol::Error{std::string(protocol::kUnexpected), std::string(protocol::kind_name(msg.kind()))}}};
}

std::optional<protocol::AppAnnouncement> Agent::lookup(const AppId& app) {
  std::lock_guard lk(mu_);
  auto it = list_.find(app);
  if (it == list_.end()) return std::nullopt;
  return it->second;
}

void Agent::refresh_list() {
  tracker_call(Message{self_, protocol::Offer{seed_announcements()}});
}

void Agent::host_vanished(const AppId& app) {
  std::lock_guard lk(mu_);
  auto it = workers_.find(app);
  if (it == workers_.end()) {
    leech_store_.remove(app);
    return;
  }
  spdlog::info("host of {} is gone; dropping its files", app.short_hex());
  it->second->stop();
  events_.record(self_.hex(), "stop", app.hex());
  retired_.push_back(std::move(it->second));
  workers_.erase(it);
}

void Agent::on_list(const protocol::ListPush& list) {
  std::lock_guard lk(mu_);
  if (have_list_ && list.revision < revision_) return;
  have_list_ = true;
  revision_ = list.revision;
  list_.clear();
  for (const auto& ann : list.apps) {
    auto [it, inserted] = list_.emplace(ann.app, ann);
    if (!inserted && ann.host < it->second.host) it->second = ann;
  }
  reconcile_locked();
}

void Agent::reconcile_locked() {
  {
    std::lock_guard lk(loop_mu_);
    if (stopping_) return;
  }
  for (auto it = workers_.begin(); it != workers_.end();) {
    if (list_.count(it->first)) {
      ++it;
      continue;
    }
    spdlog::info("{} left the applications list; stopping", it->first.short_hex());
    it->second->stop();
    events_.record(self_.hex(), "stop", it->first.hex());
    retired_.push_back(std::move(it->second));
    it = workers_.erase(it);
  }
  for (const auto& id : leech_store_.apps()) {
    if (!list_.count(id) && !workers_.count(id)) leech_store_.remove(id);
  }
  for (const auto& [id, ann] : list_) {
    if (!wants(id) || workers_.count(id) || finished_apps_.count(id)) continue;
    if (ann.parts_remaining == 0 && !leech_store_.exists(id)) {
      finished_apps_.insert(id);
      events_.record(self_.hex(), "done", id.hex());
      continue;
    }
    auto worker = std::make_unique<LeechWorker>(*this, leech_store_, *runner_, &events_, id, config_.leech_options);
    worker->start();
    spdlog::info("leeching {} from {}", id.short_hex(), ann.address);
    workers_.emplace(id, std::move(worker));
  }
}

std::vector<protocol::AppAnnouncement> Agent::seed_announcements() const {
  std::vector<protocol::AppAnnouncement> out;
  for (const auto& [_, app] : seeded_) out.push_back(app->announcement());
  return out;
}

std::optional<Message> Agent::tracker_call(const Message& msg) {
  Message reply;
  try {
    reply = net::request(config_.tracker, msg, config_.io_timeout);
  } catch (const std::exception& e) {
    spdlog::debug("tracker unreachable: {}", e.what());
    return std::nullopt;
  }
  if (const auto* list = reply.as<protocol::ListPush>()) {
    on_list(*list);
  } else if (const auto* err = reply.as<protocol::Error>()) {
    if (err->code == "UNKNOWN_HOST") {
      registered_ = false;
    } else {
      spdlog::warn("tracker replied {}: {}", err->code, err->detail);
    }
  }
  return reply;
}

bool Agent::hello() {
  const auto reply = tracker_call(Message{self_, protocol::Hello{peer_port(), seed_announcements()}});
  if (!reply || !reply->as<protocol::ListPush>()) return false;
  registered_ = true;
  spdlog::info("registered with tracker {}", config_.tracker.str());
  return true;
}

void Agent::reap() {
  std::vector<std::unique_ptr<LeechWorker>> done;
  {
    std::lock_guard lk(mu_);
    for (auto it = retired_.begin(); it != retired_.end();) {
      if ((*it)->finished()) {
        done.push_back(std::move(*it));
        it = retired_.erase(it);
      } else {
        ++it;
      }
    }
    for (auto it = workers_.begin(); it != workers_.end();) {
      if (it->second->finished()) {
        finished_apps_.insert(it->first);
        done.push_back(std::move(it->second));
        it = workers_.erase(it);
      } else {
        ++it;
      }
    }
  }
  done.clear();
}

void Agent::tracker_loop() {
  using Clock = std::chrono::steady_clock;
  auto last_beat = Clock::now();
  bool failed = false;
  std::unique_lock lk(loop_mu_);
  while (!stopping_) {
    loop_cv_.wait_for(lk, config_.tail_interval,
                      [&] { return stopping_ || (!failed && !dirty_.empty() && registered_); });
    failed = false;
    if (stopping_) break;
    lk.unlock();

    if (!registered_) hello();
    const auto now = SysClock::now();
    for (auto& [_, app] : seeded_) app->tail(now);

    const bool beat = Clock::now() - last_beat >= config_.heartbeat;
    std::set<AppId> due;
    {
      std::lock_guard dl(loop_mu_);
      due.swap(dirty_);
    }
    if (beat) {
      for (const auto& [id, _] : seeded_) due.insert(id);
      if (seeded_.empty() && registered_) tracker_call(Message{self_, protocol::Offer{}});
      last_beat = Clock::now();
    }
    if (registered_) {
      for (const auto& id : due) {
        auto& app = *seeded_.at(id);
        const auto reply =
            tracker_call(Message{self_, protocol::StatusUpdate{id, app.totals(), app.parts_remaining()}});
        if (!reply || !registered_) {
          failed = true;
          std::lock_guard dl(loop_mu_);
          dirty_.insert(id);
        }
      }
    } else if (!due.empty()) {
      std::lock_guard dl(loop_mu_);
      dirty_.insert(due.begin(), due.end());
    }
    reap();
    lk.lock();
  }
}

}  // namespace vc::agent
