#include "vc/tracker.hpp"

#include <algorithm>
#include <future>

#include <spdlog/spdlog.h>

#include "json_codec.hpp"
#include "vc/fsutil.hpp"
#include "vc/process.hpp"

namespace vc::tracker {

namespace fs = std::filesystem;
using nlohmann::json;
using protocol::Message;

void LivenessPolicy::check() const {
  if (t.count() <= 0) throw std::invalid_argument("liveness period t must be positive");
  if (f < 1) throw std::invalid_argument("liveness miss limit f must be at least 1");
}

// ---------------------------------------------------------------------------
// ApplicationsList

std::vector<protocol::AppAnnouncement> ApplicationsList::announcements() const {
  std::vector<protocol::AppAnnouncement> out;
  out.reserve(entries.size());
  for (const auto& [key, e] : entries) out.push_back(e.announcement);
  return out;
}

bool ApplicationsList::has_host(const NodeId& host) const {
  auto it = entries.lower_bound({host, AppId{}});
  return it != entries.end() && it->first.first == host;
}

const AppEntry* ApplicationsList::find(const NodeId& host, const AppId& app) const {
  auto it = entries.find({host, app});
  return it == entries.end() ? nullptr : &it->second;
}

namespace {
std::int64_t to_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}
TimePoint from_ms(std::int64_t ms) { return TimePoint{std::chrono::milliseconds{ms}}; }
}  // namespace

std::string ApplicationsList::serialize() const {
  json j;
  j["version"] = 1;
  j["revision"] = revision;
  json arr = json::array();
  for (const auto& [key, e] : entries) {
    json ej;
    ej["announcement"] = protocol::detail::announcement_json(e.announcement);
    ej["runs"] = e.totals.runs;
    ej["bytes"] = e.totals.bytes;
    ej["seconds"] = e.totals.seconds;
    ej["registered_at_ms"] = to_ms(e.registered_at);
    ej["last_update_ms"] = to_ms(e.last_update);
    arr.push_back(std::move(ej));
  }
  j["entries"] = std::move(arr);
  return j.dump() + "\n";
}

ApplicationsList ApplicationsList::deserialize(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("applications list file is corrupt: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw std::runtime_error("unsupported applications list version");
    ApplicationsList list;
    list.revision = j.at("revision").get<std::uint64_t>();
    for (const auto& ej : j.at("entries")) {
      AppEntry e;
      e.announcement = protocol::detail::announcement_from(ej.at("announcement"));
      e.totals.runs = ej.at("runs").get<std::uint64_t>();
      e.totals.bytes = ej.at("bytes").get<std::uint64_t>();
      e.totals.seconds = ej.at("seconds").get<double>();
      e.registered_at = from_ms(ej.at("registered_at_ms").get<std::int64_t>());
      e.last_update = from_ms(ej.at("last_update_ms").get<std::int64_t>());
      list.entries[{e.announcement.host, e.announcement.app}] = std::move(e);
    }
    return list;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("applications list file is corrupt: ") + e.what());
  } catch (const protocol::ProtocolError& e) {
    throw std::runtime_error(std::string("applications list file is corrupt: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Synchronizer

namespace {

metrics::MetricTriple published(const metrics::RunTotals& totals, const metrics::ValidationPolicy& policy) {
  return metrics::replicated_metrics(metrics::from_totals(totals), policy);
}

// Applies one change; returns true when list content changed.
struct ChangeApplier {
  ApplicationsList& list;
  TimePoint now;

  bool operator()(const UpsertApps& c) {
    bool changed = false;
    std::set<AppId> offered;
    for (auto ann : c.apps) {
      ann.host = c.host;
      ann.address = c.address;
      offered.insert(ann.app);
      auto it = list.entries.find({c.host, ann.app});
      if (it == list.entries.end()) {
        AppEntry e;
        ann.metrics = published(e.totals, ann.policy);
        e.announcement = ann;
        e.registered_at = now;
        e.last_update = now;
        list.entries.emplace(EntryKey{c.host, ann.app}, std::move(e));
        spdlog::info("app added: {} on host {}", ann.app.short_hex(), c.host.hex());
        changed = true;
        continue;
      }
      auto& e = it->second;
      ann.metrics = published(e.totals, ann.policy);
      if (!(e.announcement == ann)) {
        e.announcement = ann;
        changed = true;
      }
      e.last_update = now;
    }
    if (c.replace_apps) {
      for (auto it = list.entries.begin(); it != list.entries.end();) {
        if (it->first.first == c.host && !offered.count(it->first.second)) {
          spdlog::info("app dropped: {} on host {}", it->first.second.short_hex(), c.host.hex());
          it = list.entries.erase(it);
          changed = true;
        } else {
          ++it;
        }
      }
    }
    return changed;
  }

  bool operator()(const StatusChange& c) {
    auto it = list.entries.find({c.host, c.app});
    if (it == list.entries.end()) return false;
    auto& e = it->second;
    e.last_update = now;
    const auto m = published(c.totals, e.announcement.policy);
    const auto remaining = std::min(c.parts_remaining, e.announcement.part_count);
    if (e.totals == c.totals && e.announcement.metrics == m && e.announcement.parts_remaining == remaining) {
      return false;
    }
    e.totals = c.totals;
    e.announcement.metrics = m;
    e.announcement.parts_remaining = remaining;
    return true;
  }

  bool operator()(const RefreshHost& c) {
    for (auto it = list.entries.lower_bound({c.host, AppId{}}); it != list.entries.end() && it->first.first == c.host;
         ++it) {
      it->second.last_update = now;
    }
    return false;
  }

  bool operator()(const RemoveHost& c) {
    bool changed = false;
    for (auto it = list.entries.lower_bound({c.host, AppId{}}); it != list.entries.end() && it->first.first == c.host;) {
      spdlog::info("app dropped: {} (host {} removed)", it->first.second.short_hex(), c.host.hex());
      it = list.entries.erase(it);
      changed = true;
    }
    return changed;
  }

  bool operator()(const DropApp& c) {
    if (list.entries.erase({c.host, c.app}) == 0) return false;
    spdlog::info("app dropped: {} on host {}", c.app.short_hex(), c.host.hex());
    return true;
  }
};

}  // namespace

Synchronizer::Synchronizer(fs::path persist_path, NowFn now)
    : persist_path_(std::move(persist_path)), now_(std::move(now)) {
  auto initial = std::make_shared<ApplicationsList>();
  if (!persist_path_.empty() && fs::exists(persist_path_)) {
    *initial = ApplicationsList::deserialize(fsutil::read_file(persist_path_));
    spdlog::info("applications list reloaded at revision {} with {} entries", initial->revision,
                 initial->entries.size());
  }
  current_ = std::move(initial);
}

Synchronizer::~Synchronizer() { stop(); }

std::uint64_t Synchronizer::write_list(std::span<const Change> batch) {
  std::lock_guard lk(write_mu_);
  auto base = std::atomic_load(&current_);
  if (batch.empty()) return base->revision;
  auto next = std::make_shared<ApplicationsList>(*base);
  ChangeApplier apply{*next, now_()};
  bool changed = false;
  for (const auto& c : batch) changed = std::visit(apply, c) || changed;
  if (changed) {
    ++next->revision;
    if (!persist_path_.empty()) fsutil::write_file_atomic(persist_path_, next->serialize());
    spdlog::info("revision {} ({} entries)", next->revision, next->entries.size());
  }
  std::atomic_store(&current_, std::shared_ptr<const ApplicationsList>(std::move(next)));
  return changed ? base->revision + 1 : base->revision;
}

std::shared_ptr<const ApplicationsList> Synchronizer::read_list() const { return std::atomic_load(&current_); }

void Synchronizer::enqueue(Change change) {
  {
    std::lock_guard lk(queue_mu_);
    queue_.push_back(std::move(change));
    ++enqueued_;
  }
  queue_cv_.notify_one();
}

void Synchronizer::start() {
  std::lock_guard lk(queue_mu_);
  if (writer_.joinable()) return;
  stopping_ = false;
  writer_ = std::thread([this] { writer_loop(); });
}

void Synchronizer::stop() {
  {
    std::lock_guard lk(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  if (writer_.joinable()) writer_.join();
}

void Synchronizer::flush() {
  std::unique_lock lk(queue_mu_);
  if (!writer_.joinable()) {
    std::vector<Change> batch(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
    queue_.clear();
    lk.unlock();
    write_list(batch);
    lk.lock();
    written_ += batch.size();
    return;
  }
  const auto target = enqueued_;
  drained_cv_.wait(lk, [&] { return written_ >= target; });
}

void Synchronizer::writer_loop() {
  std::unique_lock lk(queue_mu_);
  for (;;) {
    queue_cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
    if (queue_.empty() && stopping_) return;
    std::vector<Change> batch(std::make_move_iterator(queue_.begin()), std::make_move_iterator(queue_.end()));
    queue_.clear();
    lk.unlock();
    try {
      write_list(batch);
    } catch (const std::exception& e) {
      spdlog::error("write failed, batch of {} changes discarded: {}", batch.size(), e.what());
    }
    lk.lock();
    written_ += batch.size();
    drained_cv_.notify_all();
  }
}

// ---------------------------------------------------------------------------
// TrackerCore

TrackerCore::TrackerCore(Synchronizer& sync, TrackerConfig config, HostHook hook, NowFn now)
    : sync_(sync), config_(std::move(config)), hook_(std::move(hook)), now_(std::move(now)) {
  config_.liveness.check();
  blocklist_ = config_.blocklist;
}

std::optional<Message> TrackerCore::recv_message(std::string_view raw) const {
  auto msg = protocol::decode(raw);
  if (is_blocked(msg.sender)) return std::nullopt;
  return msg;
}

bool TrackerCore::is_blocked(const NodeId& id) const {
  std::lock_guard lk(mu_);
  return blocklist_.count(id) > 0;
}

bool TrackerCore::run_hook(const HostRecord& rec) {
  if (!hook_) return false;
  try {
    return hook_(rec);
  } catch (const std::exception& e) {
    spdlog::warn("host hook failed for {}: {}; host kept", rec.node.hex(), e.what());
    return false;
  }
}

void TrackerCore::block_host(const NodeId& id) {
  {
    std::lock_guard lk(mu_);
    blocklist_.insert(id);
    auto& rec = hosts_[id];
    rec.node = id;
    rec.blocked = true;
  }
  spdlog::info("host blocked: {}", id.hex());
  sync_.enqueue(RemoveHost{id});
}

void TrackerCore::touch_host(const NodeId& id, const std::optional<net::Endpoint>& address) {
  std::lock_guard lk(mu_);
  auto [it, inserted] = hosts_.try_emplace(id);
  auto& rec = it->second;
  rec.node = id;
  if (address) rec.address = *address;
  rec.last_seen = now_();
  rec.consecutive_misses = 0;
  if (inserted) spdlog::info("host added: {} at {}", id.hex(), rec.address.str());
}

Message TrackerCore::validate_message(const Message& msg, const std::string& peer_host) {
  using namespace protocol;
  const auto& sender = msg.sender;
  if (const auto* hello = msg.as<Hello>()) {
    const net::Endpoint addr{peer_host, hello->peer_port};
    touch_host(sender, addr);
    if (hook_ && run_hook(*host(sender))) {
      block_host(sender);
      return Message{self_, Error{"BLOCKED", "host vetoed"}};
    }
    sync_.enqueue(UpsertApps{sender, addr.str(), hello->apps, true});
    return init_list();
  }
  const auto known = host(sender);
  if (!known) return Message{self_, Error{"UNKNOWN_HOST", "send HELLO first"}};
  touch_host(sender, std::nullopt);
  if (const auto* offer = msg.as<Offer>()) {
    sync_.enqueue(UpsertApps{sender, known->address.str(), offer->apps, true});
  } else if (const auto* status = msg.as<StatusUpdate>()) {
    sync_.enqueue(StatusChange{sender, status->app, status->totals, status->parts_remaining});
  } else if (const auto* drop = msg.as<DropNotice>()) {
    sync_.enqueue(DropApp{sender, drop->app});
  } else {
    return Message{self_, Error{std::string(kUnexpected), std::string(kind_name(msg.kind()))}};
  }
  sync_.enqueue(RefreshHost{sender});
  return init_list();
}

void TrackerCore::validate_ping(const NodeId& id, bool alive) {
  std::optional<HostRecord> rec;
  bool expired = false;
  {
    std::lock_guard lk(mu_);
    auto it = hosts_.find(id);
    if (it == hosts_.end() || it->second.blocked) return;
    if (alive) {
      it->second.consecutive_misses = 0;
      it->second.last_seen = now_();
      rec = it->second;
    } else if (it->second.consecutive_misses + 1 >= config_.liveness.f) {
      hosts_.erase(it);
      expired = true;
    } else {
      ++it->second.consecutive_misses;
    }
  }
  if (expired) {
    spdlog::info("host expired: {} after {} missed periods", id.hex(), config_.liveness.f);
    sync_.enqueue(RemoveHost{id});
    return;
  }
  if (rec) {
    if (run_hook(*rec)) {
      block_host(id);
      return;
    }
    sync_.enqueue(RefreshHost{id});
  }
}

void TrackerCore::ping_hosts(const std::function<bool(const HostRecord&)>& pinger) {
  std::vector<HostRecord> targets;
  for (auto& h : hosts()) {
    if (!h.blocked) targets.push_back(h);
  }
  std::vector<std::future<bool>> replies;
  replies.reserve(targets.size());
  for (const auto& h : targets) {
    replies.push_back(std::async(std::launch::async, [&pinger, h] {
      try {
        return pinger(h);
      } catch (const std::exception&) {
        return false;
      }
    }));
  }
  for (std::size_t i = 0; i < targets.size(); ++i) validate_ping(targets[i].node, replies[i].get());
}

Message TrackerCore::init_list() {
  std::shared_ptr<const ApplicationsList> snap;
  {
    std::lock_guard lk(cache_mu_);
    const auto now = now_();
    if (!cache_ || now - cache_at_ >= config_.init_cache_ttl) {
      cache_ = sync_.read_list();
      cache_at_ = now;
      ++read_count_;
    }
    snap = cache_;
  }
  return Message{self_, protocol::ListPush{snap->revision, snap->announcements()}};
}

bool TrackerCore::push_list(const std::function<void(const HostRecord&, const Message&)>& send) {
  std::lock_guard lk(push_mu_);
  const auto now = now_();
  auto snap = sync_.read_list();
  if (snap->revision <= pushed_revision_) return false;
  if (last_push_ && now - *last_push_ < config_.push_interval) return false;
  const Message msg{self_, protocol::ListPush{snap->revision, snap->announcements()}};
  std::vector<std::future<void>> sends;
  for (const auto& h : hosts()) {
    if (h.blocked) continue;
    sends.push_back(std::async(std::launch::async, [&send, &msg, h] {
      try {
        send(h, msg);
      } catch (const std::exception& e) {
        spdlog::debug("push to {} failed: {}", h.address.str(), e.what());
      }
    }));
  }
  for (auto& s : sends) s.get();
  pushed_revision_ = snap->revision;
  last_push_ = now;
  return true;
}

std::vector<HostRecord> TrackerCore::hosts() const {
  std::lock_guard lk(mu_);
  std::vector<HostRecord> out;
  out.reserve(hosts_.size());
  for (const auto& [id, rec] : hosts_) out.push_back(rec);
  return out;
}

std::optional<HostRecord> TrackerCore::host(const NodeId& id) const {
  std::lock_guard lk(mu_);
  auto it = hosts_.find(id);
  if (it == hosts_.end()) return std::nullopt;
  return it->second;
}

void TrackerCore::adopt_persisted_hosts() {
  auto snap = sync_.read_list();
  std::lock_guard lk(mu_);
  for (const auto& [key, e] : snap->entries) {
    if (hosts_.count(key.first)) continue;
    HostRecord rec;
    rec.node = key.first;
    try {
      rec.address = net::Endpoint::parse(e.announcement.address);
    } catch (const std::invalid_argument&) {
      continue;
    }
    rec.last_seen = now_();
    rec.blocked = blocklist_.count(key.first) > 0;
    hosts_.emplace(key.first, rec);
  }
}

// ---------------------------------------------------------------------------
// Server

HostHook command_hook(std::string command) {
  return [command = std::move(command)](const HostRecord& rec) {
    const auto argv = process::shell_command(
        command, {rec.node.hex(), rec.address.str(), std::to_string(rec.consecutive_misses)});
    const auto r = process::run_capture(argv, std::chrono::milliseconds{10000});
    if (r.exited && r.exit_code == 0) return false;
    if (r.exited && r.exit_code == 1) return true;
    throw std::runtime_error("hook '" + command + "' did not exit with 0 or 1");
  };
}

std::set<NodeId> read_blocklist(const fs::path& path) {
  std::set<NodeId> out;
  const auto text = fsutil::read_file(path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }), line.end());
    if (line.empty() || line[0] == '#') continue;
    out.insert(NodeId::parse(line));
  }
  return out;
}

TrackerServer::TrackerServer(ServerConfig config) : config_(std::move(config)) {
  fs::create_directories(config_.data_dir);
  sync_ = std::make_unique<Synchronizer>(config_.data_dir / "applist.v1");
  HostHook hook;
  if (!config_.val_hook.empty()) hook = command_hook(config_.val_hook);
  core_ = std::make_unique<TrackerCore>(*sync_, config_.tracker, std::move(hook));
  core_->adopt_persisted_hosts();
  sync_->start();
  server_ = std::make_unique<net::TcpServer>(config_.port, [this](net::Connection& c) { handle(c); });
  fsutil::write_file_atomic(config_.data_dir / "tracker.port", std::to_string(server_->port()) + "\n");
  spdlog::info("tracker listening on port {}", server_->port());
  ping_thread_ = std::thread([this] { ping_loop(); });
  push_thread_ = std::thread([this] { push_loop(); });
}

TrackerServer::~TrackerServer() { stop(); }

std::uint16_t TrackerServer::port() const { return server_->port(); }

void TrackerServer::stop() {
  {
    std::lock_guard lk(stop_mu_);
    if (stopping_) return;
    stopping_ = true;
  }
  stop_cv_.notify_all();
  if (ping_thread_.joinable()) ping_thread_.join();
  if (push_thread_.joinable()) push_thread_.join();
  server_->stop();
  sync_->stop();
}

void TrackerServer::handle(net::Connection& conn) {
  auto frame = conn.read_frame();
  if (!frame) return;
  std::optional<Message> msg;
  try {
    msg = core_->recv_message(*frame);
  } catch (const protocol::ProtocolError& e) {
    spdlog::warn("closing connection from {}: {}", conn.peer_host(), e.what());
    return;
  }
  if (!msg) return;
  conn.send(core_->validate_message(*msg, conn.peer_host()));
}

void TrackerServer::ping_loop() {
  const auto period = config_.tracker.liveness.t;
  std::uint64_t nonce = 0;
  auto next = std::chrono::steady_clock::now() + period;
  std::unique_lock lk(stop_mu_);
  while (!stop_cv_.wait_until(lk, next, [this] { return stopping_; })) {
    next += period;
    if (next < std::chrono::steady_clock::now()) next = std::chrono::steady_clock::now() + period;
    lk.unlock();
    ++nonce;
    core_->ping_hosts([&](const HostRecord& h) {
      auto conn = net::Connection::open(h.address, config_.ping_timeout, config_.ping_timeout);
      conn.send(Message{core_->self(), protocol::Ping{nonce}});
      const auto reply = conn.receive();
      const auto* pong = reply.as<protocol::Pong>();
      return pong && pong->nonce == nonce && reply.sender == h.node;
    });
    lk.lock();
  }
}

void TrackerServer::push_loop() {
  std::unique_lock lk(stop_mu_);
  while (!stop_cv_.wait_for(lk, std::chrono::milliseconds{100}, [this] { return stopping_; })) {
    lk.unlock();
    core_->push_list([this](const HostRecord& h, const Message& msg) {
      auto conn = net::Connection::open(h.address, config_.ping_timeout, config_.ping_timeout);
      conn.send(msg);
    });
    lk.lock();
  }
}

}  // namespace vc::tracker
