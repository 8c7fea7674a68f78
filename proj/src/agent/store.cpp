#include "vc/agent/store.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "vc/fsutil.hpp"

namespace vc::agent {

namespace {

std::optional<std::uint64_t> part_index(const fs::path& p) {
  const auto name = p.filename().string();
  std::uint64_t v = 0;
  auto [end, ec] = std::from_chars(name.data(), name.data() + name.size(), v);
  if (name.empty() || ec != std::errc{} || end != name.data() + name.size()) return std::nullopt;
  return v;
}

std::vector<AppId> app_dirs(const fs::path& root) {
  std::vector<AppId> out;
  if (!fs::exists(root)) return out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    try {
      out.push_back(AppId::parse(entry.path().filename().string()));
    } catch (const std::invalid_argument&) {
    }
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

SeedStore::SeedStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

AppId SeedStore::import(std::string_view app_bytes, std::span<const workloads::WorkUnit> units) {
  const auto id = AppId::of_content(app_bytes);
  const auto dir = app_dir(id);
  if (fs::exists(dir / "app") && part_count(id) == units.size()) return id;
  fs::create_directories(dir / "Data");
  fs::create_directories(dir / "result");
  for (const auto& u : units) {
    fsutil::write_file_atomic(dir / "Data" / std::to_string(u.index), workloads::encode_data_part(u));
  }
  fsutil::write_file_atomic(dir / "app", app_bytes);
  return id;
}

std::vector<AppId> SeedStore::apps() const { return app_dirs(root_); }

std::string SeedStore::read_app(const AppId& app) const { return fsutil::read_file(app_dir(app) / "app"); }

std::string SeedStore::read_part(const AppId& app, std::uint64_t part) const {
  const auto p = app_dir(app) / "Data" / std::to_string(part);
  if (!fs::exists(p)) throw NotFound("no data part " + std::to_string(part));
  return fsutil::read_file(p);
}

std::uint64_t SeedStore::part_count(const AppId& app) const {
  const auto dir = app_dir(app) / "Data";
  if (!fs::exists(dir)) return 0;
  std::uint64_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && part_index(entry.path())) ++n;
  }
  return n;
}

void SeedStore::save_result(const AppId& app, std::uint64_t part, std::string_view payload) {
  fs::create_directories(app_dir(app) / "result");
  fsutil::write_file_atomic(app_dir(app) / "result" / std::to_string(part), payload);
}

std::optional<std::string> SeedStore::load_result(const AppId& app, std::uint64_t part) const {
  const auto p = app_dir(app) / "result" / std::to_string(part);
  if (!fs::exists(p)) return std::nullopt;
  return fsutil::read_file(p);
}

std::set<std::uint64_t> SeedStore::result_parts(const AppId& app) const {
  std::set<std::uint64_t> out;
  const auto dir = app_dir(app) / "result";
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (auto idx = part_index(entry.path())) out.insert(*idx);
  }
  return out;
}

void SeedStore::append_tracker_log(const AppId& app, std::string_view line) {
  fsutil::append_line(app_dir(app) / "Data" / "Tracker", line);
}

std::vector<std::string> SeedStore::tracker_log(const AppId& app) const {
  return read_lines(app_dir(app) / "Data" / "Tracker");
}

// ---------------------------------------------------------------------------

std::string TimeRecord::format() const {
  return fmt::format("{} {:.6f} {} {}", part, begin, end ? fmt::format("{:.6f}", *end) : "-", status);
}

TimeRecord TimeRecord::parse(std::string_view line) {
  std::istringstream in{std::string(line)};
  TimeRecord r;
  std::string end;
  if (!(in >> r.part >> r.begin >> end >> r.status)) throw std::invalid_argument("malformed time log line");
  if (end != "-") r.end = std::stod(end);
  return r;
}

LeechStore::LeechStore(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

fs::path LeechStore::part_path(const AppId& app, std::uint64_t part) const {
  return app_dir(app) / "Data" / std::to_string(part);
}

fs::path LeechStore::result_path(const AppId& app, std::uint64_t part) const {
  return app_dir(app) / "result" / std::to_string(part);
}

void LeechStore::store_app(const AppId& app, std::string_view bytes) {
  fs::create_directories(app_dir(app));
  fsutil::write_file_atomic(app_path(app), bytes);
}

void LeechStore::store_part(const AppId& app, std::uint64_t part, std::string_view bytes) {
  fs::create_directories(app_dir(app) / "Data");
  fsutil::write_file_atomic(part_path(app, part), bytes);
}

fs::path LeechStore::save_result(const AppId& app, std::uint64_t part, std::string_view payload) {
  fs::create_directories(app_dir(app) / "result");
  const auto p = result_path(app, part);
  fsutil::write_file_atomic(p, payload);
  return p;
}

std::string LeechStore::load_result(const AppId& app, std::uint64_t part) const {
  const auto p = result_path(app, part);
  if (!fs::exists(p)) throw NotFound("no saved result for part " + std::to_string(part));
  return fsutil::read_file(p);
}

std::vector<std::uint64_t> LeechStore::pending_results(const AppId& app) const {
  std::vector<std::uint64_t> out;
  const auto dir = app_dir(app) / "result";
  if (!fs::exists(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (auto idx = part_index(entry.path())) out.push_back(*idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void LeechStore::clear_part(const AppId& app, std::uint64_t part) {
  std::error_code ec;
  fs::remove(part_path(app, part), ec);
  fs::remove(result_path(app, part), ec);
}

void LeechStore::append_time(const AppId& app, const TimeRecord& rec) {
  fs::create_directories(app_dir(app) / "Data");
  fsutil::append_line(app_dir(app) / "Data" / "Time", rec.format());
}

std::vector<TimeRecord> LeechStore::time_log(const AppId& app) const {
  std::vector<TimeRecord> out;
  for (const auto& line : read_lines(app_dir(app) / "Data" / "Time")) {
    try {
      out.push_back(TimeRecord::parse(line));
    } catch (const std::exception&) {
    }
  }
  return out;
}

void LeechStore::remove(const AppId& app) {
  std::error_code ec;
  fs::remove_all(app_dir(app), ec);
}

std::vector<AppId> LeechStore::apps() const { return app_dirs(root_); }

}  // namespace vc::agent
