#pragma once

// On-disk layout of an agent:
//   Seed/<AppId>/app                 offered application file
//   Seed/<AppId>/Data/<part>         data parts
//   Seed/<AppId>/Data/Tracker        assignment / reissue / acceptance log
//   Seed/<AppId>/result/<part>       accepted results
//   Leech/<AppId>/app                foreign application file
//   Leech/<AppId>/Data/<part>        current data part
//   Leech/<AppId>/Data/Time          per-cycle timing log
//   Leech/<AppId>/result/<part>      result awaiting acknowledgment
// Everything under Leech/ is temporary.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "vc/protocol.hpp"
#include "vc/workloads.hpp"

namespace vc::agent {

namespace fs = std::filesystem;
using protocol::AppId;

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SeedStore {
 public:
  explicit SeedStore(fs::path root);

  /// Copies the application and materializes one data part per unit.
  /// Re-importing identical content is a no-op.
  AppId import(std::string_view app_bytes, std::span<const workloads::WorkUnit> units);

  std::vector<AppId> apps() const;
  fs::path app_dir(const AppId& app) const { return root_ / app.hex(); }
  std::string read_app(const AppId& app) const;
  std::string read_part(const AppId& app, std::uint64_t part) const;
  std::uint64_t part_count(const AppId& app) const;

  void save_result(const AppId& app, std::uint64_t part, std::string_view payload);
  std::optional<std::string> load_result(const AppId& app, std::uint64_t part) const;
  std::set<std::uint64_t> result_parts(const AppId& app) const;

  void append_tracker_log(const AppId& app, std::string_view line);
  std::vector<std::string> tracker_log(const AppId& app) const;

 private:
  fs::path root_;
};

/// One line of Leech/<AppId>/Data/Time: "part begin end status"; end is
/// "-" when the run never reached its end mark.
struct TimeRecord {
  std::uint64_t part = 0;
  double begin = 0.0;
  std::optional<double> end;
  std::string status;  // ok | failed | incomplete

  std::string format() const;
  static TimeRecord parse(std::string_view line);
  bool operator==(const TimeRecord&) const = default;
};

class LeechStore {
 public:
  explicit LeechStore(fs::path root);

  fs::path app_dir(const AppId& app) const { return root_ / app.hex(); }
  fs::path app_path(const AppId& app) const { return app_dir(app) / "app"; }
  fs::path part_path(const AppId& app, std::uint64_t part) const;
  fs::path result_path(const AppId& app, std::uint64_t part) const;

  void store_app(const AppId& app, std::string_view bytes);
  void store_part(const AppId& app, std::uint64_t part, std::string_view bytes);

  /// SAVE.
  fs::path save_result(const AppId& app, std::uint64_t part, std::string_view payload);
  /// LOAD. Throws NotFound when nothing was saved.
  std::string load_result(const AppId& app, std::uint64_t part) const;
  std::vector<std::uint64_t> pending_results(const AppId& app) const;
  /// Drops the data part and result of an acknowledged cycle.
  void clear_part(const AppId& app, std::uint64_t part);

  void append_time(const AppId& app, const TimeRecord& rec);
  std::vector<TimeRecord> time_log(const AppId& app) const;

  /// Removes Leech/<AppId> entirely. Idempotent.
  void remove(const AppId& app);
  bool exists(const AppId& app) const { return fs::exists(app_dir(app)); }
  std::vector<AppId> apps() const;

 private:
  fs::path root_;
};

}  // namespace vc::agent
