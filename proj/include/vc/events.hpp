#pragma once

// Newline-delimited event records shared by agents and the harness:
//   timestamp <TAB> node <TAB> event <TAB> app <TAB> part <TAB> bytes <TAB> seconds
// Unused fields are "-". The harness computes every report figure from
// these records.

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vc::events {

struct Event {
  double timestamp = 0.0;
  std::string node;
  std::string event;
  std::string app;
  std::optional<std::uint64_t> part;
  std::optional<std::uint64_t> bytes;
  std::optional<double> seconds;

  bool operator==(const Event&) const = default;
};

std::string format(const Event& e);
/// Throws std::invalid_argument on a malformed line.
Event parse(std::string_view line);
/// Skips a torn trailing line.
std::vector<Event> read_log(const std::filesystem::path& path);

class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(std::filesystem::path path) : path_(std::move(path)) {}

  void record(Event e);
  void record(std::string_view node, std::string_view event, std::string_view app,
              std::optional<std::uint64_t> part = {}, std::optional<std::uint64_t> bytes = {},
              std::optional<double> seconds = {});
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mu_;
};

}  // namespace vc::events
