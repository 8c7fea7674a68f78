#include "vc/events.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "vc/fsutil.hpp"

namespace vc::events {

namespace {
std::string field_or_dash(std::string_view s) { return s.empty() ? "-" : std::string(s); }

template <class T>
std::optional<T> parse_opt(std::string_view s) {
  if (s == "-") return std::nullopt;
  T v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size()) throw std::invalid_argument("bad numeric event field");
  return v;
}
}  // namespace

std::string format(const Event& e) {
  return fmt::format("{:.6f}\t{}\t{}\t{}\t{}\t{}\t{}", e.timestamp, field_or_dash(e.node), field_or_dash(e.event),
                     field_or_dash(e.app), e.part ? std::to_string(*e.part) : "-",
                     e.bytes ? std::to_string(*e.bytes) : "-",
                     e.seconds ? fmt::format("{:.17g}", *e.seconds) : "-");
}

Event parse(std::string_view line) {
  std::vector<std::string_view> f;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    f.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  if (f.size() != 7) throw std::invalid_argument("event record needs 7 fields");
  Event e;
  e.timestamp = parse_opt<double>(f[0]).value_or(0.0);
  e.node = f[1] == "-" ? "" : std::string(f[1]);
  e.event = std::string(f[2]);
  e.app = f[3] == "-" ? "" : std::string(f[3]);
  e.part = parse_opt<std::uint64_t>(f[4]);
  e.bytes = parse_opt<std::uint64_t>(f[5]);
  e.seconds = parse_opt<double>(f[6]);
  return e;
}

std::vector<Event> read_log(const std::filesystem::path& path) {
  std::vector<Event> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(parse(line));
    } catch (const std::invalid_argument&) {
      // torn write from a killed process
    }
  }
  return out;
}

void EventLog::record(Event e) {
  if (path_.empty()) return;
  if (e.timestamp == 0.0) e.timestamp = fsutil::epoch_seconds();
  const auto line = format(e);
  std::lock_guard lk(mu_);
  fsutil::append_line(path_, line);
}

void EventLog::record(std::string_view node, std::string_view event, std::string_view app,
                      std::optional<std::uint64_t> part, std::optional<std::uint64_t> bytes,
                      std::optional<double> seconds) {
  record(Event{0.0, std::string(node), std::string(event), std::string(app), part, bytes, seconds});
}

}  // namespace vc::events
