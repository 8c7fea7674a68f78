#pragma once

// Wire protocol v1. Every exchange between tracker, seeder and leecher is a
// single line of JSON terminated by '\n'. Binary payloads travel base64
// encoded next to their raw length.

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "vc/metrics.hpp"

namespace vc::protocol {

inline constexpr int kVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 16u * 1024u * 1024u;
inline constexpr std::uint16_t kDefaultTrackerPort = 6888;
inline constexpr std::uint16_t kDefaultPeerPort = 6889;

/// 128-bit volunteer identity, rendered as 32 lowercase hex characters.
class NodeId {
 public:
  NodeId() = default;
  static NodeId random();
  /// Throws std::invalid_argument unless `hex` is 32 hex characters.
  static NodeId parse(std::string_view hex);

  std::string hex() const;
  bool is_nil() const;

  auto operator<=>(const NodeId&) const = default;

 private:
  std::array<std::uint8_t, 16> bytes_{};
};

/// SHA-256 of an application file, rendered as 64 lowercase hex characters.
class AppId {
 public:
  AppId() = default;
  static AppId of_content(std::string_view bytes);
  static AppId parse(std::string_view hex);

  std::string hex() const;
  /// First 12 hex chars, for logs.
  std::string short_hex() const { return hex().substr(0, 12); }

  auto operator<=>(const AppId&) const = default;

 private:
  std::array<std::uint8_t, 32> bytes_{};
};

std::string base64_encode(std::string_view raw);
/// Throws std::invalid_argument on malformed input.
std::string base64_decode(std::string_view text);

struct AppAnnouncement {
  AppId app;
  NodeId host;
  std::string address;  // host:port where the seeder serves payloads
  metrics::MetricTriple metrics;
  std::uint64_t part_count = 0;
  std::uint64_t parts_remaining = 0;
  metrics::ValidationPolicy policy;

  bool operator==(const AppAnnouncement&) const = default;
};

struct Hello {
  std::uint16_t peer_port = 0;
  std::vector<AppAnnouncement> apps;
  bool operator==(const Hello&) const = default;
};
struct Offer {
  std::vector<AppAnnouncement> apps;
  bool operator==(const Offer&) const = default;
};
struct ListPush {
  std::uint64_t revision = 0;
  std::vector<AppAnnouncement> apps;
  bool operator==(const ListPush&) const = default;
};
struct Ping {
  std::uint64_t nonce = 0;
  bool operator==(const Ping&) const = default;
};
struct Pong {
  std::uint64_t nonce = 0;
  bool operator==(const Pong&) const = default;
};
struct StatusUpdate {
  AppId app;
  metrics::RunTotals totals;
  std::uint64_t parts_remaining = 0;
  bool operator==(const StatusUpdate&) const = default;
};
struct WorkRequest {
  AppId app;
  bool want_app = true;
  std::optional<std::uint64_t> part;  // re-request of a part already held
  bool operator==(const WorkRequest&) const = default;
};
struct AppPayload {
  AppId app;
  std::string payload;
  bool operator==(const AppPayload&) const = default;
};
struct DataPayload {
  AppId app;
  std::uint64_t part = 0;
  std::string payload;
  bool operator==(const DataPayload&) const = default;
};
struct ResultSubmit {
  AppId app;
  std::uint64_t part = 0;
  std::string payload;
  metrics::Bytes reported_d = 0;
  double reported_w = 0.0;
  bool operator==(const ResultSubmit&) const = default;
};
struct ResultAck {
  AppId app;
  std::uint64_t part = 0;
  std::string status;  // "accepted", "pending" or "duplicate"
  bool operator==(const ResultAck&) const = default;
};
struct ResultReject {
  AppId app;
  std::uint64_t part = 0;
  std::string reason;
  bool operator==(const ResultReject&) const = default;
};
struct DropNotice {
  AppId app;
  bool operator==(const DropNotice&) const = default;
};
struct Error {
  std::string code;
  std::string detail;
  bool operator==(const Error&) const = default;
};

// Error codes carried in Error::code.
inline constexpr std::string_view kNoWork = "NO_WORK";
inline constexpr std::string_view kUnknownApp = "UNKNOWN_APP";
inline constexpr std::string_view kUnknownKind = "UNKNOWN_KIND";
inline constexpr std::string_view kUnexpected = "UNEXPECTED";

// Alternative order fixes Kind numbering.
using Body = std::variant<Hello, Offer, ListPush, Ping, Pong, StatusUpdate, WorkRequest, AppPayload,
                          DataPayload, ResultSubmit, ResultAck, ResultReject, DropNotice, Error>;

enum class Kind {
  Hello,
  Offer,
  ListPush,
  Ping,
  Pong,
  StatusUpdate,
  WorkRequest,
  AppPayload,
  DataPayload,
  ResultSubmit,
  ResultAck,
  ResultReject,
  DropNotice,
  Error,
};

std::string_view kind_name(Kind kind);

struct Message {
  NodeId sender;
  Body body;

  Kind kind() const { return static_cast<Kind>(body.index()); }
  template <class T>
  const T* as() const { return std::get_if<T>(&body); }

  bool operator==(const Message&) const = default;
};

class ProtocolError : public std::runtime_error {
 public:
  enum class Code { FrameTooLarge, Parse, UnsupportedVersion };
  ProtocolError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

/// One frame including its trailing newline. Field order is stable so equal
/// messages encode to equal bytes.
std::string encode(const Message& msg);

/// Accepts a frame with or without its trailing newline. Unknown fields are
/// ignored; an unknown kind decodes to an Error body with code UNKNOWN_KIND.
Message decode(std::string_view frame);

}  // namespace vc::protocol
