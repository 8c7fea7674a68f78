#include "vc/protocol.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include "json_codec.hpp"
#include <limits>
#include <random>

namespace vc::protocol {

using nlohmann::json;

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

template <std::size_t N>
std::string to_hex(const std::array<std::uint8_t, N>& bytes) {
  std::string out;
  out.reserve(N * 2);
  for (auto b : bytes) {
    out.push_back(kHexDigits[b >> 4]);
    out.push_back(kHexDigits[b & 0xf]);
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

template <std::size_t N>
std::array<std::uint8_t, N> from_hex(std::string_view hex, const char* what) {
  if (hex.size() != N * 2) throw std::invalid_argument(std::string(what) + " must be " + std::to_string(N * 2) + " lowercase hex chars");
  std::array<std::uint8_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw std::invalid_argument(std::string(what) + " contains a non-hex character");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

}  // namespace

NodeId NodeId::random() {
  std::random_device rd;
  NodeId id;
  for (std::size_t i = 0; i < id.bytes_.size(); i += 4) {
    const auto word = rd();
    for (std::size_t j = 0; j < 4; ++j) id.bytes_[i + j] = static_cast<std::uint8_t>(word >> (8 * j));
  }
  return id;
}

NodeId NodeId::parse(std::string_view hex) {
  NodeId id;
  id.bytes_ = from_hex<16>(hex, "node id");
  return id;
}

std::string NodeId::hex() const { return to_hex(bytes_); }

bool NodeId::is_nil() const {
  for (auto b : bytes_) {
    if (b != 0) return false;
  }
  return true;
}

AppId AppId::of_content(std::string_view bytes) {
  AppId id;
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), id.bytes_.data());
  return id;
}

AppId AppId::parse(std::string_view hex) {
  AppId id;
  id.bytes_ = from_hex<32>(hex, "app id");
  return id;
}

std::string AppId::hex() const { return to_hex(bytes_); }

std::string base64_encode(std::string_view raw) {
  std::string out(4 * ((raw.size() + 2) / 3), '\0');
  if (raw.empty()) return out;
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(raw.data()),
                                static_cast<int>(raw.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.empty()) return {};
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  for (char c : text) {
    const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '+' ||
                    c == '/' || c == '=';
    if (!ok) throw std::invalid_argument("invalid base64 character");
  }
  std::size_t padding = 0;
  if (text.back() == '=') ++padding;
  if (text.size() >= 2 && text[text.size() - 2] == '=') ++padding;
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0 || static_cast<std::size_t>(n) < padding) throw std::invalid_argument("malformed base64");
  out.resize(static_cast<std::size_t>(n) - padding);
  return out;
}

std::string_view kind_name(Kind kind) {
  switch (kind) {
    case Kind::Hello: return "HELLO";
    case Kind::Offer: return "OFFER";
    case Kind::ListPush: return "LIST_PUSH";
    case Kind::Ping: return "PING";
    case Kind::Pong: return "PONG";
    case Kind::StatusUpdate: return "STATUS_UPDATE";
    case Kind::WorkRequest: return "WORK_REQUEST";
    case Kind::AppPayload: return "APP_PAYLOAD";
    case Kind::DataPayload: return "DATA_PAYLOAD";
    case Kind::ResultSubmit: return "RESULT_SUBMIT";
    case Kind::ResultAck: return "RESULT_ACK";
    case Kind::ResultReject: return "RESULT_REJECT";
    case Kind::DropNotice: return "DROP_NOTICE";
    case Kind::Error: return "ERROR";
  }
  return "ERROR";
}

namespace {

// ---- encoding ----

void put_payload(json& j, const std::string& payload) {
  j["length"] = payload.size();
  j["data"] = base64_encode(payload);
}

}  // namespace

namespace detail {
json announcement_json(const AppAnnouncement& a) {
  json j;
  j["app"] = a.app.hex();
  j["host"] = a.host.hex();
  j["address"] = a.address;
  j["d"] = a.metrics.d;
  j["p"] = a.metrics.p;
  j["w"] = a.metrics.w ? json(*a.metrics.w) : json(nullptr);
  j["part_count"] = a.part_count;
  j["parts_remaining"] = a.parts_remaining;
  j["m_min"] = a.policy.m_min;
  j["m_max"] = a.policy.m_max;
  return j;
}
}  // namespace detail

namespace {
using detail::announcement_json;

json announcements_json(const std::vector<AppAnnouncement>& apps) {
  json arr = json::array();
  for (const auto& a : apps) arr.push_back(announcement_json(a));
  return arr;
}

struct BodyEncoder {
  json& j;
  void operator()(const Hello& b) {
    j["peer_port"] = b.peer_port;
    j["apps"] = announcements_json(b.apps);
  }
  void operator()(const Offer& b) { j["apps"] = announcements_json(b.apps); }
  void operator()(const ListPush& b) {
    j["revision"] = b.revision;
    j["apps"] = announcements_json(b.apps);
  }
  void operator()(const Ping& b) { j["nonce"] = b.nonce; }
  void operator()(const Pong& b) { j["nonce"] = b.nonce; }
  void operator()(const StatusUpdate& b) {
    j["app"] = b.app.hex();
    j["runs"] = b.totals.runs;
    j["bytes"] = b.totals.bytes;
    j["seconds"] = b.totals.seconds;
    j["parts_remaining"] = b.parts_remaining;
  }
  void operator()(const WorkRequest& b) {
    j["app"] = b.app.hex();
    j["want_app"] = b.want_app;
    if (b.part) j["part"] = *b.part;
  }
  void operator()(const AppPayload& b) {
    j["app"] = b.app.hex();
    put_payload(j, b.payload);
  }
  void operator()(const DataPayload& b) {
    j["app"] = b.app.hex();
    j["part"] = b.part;
    put_payload(j, b.payload);
  }
  void operator()(const ResultSubmit& b) {
    j["app"] = b.app.hex();
    j["part"] = b.part;
    j["reported_d"] = b.reported_d;
    j["reported_w"] = b.reported_w;
    put_payload(j, b.payload);
  }
  void operator()(const ResultAck& b) {
    j["app"] = b.app.hex();
    j["part"] = b.part;
    j["status"] = b.status;
  }
  void operator()(const ResultReject& b) {
    j["app"] = b.app.hex();
    j["part"] = b.part;
    j["reason"] = b.reason;
  }
  void operator()(const DropNotice& b) { j["app"] = b.app.hex(); }
  void operator()(const Error& b) {
    j["code"] = b.code;
    j["detail"] = b.detail;
  }
};

// ---- decoding ----

[[noreturn]] void parse_fail(const std::string& what) { throw ProtocolError(ProtocolError::Code::Parse, what); }

const json& field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) parse_fail(std::string("missing field '") + key + "'");
  return *it;
}

std::uint64_t get_u64(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_number_unsigned()) parse_fail(std::string("field '") + key + "' is not a non-negative integer");
  return v.get<std::uint64_t>();
}

template <class T>
T get_uint(const json& j, const char* key) {
  const auto v = get_u64(j, key);
  if (v > std::numeric_limits<T>::max()) parse_fail(std::string("field '") + key + "' out of range");
  return static_cast<T>(v);
}

double get_nonneg_double(const json& v, const char* key) {
  if (!v.is_number()) parse_fail(std::string("field '") + key + "' is not a number");
  const double d = v.get<double>();
  if (!(d >= 0.0)) parse_fail(std::string("field '") + key + "' is negative");
  return d;
}

std::string get_string(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_string()) parse_fail(std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

bool get_bool(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (!v.is_boolean()) parse_fail(std::string("field '") + key + "' is not a boolean");
  return v.get<bool>();
}

AppId get_app(const json& j, const char* key = "app") {
  try {
    return AppId::parse(get_string(j, key));
  } catch (const std::invalid_argument& e) {
    parse_fail(e.what());
  }
}

NodeId get_node(const json& j, const char* key) {
  try {
    return NodeId::parse(get_string(j, key));
  } catch (const std::invalid_argument& e) {
    parse_fail(e.what());
  }
}

std::string get_payload(const json& j) {
  const auto length = get_u64(j, "length");
  std::string raw;
  try {
    raw = base64_decode(get_string(j, "data"));
  } catch (const std::invalid_argument& e) {
    parse_fail(e.what());
  }
  if (raw.size() != length) parse_fail("declared payload length does not match payload");
  return raw;
}

}  // namespace

namespace detail {
AppAnnouncement announcement_from(const json& j) {
  if (!j.is_object()) parse_fail("announcement is not an object");
  AppAnnouncement a;
  a.app = get_app(j);
  a.host = get_node(j, "host");
  a.address = get_string(j, "address");
  a.metrics.d = get_u64(j, "d");
  a.metrics.p = get_u64(j, "p");
  const auto& w = field(j, "w");
  if (!w.is_null()) a.metrics.w = get_nonneg_double(w, "w");
  a.part_count = get_u64(j, "part_count");
  a.parts_remaining = get_u64(j, "parts_remaining");
  a.policy.m_min = get_uint<std::uint32_t>(j, "m_min");
  a.policy.m_max = get_uint<std::uint32_t>(j, "m_max");
  if (a.parts_remaining > a.part_count) parse_fail("parts_remaining exceeds part_count");
  if (!a.policy.valid()) parse_fail("announcement carries an invalid validation policy");
  return a;
}
}  // namespace detail

namespace {
AppAnnouncement get_announcement(const json& j) { return detail::announcement_from(j); }

std::vector<AppAnnouncement> get_announcements(const json& j) {
  const auto& arr = field(j, "apps");
  if (!arr.is_array()) parse_fail("'apps' is not an array");
  std::vector<AppAnnouncement> out;
  out.reserve(arr.size());
  for (const auto& a : arr) out.push_back(get_announcement(a));
  return out;
}

Body decode_body(std::string_view kind, const json& j) {
  if (kind == "HELLO") return Hello{get_uint<std::uint16_t>(j, "peer_port"), get_announcements(j)};
  if (kind == "OFFER") return Offer{get_announcements(j)};
  if (kind == "LIST_PUSH") return ListPush{get_u64(j, "revision"), get_announcements(j)};
  if (kind == "PING") return Ping{get_u64(j, "nonce")};
  if (kind == "PONG") return Pong{get_u64(j, "nonce")};
  if (kind == "STATUS_UPDATE") {
    StatusUpdate b;
    b.app = get_app(j);
    b.totals.runs = get_u64(j, "runs");
    b.totals.bytes = get_u64(j, "bytes");
    b.totals.seconds = get_nonneg_double(field(j, "seconds"), "seconds");
    b.parts_remaining = get_u64(j, "parts_remaining");
    return b;
  }
  if (kind == "WORK_REQUEST") {
    WorkRequest b;
    b.app = get_app(j);
    b.want_app = get_bool(j, "want_app");
    if (j.contains("part")) b.part = get_u64(j, "part");
    return b;
  }
  if (kind == "APP_PAYLOAD") return AppPayload{get_app(j), get_payload(j)};
  if (kind == "DATA_PAYLOAD") return DataPayload{get_app(j), get_u64(j, "part"), get_payload(j)};
  if (kind == "RESULT_SUBMIT") {
    ResultSubmit b;
    b.app = get_app(j);
    b.part = get_u64(j, "part");
    b.payload = get_payload(j);
    b.reported_d = get_u64(j, "reported_d");
    b.reported_w = get_nonneg_double(field(j, "reported_w"), "reported_w");
    return b;
  }
  if (kind == "RESULT_ACK") return ResultAck{get_app(j), get_u64(j, "part"), get_string(j, "status")};
  if (kind == "RESULT_REJECT") return ResultReject{get_app(j), get_u64(j, "part"), get_string(j, "reason")};
  if (kind == "DROP_NOTICE") return DropNotice{get_app(j)};
  if (kind == "ERROR") return Error{get_string(j, "code"), get_string(j, "detail")};
  return Error{std::string(kUnknownKind), std::string(kind)};
}

}  // namespace

std::string encode(const Message& msg) {
  json j;
  j["v"] = kVersion;
  j["kind"] = kind_name(msg.kind());
  j["sender"] = msg.sender.hex();
  std::visit(BodyEncoder{j}, msg.body);
  // std::map-backed objects serialize keys in sorted order.
  std::string out = j.dump();
  out.push_back('\n');
  if (out.size() > kMaxFrameBytes) {
    throw ProtocolError(ProtocolError::Code::FrameTooLarge,
                        "frame of " + std::to_string(out.size()) + " bytes exceeds the 16 MiB limit");
  }
  return out;
}

Message decode(std::string_view frame) {
  if (!frame.empty() && frame.back() == '\n') frame.remove_suffix(1);
  if (frame.size() > kMaxFrameBytes) throw ProtocolError(ProtocolError::Code::FrameTooLarge, "frame exceeds the 16 MiB limit");
  if (frame.find('\n') != std::string_view::npos) parse_fail("frame contains an embedded newline");
  json j;
  try {
    j = json::parse(frame);
  } catch (const json::exception& e) {
    parse_fail(std::string("malformed frame: ") + e.what());
  }
  if (!j.is_object()) parse_fail("frame is not an object");
  const auto& v = field(j, "v");
  if (!v.is_number_integer()) parse_fail("protocol version is not an integer");
  if (v.get<std::int64_t>() != kVersion) {
    throw ProtocolError(ProtocolError::Code::UnsupportedVersion,
                        "unsupported protocol version " + std::to_string(v.get<std::int64_t>()));
  }
  Message msg;
  msg.sender = get_node(j, "sender");
  msg.body = decode_body(get_string(j, "kind"), j);
  return msg;
}

}  // namespace vc::protocol
