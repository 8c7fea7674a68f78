#pragma once

// JSON helpers shared by the wire codec and the tracker's persistence file.

#include <json.hpp>

#include "vc/protocol.hpp"

namespace vc::protocol::detail {

nlohmann::json announcement_json(const AppAnnouncement& a);
/// Throws ProtocolError(Parse).
AppAnnouncement announcement_from(const nlohmann::json& j);

}  // namespace vc::protocol::detail
