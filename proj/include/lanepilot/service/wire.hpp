#pragma once

// JSON text messages exchanged over the /ws channel. Schemas are documented
// in docs/wire-protocol.md.

#include <boost/beast/core/detail/base64.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "lanepilot/common/error.hpp"
#include "lanepilot/dataset/pgm.hpp"
#include "lanepilot/sim/geometry.hpp"
#include "lanepilot/sim/render.hpp"

namespace lanepilot::service {

enum class MessageKind {
  Telemetry,
  Frame,
  Control,
  TakeoverBegin,
  TakeoverEnd,
  RecordBegin,
  RecordEnd,
  Error,
};

inline const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::Telemetry: return "telemetry";
    case MessageKind::Frame: return "frame";
    case MessageKind::Control: return "control";
    case MessageKind::TakeoverBegin: return "takeover_begin";
    case MessageKind::TakeoverEnd: return "takeover_end";
    case MessageKind::RecordBegin: return "record_begin";
    case MessageKind::RecordEnd: return "record_end";
    case MessageKind::Error: return "error";
  }
  return "?";
}

inline std::optional<MessageKind> kind_from_string(std::string_view s) {
  for (auto k : {MessageKind::Telemetry, MessageKind::Frame, MessageKind::Control, MessageKind::TakeoverBegin,
                 MessageKind::TakeoverEnd, MessageKind::RecordBegin, MessageKind::RecordEnd, MessageKind::Error}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

// A message sent by a client. Only control, takeover_* and record_* are
// accepted inbound.
struct ClientMessage {
  MessageKind kind = MessageKind::Control;
  std::optional<std::uint64_t> tick;  // tick the client was looking at, informational
  double steering = 0.0;
  double throttle = 0.0;
};

inline ClientMessage parse_client_message(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("message is not valid JSON");
  }
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw FormatError("message needs a string 'kind'");
  }
  const auto kind = kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw FormatError("unknown message kind '" + j.at("kind").get<std::string>() + "'");
  ClientMessage m;
  m.kind = *kind;
  switch (m.kind) {
    case MessageKind::Control:
    case MessageKind::TakeoverBegin:
    case MessageKind::TakeoverEnd:
    case MessageKind::RecordBegin:
    case MessageKind::RecordEnd:
      break;
    default:
      throw FormatError(std::string("clients may not send '") + to_string(m.kind) + "' messages");
  }
  if (auto it = j.find("tick"); it != j.end()) {
    if (!it->is_number_unsigned()) throw FormatError("'tick' must be a non-negative integer");
    m.tick = it->get<std::uint64_t>();
  }
  if (m.kind == MessageKind::Control) {
    const auto number = [&](const char* key) {
      const auto it = j.find(key);
      if (it == j.end() || !it->is_number()) throw FormatError(std::string("control needs a numeric '") + key + "'");
      return it->get<double>();
    };
    m.steering = number("steering");
    m.throttle = number("throttle");
    if (!std::isfinite(m.steering) || std::abs(m.steering) > sim::kPi / 2.0) {
      throw FormatError("steering must lie in [-pi/2, pi/2]");
    }
    if (!std::isfinite(m.throttle) || m.throttle < 0.0 || m.throttle > 1.0) {
      throw FormatError("throttle must lie in [0, 1]");
    }
  }
  return m;
}

inline std::string base64_encode(std::string_view bytes) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

inline std::string base64_decode(std::string_view text) {
  namespace b64 = boost::beast::detail::base64;
  std::string out(b64::decoded_size(text.size()), '\0');
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  // Decoding stops at the first non-alphabet character; only padding may follow.
  if (text.find_first_not_of('=', read) != std::string_view::npos || text.size() - read > 2) {
    throw FormatError("invalid base64 payload");
  }
  out.resize(written);
  return out;
}

inline std::string frame_message(std::uint64_t tick, const sim::CameraFrame& f) {
  return nlohmann::json{{"kind", "frame"},
                        {"tick", tick},
                        {"width", f.width},
                        {"height", f.height},
                        {"encoding", "pgm;base64"},
                        {"data", base64_encode(dataset::encode_pgm(f))}}
      .dump();
}

inline std::string error_message(std::optional<std::uint64_t> tick, const std::string& text) {
  nlohmann::json j{{"kind", "error"}, {"message", text}};
  j["tick"] = tick ? nlohmann::json(*tick) : nlohmann::json(nullptr);
  return j.dump();
}

}  // namespace lanepilot::service
