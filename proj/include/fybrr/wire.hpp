#pragma once

// Signaling wire format: one JSON object per newline-delimited record,
// protocol version tagged in every message. Requests carry a per-connection
// strictly increasing seq; replies echo it as re_seq and server pushes carry
// the seq of the request that triggered them as cause_seq.

#include <optional>
#include <string>

#include <json.hpp>

#include "fybrr/core.hpp"

namespace fybrr {

constexpr int kWireVersion = 1;

enum class MessageType {
  kJoin,
  kJoinAck,
  kLeave,
  kLeaveAck,
  kPing,
  kPong,
  kParentAssign,
  kAuxActivate,
  kAuxRelease,
  kStatsUpdate,
  kStatsAck,
  kRoomCreate,
  kRoomCreated,
  kError,
};

inline const char* to_string(MessageType t) {
  switch (t) {
    case MessageType::kJoin: return "JOIN";
    case MessageType::kJoinAck: return "JOIN_ACK";
    case MessageType::kLeave: return "LEAVE";
    case MessageType::kLeaveAck: return "LEAVE_ACK";
    case MessageType::kPing: return "PING";
    case MessageType::kPong: return "PONG";
    case MessageType::kParentAssign: return "PARENT_ASSIGN";
    case MessageType::kAuxActivate: return "AUX_ACTIVATE";
    case MessageType::kAuxRelease: return "AUX_RELEASE";
    case MessageType::kStatsUpdate: return "STATS_UPDATE";
    case MessageType::kStatsAck: return "STATS_ACK";
    case MessageType::kRoomCreate: return "ROOM_CREATE";
    case MessageType::kRoomCreated: return "ROOM_CREATED";
    case MessageType::kError: return "ERROR";
  }
  return "?";
}

inline std::optional<MessageType> parse_message_type(const std::string& s) {
  static const std::map<std::string, MessageType> table = {
      {"JOIN", MessageType::kJoin},
      {"JOIN_ACK", MessageType::kJoinAck},
      {"LEAVE", MessageType::kLeave},
      {"LEAVE_ACK", MessageType::kLeaveAck},
      {"PING", MessageType::kPing},
      {"PONG", MessageType::kPong},
      {"PARENT_ASSIGN", MessageType::kParentAssign},
      {"AUX_ACTIVATE", MessageType::kAuxActivate},
      {"AUX_RELEASE", MessageType::kAuxRelease},
      {"STATS_UPDATE", MessageType::kStatsUpdate},
      {"STATS_ACK", MessageType::kStatsAck},
      {"ROOM_CREATE", MessageType::kRoomCreate},
      {"ROOM_CREATED", MessageType::kRoomCreated},
      {"ERROR", MessageType::kError},
  };
  auto it = table.find(s);
  if (it == table.end()) return std::nullopt;
  return it->second;
}

struct WireMessage {
  int v = kWireVersion;
  MessageType type = MessageType::kError;
  std::string room_id;
  PeerId peer_id;
  std::uint64_t seq = 0;
  std::optional<std::uint64_t> re_seq;     // reply correlation
  std::optional<std::uint64_t> cause_seq;  // push correlation
  nlohmann::json payload = nlohmann::json::object();

  friend bool operator==(const WireMessage& a, const WireMessage& b) {
    return a.v == b.v && a.type == b.type && a.room_id == b.room_id && a.peer_id == b.peer_id &&
           a.seq == b.seq && a.re_seq == b.re_seq && a.cause_seq == b.cause_seq &&
           a.payload == b.payload;
  }
};

inline std::string encode_message(const WireMessage& m) {
  nlohmann::json j{{"v", m.v}, {"type", to_string(m.type)}, {"seq", m.seq}};
  if (!m.room_id.empty()) j["room"] = m.room_id;
  if (!m.peer_id.empty()) j["peer"] = m.peer_id;
  if (m.re_seq) j["re_seq"] = *m.re_seq;
  if (m.cause_seq) j["cause_seq"] = *m.cause_seq;
  if (!m.payload.empty()) j["payload"] = m.payload;
  return j.dump();
}

inline WireMessage decode_message(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::bad_message, std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::bad_message, "message must be a JSON object");
  WireMessage m;
  m.v = j.value("v", 0);
  if (m.v != kWireVersion) throw Error(Errc::bad_message, "unsupported protocol version");
  std::string type = j.value("type", "");
  auto parsed = parse_message_type(type);
  if (!parsed) throw Error(Errc::bad_message, "unknown message type '" + type + "'");
  m.type = *parsed;
  m.room_id = j.value("room", "");
  m.peer_id = j.value("peer", "");
  if (!j.contains("seq") || !j["seq"].is_number_unsigned())
    throw Error(Errc::bad_message, "missing or invalid seq");
  m.seq = j["seq"].get<std::uint64_t>();
  if (j.contains("re_seq")) m.re_seq = j["re_seq"].get<std::uint64_t>();
  if (j.contains("cause_seq")) m.cause_seq = j["cause_seq"].get<std::uint64_t>();
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw Error(Errc::bad_message, "payload must be an object");
    m.payload = j["payload"];
  }
  return m;
}

inline WireMessage make_error(const WireMessage& req, Errc code, const std::string& text) {
  WireMessage m;
  m.type = MessageType::kError;
  m.room_id = req.room_id;
  m.peer_id = req.peer_id;
  m.re_seq = req.seq;
  m.payload = {{"code", to_string(code)}, {"text", text}};
  return m;
}

}  // namespace fybrr
