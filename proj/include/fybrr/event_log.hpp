#pragma once

// Append-only event log of every accepted mutating operation, one JSON record
// per line. Replaying a log through the engine rebuilds the room registry
// field for field, which is what makes the server recoverable and the fuzz
// suite able to diff live against replayed state.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fybrr/overlay.hpp"

namespace fybrr {

struct LogRecord {
  std::string op;  // ROOM_CREATE | JOIN | LEAVE | FAIL | STATS | ROOM_CLOSE
  nlohmann::json fields;

  std::string to_line() const {
    nlohmann::json j = fields;
    j["v"] = kLogVersion;
    j["op"] = op;
    return j.dump();
  }

  static constexpr int kLogVersion = 1;
};

inline LogRecord log_room_create(const RoomState& room, const PeerRecord& source) {
  return {"ROOM_CREATE",
          {{"room", room.room_id},
           {"peer", source.id},
           {"bw", source.upload_bandwidth_mbps},
           {"latency", source.latency_s},
           {"rate", room.streaming_rate_mbps},
           {"slot_policy", to_string(room.slot_policy)},
           {"params",
            {{"k1", room.params.k1},
             {"k2", room.params.k2},
             {"k3", room.params.k3},
             {"latency_floor_s", room.params.latency_floor_s},
             {"failure_floor", room.params.failure_floor},
             {"min_slots", room.params.min_slots},
             {"max_slots", room.params.max_slots}}}}};
}

// Joins log the record exactly as accepted so replay feeds join_peer the same
// inputs; the tombstone merge then reproduces itself.
inline LogRecord log_join(const std::string& room_id, const PeerRecord& peer) {
  return {"JOIN",
          {{"room", room_id},
           {"peer", peer.id},
           {"bw", peer.upload_bandwidth_mbps},
           {"latency", peer.latency_s},
           {"duration", peer.active_duration_s},
           {"failures", peer.num_of_failure},
           {"score", peer.score},
           {"slots", peer.slots}}};
}

inline LogRecord log_leave(const std::string& room_id, const PeerId& peer) {
  return {"LEAVE", {{"room", room_id}, {"peer", peer}}};
}

inline LogRecord log_fail(const std::string& room_id, const PeerId& peer) {
  return {"FAIL", {{"room", room_id}, {"peer", peer}}};
}

inline LogRecord log_stats(const std::string& room_id, const PeerId& peer, double latency_s,
                           double duration_s) {
  return {"STATS",
          {{"room", room_id}, {"peer", peer}, {"latency", latency_s}, {"duration", duration_s}}};
}

inline LogRecord log_room_close(const std::string& room_id) {
  return {"ROOM_CLOSE", {{"room", room_id}}};
}

class EventLog {
 public:
  EventLog() = default;
  explicit EventLog(std::string file_path) : path_(std::move(file_path)) {}

  void append(const LogRecord& record) {
    lines_.push_back(record.to_line());
    if (!path_.empty()) {
      std::ofstream os(path_, std::ios::app);
      if (!os) throw Error(Errc::io_error, "cannot append to '" + path_ + "'");
      os << lines_.back() << '\n';
    }
  }

  const std::vector<std::string>& lines() const { return lines_; }

 private:
  std::string path_;
  std::vector<std::string> lines_;
};

// Rebuilds the room registry from raw log lines. Any malformed or
// inapplicable record aborts with the offending 1-based record index.
inline std::map<std::string, RoomState> replay_event_log(const std::vector<std::string>& lines) {
  std::map<std::string, RoomState> rooms;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto corrupt = [&i](const std::string& why) {
      return Error(Errc::corrupt_log, "record " + std::to_string(i + 1) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception& e) {
      throw corrupt(std::string("invalid JSON (") + e.what() + ")");
    }
    if (!j.is_object() || j.value("v", 0) != LogRecord::kLogVersion)
      throw corrupt("missing or unsupported log version");
    std::string op = j.value("op", "");
    std::string room_id = j.value("room", "");
    try {
      if (op == "ROOM_CREATE") {
        if (rooms.count(room_id)) throw corrupt("duplicate room '" + room_id + "'");
        PeerRecord src;
        src.id = j.at("peer").get<std::string>();
        src.upload_bandwidth_mbps = j.at("bw").get<double>();
        src.latency_s = j.at("latency").get<double>();
        ScoreParams params;
        const auto& p = j.at("params");
        params.k1 = p.at("k1").get<double>();
        params.k2 = p.at("k2").get<double>();
        params.k3 = p.at("k3").get<double>();
        params.latency_floor_s = p.at("latency_floor_s").get<double>();
        params.failure_floor = p.at("failure_floor").get<int>();
        params.min_slots = p.at("min_slots").get<int>();
        params.max_slots = p.at("max_slots").get<int>();
        SlotPolicy policy = j.value("slot_policy", "bucketed") == std::string("bucketed")
                                ? SlotPolicy::kBucketed
                                : SlotPolicy::kBandwidthRatio;
        rooms.emplace(room_id,
                      create_room(room_id, src, j.at("rate").get<double>(), params, policy));
      } else if (op == "JOIN") {
        PeerRecord rec;
        rec.id = j.at("peer").get<std::string>();
        rec.upload_bandwidth_mbps = j.at("bw").get<double>();
        rec.latency_s = j.at("latency").get<double>();
        rec.active_duration_s = j.at("duration").get<double>();
        rec.num_of_failure = j.at("failures").get<int>();
        rec.score = j.at("score").get<double>();
        rec.slots = j.at("slots").get<int>();
        join_peer(rooms.at(room_id), rec);
      } else if (op == "LEAVE") {
        leave_peer(rooms.at(room_id), j.at("peer").get<std::string>());
      } else if (op == "FAIL") {
        handle_failure(rooms.at(room_id), j.at("peer").get<std::string>());
      } else if (op == "STATS") {
        update_stats(rooms.at(room_id), j.at("peer").get<std::string>(),
                     j.at("latency").get<double>(), j.at("duration").get<double>());
      } else if (op == "ROOM_CLOSE") {
        if (!rooms.erase(room_id)) throw corrupt("close of unknown room '" + room_id + "'");
      } else {
        throw corrupt("unknown op '" + op + "'");
      }
    } catch (const Error& e) {
      if (e.code() == Errc::corrupt_log) throw;
      throw corrupt(e.what());
    } catch (const nlohmann::json::exception& e) {
      throw corrupt(std::string("missing field (") + e.what() + ")");
    } catch (const std::out_of_range&) {
      throw corrupt("record references an unknown room");
    }
  }
  return rooms;
}

inline std::vector<std::string> read_log_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_error, "cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace fybrr
