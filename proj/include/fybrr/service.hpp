#pragma once

// Signaling service. ServerCore is the transport-free message handler: it
// owns the room registry, per-room event logs and heartbeat bookkeeping, and
// turns one request into one terminal reply plus any pushes for other peers.
// TcpServer wraps it with newline-delimited JSON over TCP, one connection per
// peer, and a server-initiated ping loop.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "fybrr/event_log.hpp"
#include "fybrr/heartbeat.hpp"
#include "fybrr/overlay.hpp"
#include "fybrr/scoring.hpp"
#include "fybrr/wire.hpp"

namespace fybrr {

struct ServiceConfig {
  ScoreParams score_params;
  HeartbeatConfig heartbeat;
  SlotPolicy slot_policy = SlotPolicy::kBucketed;
  double default_streaming_rate_mbps = 2.5;
  // When set, JOIN payloads may carry client-computed score/slots verbatim;
  // otherwise the server derives both from the reported bandwidth.
  bool trust_client_scores = false;
  std::string log_dir;  // empty: in-memory logs only
};

struct HandleResult {
  std::optional<WireMessage> reply;
  std::vector<std::pair<PeerId, WireMessage>> pushes;  // peer in the same room
};

class ServerCore {
 public:
  explicit ServerCore(ServiceConfig cfg = {}) : cfg_(std::move(cfg)) {
    if (!cfg_.score_params.valid())
      throw Error(Errc::invalid_config, cfg_.score_params.violations().front());
    if (!cfg_.heartbeat.valid())
      throw Error(Errc::invalid_config, cfg_.heartbeat.violations().front());
  }

  const ServiceConfig& config() const { return cfg_; }

  HandleResult handle_message(const WireMessage& msg) {
    std::lock_guard<std::mutex> lock(mu_);
    try {
      switch (msg.type) {
        case MessageType::kRoomCreate: return handle_room_create(msg);
        case MessageType::kJoin: return handle_join(msg);
        case MessageType::kLeave: return handle_leave(msg);
        case MessageType::kStatsUpdate: return handle_stats_update(msg);
        case MessageType::kPong: {
          auto it = trackers_.find(msg.room_id);
          if (it != trackers_.end()) it->second.on_pong(msg.peer_id);
          return {};
        }
        default:
          return {make_error(msg, Errc::bad_message,
                             std::string("unexpected message type ") + to_string(msg.type)),
                  {}};
      }
    } catch (const Error& e) {
      return {make_error(msg, e.code(), e.what()), {}};
    }
  }

  // Heartbeat-driven (or disconnect-driven) failure. Returns the pushes owed
  // to surviving peers.
  std::vector<std::pair<PeerId, WireMessage>> fail_peer(const std::string& room_id,
                                                        const PeerId& peer) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = rooms_.find(room_id);
    if (it == rooms_.end() || !it->second.is_active(peer)) return {};
    if (peer == it->second.source) {
      close_room_locked(room_id);
      return {};
    }
    LeaveOutcome out = handle_failure(it->second, peer);
    logs_.at(room_id).append(log_fail(room_id, peer));
    trackers_[room_id].untrack(peer);
    return restructure_pushes(out, 0);
  }

  // Evaluates one heartbeat interval for every room; the returned pushes
  // include a PING for every ACTIVE peer and the fallout of any failures.
  std::vector<std::tuple<std::string, PeerId, WireMessage>> heartbeat_tick() {
    std::vector<std::tuple<std::string, PeerId, WireMessage>> out;
    std::vector<std::pair<std::string, PeerId>> failed;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto& [room_id, tracker] : trackers_)
        for (const PeerId& peer : tracker.on_tick()) failed.emplace_back(room_id, peer);
      for (auto& [room_id, room] : rooms_) {
        for (const auto& [id, rec] : room.peers) {
          if (rec.state != PeerState::kActive) continue;
          WireMessage ping;
          ping.type = MessageType::kPing;
          ping.room_id = room_id;
          ping.peer_id = id;
          out.emplace_back(room_id, id, ping);
        }
      }
    }
    for (const auto& [room_id, peer] : failed)
      for (auto& [to, push] : fail_peer(room_id, peer)) out.emplace_back(room_id, to, push);
    return out;
  }

  // Read-only snapshot accessors (copy out under the lock).
  std::optional<RoomState> room_snapshot(const std::string& room_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = rooms_.find(room_id);
    if (it == rooms_.end()) return std::nullopt;
    return it->second;
  }
  std::vector<std::string> log_lines(const std::string& room_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = logs_.find(room_id);
    if (it == logs_.end()) return {};
    return it->second.lines();
  }
  std::vector<std::string> room_ids() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, room] : rooms_) ids.push_back(id);
    return ids;
  }

 private:
  PeerRecord record_from_payload(const WireMessage& msg, double rate) {
    PeerRecord rec;
    rec.id = msg.peer_id;
    rec.upload_bandwidth_mbps = msg.payload.value("bw", 0.0);
    rec.latency_s = msg.payload.value("latency", cfg_.score_params.latency_floor_s);
    if (!(rec.upload_bandwidth_mbps > 0))
      throw Error(Errc::invalid_parameter, "JOIN payload needs a positive bw");
    if (cfg_.trust_client_scores && msg.payload.contains("score") &&
        msg.payload.contains("slots")) {
      rec.score = msg.payload["score"].get<double>();
      rec.slots = msg.payload["slots"].get<int>();
    } else {
      rec.score = initial_score(rec.upload_bandwidth_mbps, rate, cfg_.score_params);
      rec.slots = slots_for(rec.upload_bandwidth_mbps, rate, cfg_.score_params, cfg_.slot_policy);
    }
    return rec;
  }

  HandleResult handle_room_create(const WireMessage& msg) {
    if (rooms_.count(msg.room_id))
      return {make_error(msg, Errc::duplicate_room, "room '" + msg.room_id + "' exists"), {}};
    double rate = msg.payload.value("rate", cfg_.default_streaming_rate_mbps);
    PeerRecord src = record_from_payload(msg, rate);
    RoomState room = create_room(msg.room_id, src, rate, cfg_.score_params, cfg_.slot_policy);
    const PeerRecord& stored = room.peers.at(src.id);
    WireMessage reply;
    reply.type = MessageType::kRoomCreated;
    reply.room_id = msg.room_id;
    reply.peer_id = msg.peer_id;
    reply.re_seq = msg.seq;
    reply.payload = {{"score", stored.score}, {"slots", stored.slots}, {"rate", rate}};
    logs_.emplace(msg.room_id, make_log(msg.room_id)).first->second.append(
        log_room_create(room, stored));
    trackers_.emplace(msg.room_id, HeartbeatTracker(cfg_.heartbeat));
    trackers_.at(msg.room_id).track(msg.peer_id);
    rooms_.emplace(msg.room_id, std::move(room));
    return {reply, {}};
  }

  HandleResult handle_join(const WireMessage& msg) {
    auto it = rooms_.find(msg.room_id);
    if (it == rooms_.end()) {
      if (msg.payload.value("create", false)) return handle_room_create(msg);
      return {make_error(msg, Errc::room_not_found, "no room '" + msg.room_id + "'"), {}};
    }
    RoomState& room = it->second;
    PeerRecord rec = record_from_payload(msg, room.streaming_rate_mbps);
    PeerRecord as_logged = rec;
    JoinOutcome out = join_peer(room, rec);
    logs_.at(msg.room_id).append(log_join(msg.room_id, as_logged));
    trackers_[msg.room_id].track(msg.peer_id);

    const PeerRecord& stored = room.peers.at(msg.peer_id);
    WireMessage reply;
    reply.type = MessageType::kJoinAck;
    reply.room_id = msg.room_id;
    reply.peer_id = msg.peer_id;
    reply.re_seq = msg.seq;
    reply.payload = {{"parent", out.assigned_parent},
                     {"aux", out.aux_candidates},
                     {"score", stored.score},
                     {"slots", stored.slots}};
    HandleResult result{reply, {}};
    if (out.displaced_child) {
      WireMessage push;
      push.type = MessageType::kParentAssign;
      push.room_id = msg.room_id;
      push.peer_id = *out.displaced_child;
      push.cause_seq = msg.seq;
      push.payload = {{"parent", msg.peer_id}};
      result.pushes.emplace_back(*out.displaced_child, push);
    }
    return result;
  }

  HandleResult handle_leave(const WireMessage& msg) {
    auto it = rooms_.find(msg.room_id);
    if (it == rooms_.end())
      return {make_error(msg, Errc::room_not_found, "no room '" + msg.room_id + "'"), {}};
    WireMessage reply;
    reply.type = MessageType::kLeaveAck;
    reply.room_id = msg.room_id;
    reply.peer_id = msg.peer_id;
    reply.re_seq = msg.seq;
    if (msg.peer_id == it->second.source) {
      // The source ends the session; the room is closed rather than repaired.
      close_room_locked(msg.room_id);
      reply.payload = {{"room_closed", true}};
      return {reply, {}};
    }
    if (!it->second.is_active(msg.peer_id))
      return {make_error(msg, Errc::unknown_peer, "no ACTIVE peer '" + msg.peer_id + "'"), {}};
    LeaveOutcome out = leave_peer(it->second, msg.peer_id);
    logs_.at(msg.room_id).append(log_leave(msg.room_id, msg.peer_id));
    trackers_[msg.room_id].untrack(msg.peer_id);
    HandleResult result{reply, restructure_pushes(out, msg.seq)};
    for (auto& [peer, push] : result.pushes) {
      push.room_id = msg.room_id;
      (void)peer;
    }
    return result;
  }

  HandleResult handle_stats_update(const WireMessage& msg) {
    auto it = rooms_.find(msg.room_id);
    if (it == rooms_.end())
      return {make_error(msg, Errc::room_not_found, "no room '" + msg.room_id + "'"), {}};
    double latency = msg.payload.value("latency", 0.0);
    double duration = msg.payload.value("duration", 0.0);
    double score = update_stats(it->second, msg.peer_id, latency, duration);
    logs_.at(msg.room_id).append(log_stats(msg.room_id, msg.peer_id, latency, duration));
    WireMessage reply;
    reply.type = MessageType::kStatsAck;
    reply.room_id = msg.room_id;
    reply.peer_id = msg.peer_id;
    reply.re_seq = msg.seq;
    reply.payload = {{"score", score}};
    return {reply, {}};
  }

  // Push fan-out for a restructure: bridges first so orphans never hear about
  // a new parent before they have a temporary feed, releases last.
  std::vector<std::pair<PeerId, WireMessage>> restructure_pushes(const LeaveOutcome& out,
                                                                 std::uint64_t cause_seq) {
    std::vector<std::pair<PeerId, WireMessage>> pushes;
    auto push = [&pushes, cause_seq](const PeerId& to, MessageType type, nlohmann::json payload) {
      WireMessage m;
      m.type = type;
      m.peer_id = to;
      if (cause_seq) m.cause_seq = cause_seq;
      m.payload = std::move(payload);
      pushes.emplace_back(to, m);
    };
    for (const AuxBridge& b : out.aux_bridges)
      if (b.helper) push(b.orphan, MessageType::kAuxActivate, {{"aux", *b.helper}});
    if (out.promoted_child)
      push(*out.promoted_child, MessageType::kParentAssign, {{"promoted", true}});
    for (const auto& [peer, join] : out.rejoined_peers) {
      push(peer, MessageType::kParentAssign, {{"parent", join.assigned_parent}});
      if (join.displaced_child)
        push(*join.displaced_child, MessageType::kParentAssign, {{"parent", peer}});
    }
    if (out.refilled_source_child)
      push(*out.refilled_source_child, MessageType::kParentAssign, {{"refilled", true}});
    for (const AuxBridge& b : out.aux_bridges)
      if (b.helper) push(b.orphan, MessageType::kAuxRelease, {{"aux", *b.helper}});
    return pushes;
  }

  EventLog make_log(const std::string& room_id) {
    if (cfg_.log_dir.empty()) return EventLog{};
    return EventLog(cfg_.log_dir + "/" + room_id + ".log");
  }

  void close_room_locked(const std::string& room_id) {
    auto lg = logs_.find(room_id);
    if (lg != logs_.end()) lg->second.append(log_room_close(room_id));
    rooms_.erase(room_id);
    trackers_.erase(room_id);
  }

  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::map<std::string, RoomState> rooms_;
  std::map<std::string, EventLog> logs_;
  std::map<std::string, HeartbeatTracker> trackers_;
};

// Blocking-socket TCP front end. One reader thread per connection; writes are
// serialized per connection; a timer thread drives the ping loop.
class TcpServer {
 public:
  TcpServer(ServerCore& core, std::string host, int port)
      : core_(core), host_(std::move(host)), port_(port) {}
  ~TcpServer() { stop(); }

  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(Errc::io_error, "socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port_));
    if (host_.empty() || host_ == "0.0.0.0")
      addr.sin_addr.s_addr = INADDR_ANY;
    else if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
      throw Error(Errc::invalid_config, "cannot parse listen address '" + host_ + "'");
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw Error(Errc::io_error, "bind failed on " + host_ + ":" + std::to_string(port_));
    if (::listen(listen_fd_, 16) != 0) throw Error(Errc::io_error, "listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    bound_port_ = ntohs(addr.sin_port);

    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    heartbeat_thread_ = std::thread([this] { heartbeat_loop(); });
  }

  void stop() {
    bool was_running = running_.exchange(false);
    if (!was_running) return;
    {
      std::lock_guard<std::mutex> lock(hb_mu_);
      hb_cv_.notify_all();
    }
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    if (heartbeat_thread_.joinable()) heartbeat_thread_.join();
    {
      // Wake any reader still blocked in recv; each reader closes its own fd.
      std::lock_guard<std::mutex> lock(conn_mu_);
      for (auto& [fd, c] : connections_) ::shutdown(c->fd, SHUT_RDWR);
    }
    std::vector<std::thread> readers;
    {
      std::lock_guard<std::mutex> lock(threads_mu_);
      readers.swap(reader_threads_);
    }
    for (std::thread& t : readers)
      if (t.joinable()) t.join();
    std::lock_guard<std::mutex> lock(conn_mu_);
    connections_.clear();
    routes_.clear();
  }

  int port() const { return bound_port_; }

 private:
  struct Connection {
    int fd = -1;
    std::mutex write_mu;
    std::uint64_t last_client_seq = 0;
    std::uint64_t server_seq = 0;
    std::string room_id;
    PeerId peer_id;
  };

  void accept_loop() {
    while (running_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (!running_) break;
        continue;
      }
      auto conn = std::make_shared<Connection>();
      conn->fd = fd;
      {
        std::lock_guard<std::mutex> lock(conn_mu_);
        connections_[fd] = conn;
      }
      std::lock_guard<std::mutex> lock(threads_mu_);
      reader_threads_.emplace_back([this, conn] { read_loop(conn); });
    }
  }

  void read_loop(const std::shared_ptr<Connection>& conn) {
    std::string buffer;
    char chunk[4096];
    while (running_) {
      ssize_t n = ::recv(conn->fd, chunk, sizeof(chunk), 0);
      if (n <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(n));
      std::size_t pos;
      while ((pos = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, pos);
        buffer.erase(0, pos + 1);
        if (!line.empty()) handle_line(conn, line);
      }
    }
    on_disconnect(conn);
  }

  void handle_line(const std::shared_ptr<Connection>& conn, const std::string& line) {
    WireMessage msg;
    try {
      msg = decode_message(line);
    } catch (const Error& e) {
      WireMessage err;
      err.type = MessageType::kError;
      err.payload = {{"code", to_string(e.code())}, {"text", e.what()}};
      send_message(conn, err);
      return;
    }
    if (msg.seq <= conn->last_client_seq && msg.type != MessageType::kPong) {
      send_message(conn, make_error(msg, Errc::bad_message, "seq must strictly increase"));
      return;
    }
    if (msg.seq > conn->last_client_seq) conn->last_client_seq = msg.seq;

    HandleResult result = core_.handle_message(msg);
    bool accepted =
        result.reply && result.reply->type != MessageType::kError &&
        (msg.type == MessageType::kJoin || msg.type == MessageType::kRoomCreate);
    if (accepted) {
      std::lock_guard<std::mutex> lock(conn_mu_);
      conn->room_id = result.reply->room_id;
      conn->peer_id = msg.peer_id;
      routes_[route_key(conn->room_id, conn->peer_id)] = conn;
    }
    if (result.reply) send_message(conn, *result.reply);
    deliver(result.reply ? result.reply->room_id : msg.room_id, result.pushes);
  }

  void deliver(const std::string& room_id,
               const std::vector<std::pair<PeerId, WireMessage>>& pushes) {
    for (const auto& [peer, push] : pushes) {
      std::shared_ptr<Connection> target;
      {
        std::lock_guard<std::mutex> lock(conn_mu_);
        auto it = routes_.find(route_key(room_id, peer));
        if (it != routes_.end()) target = it->second;
      }
      if (target) {
        WireMessage m = push;
        m.room_id = room_id;
        send_message(target, m);
      }
    }
  }

  void on_disconnect(const std::shared_ptr<Connection>& conn) {
    std::string room;
    PeerId peer;
    {
      std::lock_guard<std::mutex> lock(conn_mu_);
      room = conn->room_id;
      peer = conn->peer_id;
      if (!peer.empty()) routes_.erase(route_key(room, peer));
      connections_.erase(conn->fd);
      ::close(conn->fd);
    }
    // A vanished connection is a failure as far as the overlay is concerned.
    if (running_ && !peer.empty()) deliver(room, core_.fail_peer(room, peer));
  }

  void heartbeat_loop() {
    std::unique_lock<std::mutex> lock(hb_mu_);
    auto interval = std::chrono::duration<double>(core_.config().heartbeat.interval_s);
    while (running_) {
      if (hb_cv_.wait_for(lock, interval, [this] { return !running_.load(); })) break;
      for (auto& [room, peer, msg] : core_.heartbeat_tick()) {
        std::shared_ptr<Connection> target;
        {
          std::lock_guard<std::mutex> clock(conn_mu_);
          auto it = routes_.find(route_key(room, peer));
          if (it != routes_.end()) target = it->second;
        }
        if (target) {
          WireMessage m = msg;
          m.room_id = room;
          send_message(target, m);
        }
      }
    }
  }

  void send_message(const std::shared_ptr<Connection>& conn, WireMessage msg) {
    std::lock_guard<std::mutex> lock(conn->write_mu);
    msg.seq = ++conn->server_seq;
    std::string line = encode_message(msg) + "\n";
    std::size_t sent = 0;
    while (sent < line.size()) {
      ssize_t n = ::send(conn->fd, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
      if (n <= 0) return;
      sent += static_cast<std::size_t>(n);
    }
  }

  static std::string route_key(const std::string& room, const PeerId& peer) {
    return room + "\n" + peer;
  }

  ServerCore& core_;
  std::string host_;
  int port_ = 0;
  int bound_port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::thread heartbeat_thread_;
  std::mutex hb_mu_;
  std::condition_variable hb_cv_;
  std::mutex conn_mu_;
  std::map<int, std::shared_ptr<Connection>> connections_;
  std::map<std::string, std::shared_ptr<Connection>> routes_;
  std::mutex threads_mu_;
  std::vector<std::thread> reader_threads_;
};

}  // namespace fybrr
