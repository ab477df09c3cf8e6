#include <doctest.h>

#include <chrono>
#include <thread>

#include "fybrr/service.hpp"

using namespace fybrr;

namespace {

// Minimal blocking line client for loopback tests.
class TestClient {
 public:
  explicit TestClient(int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd_ >= 0);
    timeval tv{5, 0};
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
    REQUIRE(::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  }
  ~TestClient() { ::close(fd_); }

  void send_msg(const WireMessage& m) {
    std::string line = encode_message(m) + "\n";
    REQUIRE(::send(fd_, line.data(), line.size(), 0) == static_cast<ssize_t>(line.size()));
  }

  // Reads messages until one matches the predicate or the deadline passes.
  template <class Pred>
  std::optional<WireMessage> wait_for(Pred pred, double timeout_s = 5.0) {
    auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    while (std::chrono::steady_clock::now() < deadline) {
      std::size_t pos = buffer_.find('\n');
      if (pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (line.empty()) continue;
        WireMessage m = decode_message(line);
        if (pred(m)) return m;
        continue;
      }
      char chunk[2048];
      ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
      if (n <= 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
    return std::nullopt;
  }

  int fd() const { return fd_; }

 private:
  int fd_ = -1;
  std::string buffer_;
};

WireMessage request(MessageType type, const std::string& room, const std::string& peer,
                    std::uint64_t seq, nlohmann::json payload = nlohmann::json::object()) {
  WireMessage m;
  m.type = type;
  m.room_id = room;
  m.peer_id = peer;
  m.seq = seq;
  m.payload = std::move(payload);
  return m;
}

}  // namespace

TEST_CASE("tcp service: join flow, pings, and heartbeat failure detection") {
  ServiceConfig cfg;
  cfg.heartbeat.interval_s = 0.05;  // fast clock for the test
  cfg.heartbeat.miss_threshold = 2;
  ServerCore core(cfg);
  TcpServer server(core, "127.0.0.1", 0);
  server.start();
  REQUIRE(server.port() > 0);

  TestClient source(server.port());
  source.send_msg(
      request(MessageType::kRoomCreate, "live", "src", 1, {{"bw", 10.0}, {"rate", 2.5}}));
  auto created = source.wait_for(
      [](const WireMessage& m) { return m.type == MessageType::kRoomCreated; });
  REQUIRE(created);

  TestClient alice(server.port());
  alice.send_msg(request(MessageType::kJoin, "live", "alice", 1, {{"bw", 20.0}}));
  auto ack =
      alice.wait_for([](const WireMessage& m) { return m.type == MessageType::kJoinAck; });
  REQUIRE(ack);
  CHECK(ack->payload.at("parent") == "src");

  TestClient bob(server.port());
  bob.send_msg(request(MessageType::kJoin, "live", "bob", 1, {{"bw", 20.0}}));
  REQUIRE(bob.wait_for([](const WireMessage& m) { return m.type == MessageType::kJoinAck; }));

  // Server-initiated pings reach connected peers; answer them from alice only.
  std::atomic<bool> stop{false};
  std::thread alice_pong([&] {
    std::uint64_t seq = 100;
    while (!stop) {
      auto ping = alice.wait_for(
          [](const WireMessage& m) { return m.type == MessageType::kPing; }, 0.4);
      if (!ping) continue;
      alice.send_msg(request(MessageType::kPong, "live", "alice", seq++));
    }
  });

  auto src_ping =
      source.wait_for([](const WireMessage& m) { return m.type == MessageType::kPing; });
  CHECK(src_ping);
  std::uint64_t sseq = 50;
  // Keep the source alive in the background as well.
  std::thread source_pong([&] {
    while (!stop) {
      auto ping = source.wait_for(
          [](const WireMessage& m) { return m.type == MessageType::kPing; }, 0.4);
      if (!ping) continue;
      source.send_msg(request(MessageType::kPong, "live", "src", sseq++));
    }
  });

  // bob stays silent: the tracker must declare it failed and repair the room.
  bool bob_gone = false;
  for (int i = 0; i < 100 && !bob_gone; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    auto snap = core.room_snapshot("live");
    REQUIRE(snap);
    if (snap->peers.count("bob") && snap->peers.at("bob").state == PeerState::kFailed)
      bob_gone = true;
  }
  CHECK(bob_gone);
  auto snap = core.room_snapshot("live");
  REQUIRE(snap);
  CHECK(validate_room(*snap).empty());
  CHECK(snap->peers.at("bob").num_of_failure == 1);

  stop = true;
  alice_pong.join();
  source_pong.join();
  server.stop();
}

TEST_CASE("tcp service: non-increasing seq is rejected") {
  ServerCore core;
  TcpServer server(core, "127.0.0.1", 0);
  server.start();

  TestClient c(server.port());
  c.send_msg(request(MessageType::kRoomCreate, "r", "s", 5, {{"bw", 10.0}}));
  REQUIRE(c.wait_for([](const WireMessage& m) { return m.type == MessageType::kRoomCreated; }));
  c.send_msg(request(MessageType::kJoin, "r", "x", 5, {{"bw", 10.0}}));  // stale seq
  auto err = c.wait_for([](const WireMessage& m) { return m.type == MessageType::kError; });
  REQUIRE(err);
  CHECK(err->payload.at("text").get<std::string>().find("seq") != std::string::npos);
  server.stop();
}

TEST_CASE("tcp service: a dropped connection is handled as a failure") {
  ServerCore core;
  TcpServer server(core, "127.0.0.1", 0);
  server.start();

  TestClient source(server.port());
  source.send_msg(request(MessageType::kRoomCreate, "r", "s", 1, {{"bw", 10.0}}));
  REQUIRE(source.wait_for(
      [](const WireMessage& m) { return m.type == MessageType::kRoomCreated; }));
  {
    TestClient ephemeral(server.port());
    ephemeral.send_msg(request(MessageType::kJoin, "r", "eph", 1, {{"bw", 10.0}}));
    REQUIRE(ephemeral.wait_for(
        [](const WireMessage& m) { return m.type == MessageType::kJoinAck; }));
  }  // socket closes here
  bool failed = false;
  for (int i = 0; i < 100 && !failed; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    auto snap = core.room_snapshot("r");
    REQUIRE(snap);
    if (snap->peers.at("eph").state == PeerState::kFailed) failed = true;
  }
  CHECK(failed);
  server.stop();
}
