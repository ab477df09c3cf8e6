#include <doctest.h>

#include <random>

#include "fybrr/heartbeat.hpp"

using namespace fybrr;

TEST_CASE("a peer that answers every ping never fails") {
  HeartbeatTracker t;
  t.track("a");
  for (int i = 0; i < 50; ++i) {
    t.on_pong("a");
    CHECK(t.on_tick().empty());
  }
  CHECK(t.tracking("a"));
}

TEST_CASE("a silent peer fails between 4 and 6 seconds at the defaults") {
  // 2 s interval, 2 misses. Walk a virtual clock with the peer going silent
  // at an arbitrary phase inside a tick period.
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> phase(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    HeartbeatConfig cfg;
    HeartbeatTracker t(cfg);
    t.track("a");
    double silence_at = 10.0 + phase(rng);
    double detected = -1.0;
    for (int k = 1; k < 40 && detected < 0; ++k) {
      double now = 2.0 * k;
      // Ping sent at the previous tick is answered iff it predates silence.
      if (2.0 * (k - 1) < silence_at) t.on_pong("a");
      if (!t.on_tick().empty()) detected = now;
    }
    REQUIRE(detected > 0);
    double delay = detected - silence_at;
    CHECK(delay >= 2.0 * 2);
    CHECK(delay <= 2.0 * (2 + 1));
  }
}

TEST_CASE("a pong resets the miss counter") {
  HeartbeatTracker t;
  t.track("a");
  CHECK(t.on_tick().empty());  // miss 1
  t.on_pong("a");
  CHECK(t.on_tick().empty());  // back to 0, then miss stays below threshold
  CHECK(t.on_tick().empty());  // miss 1
  auto failed = t.on_tick();   // miss 2 -> failure
  REQUIRE(failed.size() == 1);
  CHECK(failed[0] == "a");
  CHECK(!t.tracking("a"));
}

TEST_CASE("untracked peers are ignored and config is validated") {
  HeartbeatTracker t;
  t.on_pong("ghost");
  CHECK(t.on_tick().empty());
  HeartbeatConfig bad;
  bad.interval_s = 0;
  CHECK_THROWS_AS(HeartbeatTracker{bad}, Error);
  bad = HeartbeatConfig{};
  bad.miss_threshold = 0;
  CHECK_THROWS_AS(HeartbeatTracker{bad}, Error);
}
