#pragma once

// Ping/pong liveness bookkeeping. The tracker is a pure state machine driven
// by an external clock (the server's timer thread or the simulator's virtual
// clock): one tick per interval, one on_pong per answer. A peer that misses
// miss_threshold consecutive ticks is reported failed, which bounds detection
// latency by interval * (miss_threshold + 1) after its last answer.

#include <map>
#include <string>
#include <vector>

#include "fybrr/core.hpp"

namespace fybrr {

struct HeartbeatConfig {
  double interval_s = 2.0;
  int miss_threshold = 2;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(interval_s > 0)) v.push_back("heartbeat interval must be positive");
    if (miss_threshold < 1) v.push_back("miss_threshold must be >= 1");
    return v;
  }
  bool valid() const { return violations().empty(); }

  friend bool operator==(const HeartbeatConfig&, const HeartbeatConfig&) = default;
};

class HeartbeatTracker {
 public:
  explicit HeartbeatTracker(HeartbeatConfig cfg = {}) : cfg_(cfg) {
    if (!cfg_.valid()) throw Error(Errc::invalid_config, cfg_.violations().front());
  }

  const HeartbeatConfig& config() const { return cfg_; }

  void track(const PeerId& id) { entries_.emplace(id, Entry{}); }
  void untrack(const PeerId& id) { entries_.erase(id); }
  bool tracking(const PeerId& id) const { return entries_.count(id) != 0; }

  void on_pong(const PeerId& id) {
    auto it = entries_.find(id);
    if (it == entries_.end()) return;
    it->second.pong_seen = true;
    it->second.misses = 0;
  }

  // Evaluates one interval boundary; returns the peers that just crossed the
  // miss threshold (they are dropped from tracking).
  std::vector<PeerId> on_tick() {
    std::vector<PeerId> failed;
    for (auto it = entries_.begin(); it != entries_.end();) {
      Entry& e = it->second;
      if (e.pong_seen)
        e.misses = 0;
      else
        ++e.misses;
      e.pong_seen = false;
      if (e.misses >= cfg_.miss_threshold) {
        failed.push_back(it->first);
        it = entries_.erase(it);
      } else {
        ++it;
      }
    }
    return failed;
  }

 private:
  struct Entry {
    int misses = 0;
    bool pong_seen = true;  // a fresh peer gets a full interval before counting
  };
  HeartbeatConfig cfg_;
  std::map<PeerId, Entry> entries_;
};

}  // namespace fybrr
