#pragma once

// Deterministic discrete-event simulator. Builds an overlay under one of
// three schemes (score-based, complete binary, complete quad), drives a
// staggered join phase plus optional leave/fail churn, pushes a synthetic
// packet stream through bandwidth-constrained nodes, and records full packet
// and topology traces. Time is integer microseconds and every random draw
// comes from one seeded generator, so a config maps to exactly one trace.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "fybrr/heartbeat.hpp"
#include "fybrr/metrics.hpp"
#include "fybrr/overlay.hpp"
#include "fybrr/scoring.hpp"

namespace fybrr {

using SimTime = std::int64_t;  // microseconds

enum class Scheme { kFybrr, kBinary, kQuad };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::kFybrr: return "fybrr";
    case Scheme::kBinary: return "binary";
    case Scheme::kQuad: return "quad";
  }
  return "?";
}

inline std::optional<Scheme> parse_scheme(const std::string& s) {
  if (s == "fybrr") return Scheme::kFybrr;
  if (s == "binary") return Scheme::kBinary;
  if (s == "quad") return Scheme::kQuad;
  return std::nullopt;
}

// Seeded generator with self-contained transforms so identical seeds give
// identical traces on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }  // [0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }
  double lognormal(double median, double sigma) { return median * std::exp(sigma * normal()); }
  double exponential(double mean) { return -mean * std::log(1.0 - uniform()); }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

struct BandwidthBucket {
  double lo_mbps = 5.0;
  double hi_mbps = 15.0;
  double weight = 1.0;
};

struct ChurnEvent {
  enum class Kind { kLeave, kFail, kSilence };
  double time_s = 0.0;
  Kind kind = Kind::kFail;
  int peer_index = -1;  // join index, 0 is the source
};

struct SimConfig {
  std::uint64_t seed = 1;
  int num_peers = 57;  // including the source
  Scheme scheme = Scheme::kFybrr;
  double streaming_rate_mbps = 2.5;
  double packet_rate_pps = 20.0;
  double duration_s = 60.0;
  double join_gap_s = 0.5;
  std::vector<BandwidthBucket> bandwidth_buckets{{5, 15, 0.60}, {15, 50, 0.25}, {50, 100, 0.15}};
  // Per-edge base delay is lognormal around this median; every packet adds
  // half-normal noise plus exponential queueing noise that grows with the
  // square of the forwarder's uplink utilization (children x rate / bw).
  double edge_delay_median_ms = 30.0;
  double edge_delay_sigma = 0.5;
  double packet_noise_ms = 2.0;
  double congestion_delay_ms = 4.5;
  bool loss_enabled = true;
  double leave_rate_hz = 0.0;  // Poisson churn after the join phase
  double fail_rate_hz = 0.0;
  double reparent_delay_s = 0.5;  // how long orphans ride their aux bridge
  HeartbeatConfig heartbeat;
  bool heartbeat_detection = false;  // failures detected by missed pongs
  std::vector<ChurnEvent> script;    // deterministic scripted churn
  ScoreParams score_params;
  SlotPolicy slot_policy = SlotPolicy::kBucketed;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (num_peers < 1) v.push_back("num_peers must be >= 1");
    if (!(streaming_rate_mbps > 0)) v.push_back("streaming_rate must be positive");
    if (!(packet_rate_pps > 0)) v.push_back("packet_rate must be positive");
    if (!(duration_s > 0)) v.push_back("duration must be positive");
    if (join_gap_s < 0) v.push_back("join_gap must be >= 0");
    if (bandwidth_buckets.empty()) v.push_back("bandwidth model needs at least one bucket");
    for (const auto& b : bandwidth_buckets)
      if (!(b.weight > 0) || !(b.hi_mbps > b.lo_mbps) || !(b.lo_mbps > 0))
        v.push_back("bandwidth bucket needs positive weight and lo < hi");
    if (!(edge_delay_median_ms > 0)) v.push_back("edge delay median must be positive");
    if (packet_noise_ms < 0 || congestion_delay_ms < 0)
      v.push_back("noise and congestion scales must be >= 0");
    if (leave_rate_hz < 0 || fail_rate_hz < 0) v.push_back("churn rates must be >= 0");
    if (!(reparent_delay_s >= 0)) v.push_back("reparent delay must be >= 0");
    for (const auto& msg : score_params.violations()) v.push_back("score_params: " + msg);
    for (const auto& msg : heartbeat.violations()) v.push_back("heartbeat: " + msg);
    return v;
  }
};

// Complete k-ary tree over the peer list in join order, bandwidth ignored
// ("2 or 4 children per peer regardless"). Records keep their true bandwidth
// but carry the scheme-imposed slot count so tree invariants line up.
inline RoomState build_baseline(Scheme scheme, std::vector<PeerRecord> peers,
                                double streaming_rate_mbps = 2.5,
                                const ScoreParams& params = {}) {
  if (scheme == Scheme::kFybrr)
    throw Error(Errc::invalid_parameter, "baselines are binary or quad only");
  if (peers.empty()) throw Error(Errc::invalid_parameter, "peer list is empty");
  int k = scheme == Scheme::kBinary ? 2 : 4;

  RoomState room = create_room("baseline", peers.front(), streaming_rate_mbps, params,
                               SlotPolicy::kBucketed);
  room.peers.at(peers.front().id).slots = k;
  std::vector<PeerId> order{peers.front().id};
  for (std::size_t i = 1; i < peers.size(); ++i) {
    PeerRecord rec = peers[i];
    rec.slots = k;
    rec.state = PeerState::kActive;
    rec.join_order = room.next_join_order++;
    PeerId parent = order[(i - 1) / static_cast<std::size_t>(k)];
    PeerId id = rec.id;
    rec.parent = parent;
    rec.children.clear();
    order.push_back(id);
    room.peers.at(parent).children.push_back(id);
    room.peers.emplace(id, std::move(rec));
  }
  return room;
}

// Used slots over offered slots, counted across the peers that actually
// forward (at least one child). Leaves offer capacity nobody consumes in any
// scheme, so they are not part of the denominator.
inline double capacity_utilization(const RoomState& room) {
  std::int64_t used = 0, offered = 0;
  for (const auto& [id, p] : room.peers) {
    if (p.state != PeerState::kActive || p.children.empty()) continue;
    used += static_cast<std::int64_t>(p.children.size());
    offered += p.slots;
  }
  return offered > 0 ? static_cast<double>(used) / static_cast<double>(offered) : 0.0;
}

// Forwarding load a baseline scheme imposes on the peers it makes internal,
// relative to the slot capacity those peers actually have. > 1 means the
// scheme forces nodes past their bandwidth-derived budget.
inline double capacity_demand(Scheme scheme, const std::vector<PeerRecord>& peers) {
  if (scheme == Scheme::kFybrr)
    throw Error(Errc::invalid_parameter, "demand is defined for the baselines");
  if (peers.size() < 2) return 0.0;
  std::size_t k = scheme == Scheme::kBinary ? 2 : 4;
  std::size_t n = peers.size();
  std::int64_t offered = 0;
  std::int64_t required = static_cast<std::int64_t>(n - 1);
  for (std::size_t i = 0; k * i + 1 < n; ++i) offered += peers[i].slots;
  return offered > 0 ? static_cast<double>(required) / static_cast<double>(offered)
                     : std::numeric_limits<double>::infinity();
}

struct FailureRecord {
  PeerId peer;
  SimTime occurred_us = 0;   // silence start (heartbeat) or event time
  SimTime detected_us = 0;   // when the repair ran
  bool via_heartbeat = false;
  std::vector<AuxBridge> bridges;
  SimTime commit_us = 0;     // when orphans switched to their new parents
};

struct SimResult {
  SimConfig config;
  std::vector<PacketTraceEntry> traces;
  std::vector<TopologySnapshot> snapshots;
  std::map<PeerId, SimTime> join_time_us;  // first join per peer
  std::map<PeerId, std::vector<std::pair<SimTime, SimTime>>> subscriptions;
  // First moment the stream physically reached the peer. Joining mid-stream
  // means the first packets heard were emitted before the join; they start
  // playback but are not part of the delivery-ratio denominator.
  std::map<PeerId, SimTime> first_arrival_us;
  RoomState final_room;
  std::vector<FailureRecord> failures;
  std::int64_t packets_emitted = 0;
  std::map<PeerId, SimTime> max_feed_gap_us;  // longest stretch without parent or aux
};

inline std::optional<double> measure_startup_delay(const SimResult& result, const PeerId& peer) {
  auto jt = result.join_time_us.find(peer);
  if (jt == result.join_time_us.end())
    throw Error(Errc::unknown_peer, "peer '" + peer + "' never joined");
  auto first = result.first_arrival_us.find(peer);
  if (first == result.first_arrival_us.end()) return std::nullopt;  // never received
  return static_cast<double>(first->second - jt->second) / 1e6;
}

class Simulator {
 public:
  explicit Simulator(SimConfig config)
      : cfg_(std::move(config)), rng_(cfg_.seed), tracker_(cfg_.heartbeat) {
    auto v = cfg_.violations();
    if (!v.empty()) throw Error(Errc::invalid_config, v.front());
  }

  SimResult run() {
    build_population();
    schedule_initial_events();

    while (!queue_.empty()) {
      Event ev = queue_.top();
      queue_.pop();
      now_ = ev.time_us;
      switch (ev.kind) {
        case Event::kJoin: on_join(ev.peer_index); break;
        case Event::kLeave: on_departure(ev.peer, false, now_); break;
        case Event::kFail: on_departure(ev.peer, true, now_); break;
        case Event::kSilence: silenced_[ev.peer] = now_; break;
        case Event::kTick: on_tick(); break;
        case Event::kEmit: on_emit(ev.packet_seq); break;
        case Event::kArrival: on_arrival(ev.peer, ev.packet_seq, ev.emit_us); break;
        case Event::kCommit: on_commit(static_cast<std::size_t>(ev.commit_id)); break;
      }
    }

    finalize_traces();
    result_.config = cfg_;
    result_.final_room = room_;
    return std::move(result_);
  }

 private:
  struct Event {
    SimTime time_us = 0;
    std::uint64_t order = 0;
    enum Kind { kJoin, kLeave, kFail, kSilence, kTick, kEmit, kArrival, kCommit } kind = kEmit;
    int peer_index = -1;
    PeerId peer;
    std::int64_t packet_seq = 0;
    SimTime emit_us = 0;
    int commit_id = -1;

    bool operator>(const Event& other) const {
      if (time_us != other.time_us) return time_us > other.time_us;
      return order > other.order;
    }
  };

  struct CommitJob {
    std::vector<PeerId> affected;
    std::size_t failure_index = static_cast<std::size_t>(-1);
  };

  void push(Event ev) {
    ev.order = next_order_++;
    queue_.push(std::move(ev));
  }

  static SimTime to_us(double seconds) {
    return static_cast<SimTime>(std::llround(seconds * 1e6));
  }

  void build_population() {
    double total_weight = 0;
    for (const auto& b : cfg_.bandwidth_buckets) total_weight += b.weight;
    for (int i = 0; i < cfg_.num_peers; ++i) {
      char name[16];
      std::snprintf(name, sizeof(name), "n%04d", i);
      PeerRecord rec;
      rec.id = name;
      double roll = rng_.uniform() * total_weight;
      const BandwidthBucket* bucket = &cfg_.bandwidth_buckets.back();
      for (const auto& b : cfg_.bandwidth_buckets) {
        if (roll < b.weight) {
          bucket = &b;
          break;
        }
        roll -= b.weight;
      }
      rec.upload_bandwidth_mbps = rng_.uniform(bucket->lo_mbps, bucket->hi_mbps);
      rec.latency_s = rng_.lognormal(0.03, 0.5);
      rec.slots = slots_for(rec.upload_bandwidth_mbps, cfg_.streaming_rate_mbps,
                            cfg_.score_params, cfg_.slot_policy);
      rec.score =
          initial_score(rec.upload_bandwidth_mbps, cfg_.streaming_rate_mbps, cfg_.score_params);
      population_.push_back(std::move(rec));
    }
  }

  void schedule_initial_events() {
    for (int i = 0; i < cfg_.num_peers; ++i)
      push({to_us(cfg_.join_gap_s * i), 0, Event::kJoin, i, {}, 0, 0, -1});
    push({0, 0, Event::kEmit, -1, {}, 0, 0, -1});
    if (cfg_.heartbeat_detection)
      push({to_us(cfg_.heartbeat.interval_s), 0, Event::kTick, -1, {}, 0, 0, -1});

    for (const ChurnEvent& ev : cfg_.script) {
      if (ev.peer_index < 0 || ev.peer_index >= cfg_.num_peers)
        throw Error(Errc::invalid_config, "scripted event references a peer out of range");
      Event::Kind kind = ev.kind == ChurnEvent::Kind::kLeave    ? Event::kLeave
                         : ev.kind == ChurnEvent::Kind::kFail   ? Event::kFail
                                                                : Event::kSilence;
      push({to_us(ev.time_s), 0, kind, -1, population_[static_cast<std::size_t>(ev.peer_index)].id,
            0, 0, -1});
    }

    // Poisson churn begins once the room is fully assembled.
    double churn_start = cfg_.join_gap_s * (cfg_.num_peers - 1);
    for (auto [rate, kind] : {std::pair<double, Event::Kind>{cfg_.leave_rate_hz, Event::kLeave},
                              std::pair<double, Event::Kind>{cfg_.fail_rate_hz, Event::kFail}}) {
      if (!(rate > 0)) continue;
      double t = churn_start;
      while (true) {
        t += rng_.exponential(1.0 / rate);
        if (t >= cfg_.duration_s) break;
        push({to_us(t), 0, kind, -1, {}, 0, 0, -1});  // target chosen when it fires
      }
    }
  }

  // --- feed graph -----------------------------------------------------------

  struct Feed {
    PeerId parent;
    bool via_aux = false;
  };

  void set_feed(const PeerId& child, const PeerId& parent, bool via_aux) {
    clear_feed(child);
    in_feed_[child] = Feed{parent, via_aux};
    out_feed_[parent].push_back(child);
    auto gap = gap_open_.find(child);
    if (gap != gap_open_.end()) {
      auto& worst = result_.max_feed_gap_us[child];
      worst = std::max(worst, now_ - gap->second);
      gap_open_.erase(gap);
    }
  }

  void clear_feed(const PeerId& child) {
    auto it = in_feed_.find(child);
    if (it == in_feed_.end()) return;
    auto& kids = out_feed_[it->second.parent];
    kids.erase(std::remove(kids.begin(), kids.end(), child), kids.end());
    in_feed_.erase(it);
    gap_open_.emplace(child, now_);
  }

  void drop_gap_tracking(const PeerId& id) { gap_open_.erase(id); }

  SimTime edge_delay_base(const PeerId& from, const PeerId& to) {
    auto key = std::make_pair(from, to);
    auto it = edge_base_us_.find(key);
    if (it != edge_base_us_.end()) return it->second;
    SimTime base = std::max<SimTime>(
        1000, to_us(rng_.lognormal(cfg_.edge_delay_median_ms, cfg_.edge_delay_sigma) / 1000.0));
    edge_base_us_.emplace(key, base);
    return base;
  }

  // --- topology events ------------------------------------------------------

  void snapshot() {
    TopologySnapshot snap;
    snap.time_us = now_;
    for (const auto& [id, p] : room_.peers) {
      if (p.state != PeerState::kActive || !p.parent) continue;
      snap.parent_of[id] = *p.parent;
    }
    snap.height = height(room_);
    result_.snapshots.push_back(std::move(snap));
  }

  void subscribe(const PeerId& id) {
    result_.join_time_us.emplace(id, now_);
    result_.subscriptions[id].emplace_back(now_, std::numeric_limits<SimTime>::max());
  }

  void unsubscribe(const PeerId& id) {
    auto& windows = result_.subscriptions.at(id);
    windows.back().second = now_;
  }

  void on_join(int index) {
    const PeerRecord& rec = population_[static_cast<std::size_t>(index)];
    if (index == 0) {
      room_ = create_room("sim", rec, cfg_.streaming_rate_mbps, cfg_.score_params,
                          cfg_.slot_policy);
      if (cfg_.scheme != Scheme::kFybrr)
        room_.peers.at(rec.id).slots = scheme_k();
      join_order_.push_back(rec.id);
      subscribe(rec.id);
      tracker_.track(rec.id);
      snapshot();
      return;
    }
    if (cfg_.scheme == Scheme::kFybrr) {
      JoinOutcome out = join_peer(room_, rec);
      join_order_.push_back(rec.id);
      subscribe(rec.id);
      tracker_.track(rec.id);
      set_feed(rec.id, out.assigned_parent, false);
      if (out.displaced_child) set_feed(*out.displaced_child, rec.id, false);
    } else {
      PeerRecord fixed = rec;
      fixed.slots = scheme_k();
      PeerId parent = baseline_free_slot();
      fixed.state = PeerState::kActive;
      fixed.parent = parent;
      fixed.children.clear();
      fixed.join_order = room_.next_join_order++;
      room_.peers.at(parent).children.push_back(fixed.id);
      room_.peers.emplace(fixed.id, std::move(fixed));
      join_order_.push_back(rec.id);
      subscribe(rec.id);
      tracker_.track(rec.id);
      set_feed(rec.id, parent, false);
    }
    snapshot();
  }

  int scheme_k() const { return cfg_.scheme == Scheme::kBinary ? 2 : 4; }

  // First peer in join order with a spare scheme slot.
  PeerId baseline_free_slot() {
    for (const PeerId& id : join_order_) {
      const PeerRecord* p = room_.find(id);
      if (p && p->state == PeerState::kActive && p->free_slots() > 0) return id;
    }
    throw Error(Errc::no_capacity, "baseline tree is full");
  }

  void pick_random_target(Event::Kind kind) {
    std::vector<PeerId> actives;
    for (const auto& [id, p] : room_.peers)
      if (p.state == PeerState::kActive && id != room_.source) actives.push_back(id);
    if (actives.empty()) return;
    const PeerId target = actives[rng_.index(actives.size())];
    on_departure(target, kind == Event::kFail, now_);
  }

  void on_departure(const PeerId& peer, bool failure, SimTime occurred_us) {
    if (peer.empty()) {
      pick_random_target(failure ? Event::kFail : Event::kLeave);
      return;
    }
    if (!room_.is_active(peer) || peer == room_.source) return;  // stale event
    tracker_.untrack(peer);
    silenced_.erase(peer);

    FailureRecord record;
    record.peer = peer;
    record.occurred_us = occurred_us;
    record.detected_us = now_;
    record.via_heartbeat = occurred_us != now_;

    CommitJob job;
    if (cfg_.scheme == Scheme::kFybrr) {
      LeaveOutcome out = failure ? handle_failure(room_, peer) : leave_peer(room_, peer);
      record.bridges = out.aux_bridges;
      unsubscribe(peer);
      clear_feed(peer);
      drop_gap_tracking(peer);
      for (const PeerId& child : out_feed_children_copy(peer)) clear_feed(child);
      for (const AuxBridge& b : out.aux_bridges) {
        clear_feed(b.orphan);
        if (b.helper) set_feed(b.orphan, *b.helper, true);
        job.affected.push_back(b.orphan);
      }
      for (const auto& [kid, join] : out.rejoined_peers)
        if (join.displaced_child) job.affected.push_back(*join.displaced_child);
      if (out.refilled_source_child) job.affected.push_back(*out.refilled_source_child);
    } else {
      job.affected = baseline_remove(peer, failure);
      unsubscribe(peer);
    }
    if (failure) {
      record.commit_us = now_ + to_us(cfg_.reparent_delay_s);
      result_.failures.push_back(record);
      job.failure_index = result_.failures.size() - 1;
    }
    commits_.push_back(job);
    push({now_ + to_us(cfg_.reparent_delay_s), 0, Event::kCommit, -1, {}, 0, 0,
          static_cast<int>(commits_.size() - 1)});
    snapshot();
  }

  std::vector<PeerId> out_feed_children_copy(const PeerId& id) {
    auto it = out_feed_.find(id);
    return it == out_feed_.end() ? std::vector<PeerId>{} : it->second;
  }

  // Baseline repair: detach, then re-home every orphan subtree at the first
  // free slot in join order. No auxiliary bridging exists in these schemes;
  // orphans go dark until the commit.
  std::vector<PeerId> baseline_remove(const PeerId& peer, bool failure) {
    PeerRecord& rec = room_.peers.at(peer);
    rec.state = failure ? PeerState::kFailed : PeerState::kLeaving;
    if (failure) ++rec.num_of_failure;
    std::vector<PeerId> orphans = rec.children;
    if (rec.parent) {
      PeerRecord& parent = room_.peers.at(*rec.parent);
      parent.children.erase(std::remove(parent.children.begin(), parent.children.end(), peer),
                            parent.children.end());
    }
    rec.parent.reset();
    rec.children.clear();
    clear_feed(peer);
    drop_gap_tracking(peer);
    for (const PeerId& child : out_feed_children_copy(peer)) clear_feed(child);

    for (const PeerId& orphan : orphans) {
      std::set<PeerId> subtree = detail::collect_subtree(room_, orphan);
      PeerId parent;
      for (const PeerId& cand : join_order_) {
        const PeerRecord* p = room_.find(cand);
        if (p && p->state == PeerState::kActive && p->free_slots() > 0 && !subtree.count(cand)) {
          parent = cand;
          break;
        }
      }
      if (parent.empty()) throw Error(Errc::no_capacity, "baseline repair found no slot");
      room_.peers.at(orphan).parent = parent;
      room_.peers.at(parent).children.push_back(orphan);
    }
    return orphans;
  }

  void on_commit(std::size_t commit_id) {
    const CommitJob& job = commits_[commit_id];
    for (const PeerId& peer : job.affected) {
      const PeerRecord* p = room_.find(peer);
      if (!p || p->state != PeerState::kActive) {
        clear_feed(peer);
        drop_gap_tracking(peer);
        continue;
      }
      if (p->parent) set_feed(peer, *p->parent, false);
    }
  }

  // --- heartbeat ------------------------------------------------------------

  void on_tick() {
    SimTime interval = to_us(cfg_.heartbeat.interval_s);
    // The ping sent one interval ago was answered unless the peer had already
    // gone silent by then.
    for (const auto& [id, p] : room_.peers) {
      if (p.state != PeerState::kActive || !tracker_.tracking(id)) continue;
      auto s = silenced_.find(id);
      if (s == silenced_.end() || now_ - interval < s->second) tracker_.on_pong(id);
    }
    for (const PeerId& failed : tracker_.on_tick()) {
      SimTime occurred = silenced_.count(failed) ? silenced_.at(failed) : now_;
      on_departure(failed, true, occurred);
    }
    if (now_ + interval <= to_us(cfg_.duration_s) + to_us(cfg_.heartbeat.interval_s) *
                                                        (cfg_.heartbeat.miss_threshold + 2))
      push({now_ + interval, 0, Event::kTick, -1, {}, 0, 0, -1});
  }

  // --- packets --------------------------------------------------------------

  void on_emit(std::int64_t seq) {
    SimTime period = to_us(1.0 / cfg_.packet_rate_pps);
    ++result_.packets_emitted;
    deliver(room_.source, seq, now_, now_);
    if ((seq + 1) * period < to_us(cfg_.duration_s))
      push({(seq + 1) * period, 0, Event::kEmit, -1, {}, seq + 1, 0, -1});
  }

  void on_arrival(const PeerId& node, std::int64_t seq, SimTime emit_us) {
    deliver(node, seq, emit_us, now_);
  }

  bool subscribed_at(const PeerId& node, SimTime t) const {
    auto it = result_.subscriptions.find(node);
    if (it == result_.subscriptions.end()) return false;
    for (const auto& [start, end] : it->second)
      if (t >= start && t < end) return true;
    return false;
  }

  void deliver(const PeerId& node, std::int64_t seq, SimTime emit_us, SimTime t) {
    if (!subscribed_at(node, t)) return;
    result_.first_arrival_us.emplace(node, t);
    // Packets emitted before this peer subscribed start its playback but sit
    // outside its delivery accounting; its subtree already received them
    // through the feeds that were live at emission time.
    if (!subscribed_at(node, emit_us)) return;
    auto& seen = delivered_[node];
    if (seen.size() <= static_cast<std::size_t>(seq)) seen.resize(static_cast<std::size_t>(seq) + 1);
    if (seen[static_cast<std::size_t>(seq)]) return;
    seen[static_cast<std::size_t>(seq)] = true;
    result_.traces.push_back({node, seq, emit_us, t, true});
    forward(node, seq, emit_us, t);
  }

  void forward(const PeerId& node, std::int64_t seq, SimTime emit_us, SimTime t) {
    auto it = out_feed_.find(node);
    if (it == out_feed_.end() || it->second.empty()) return;
    const PeerRecord* rec = room_.find(node);
    double bw = rec ? rec->upload_bandwidth_mbps : 1.0;
    double utilization = static_cast<double>(it->second.size()) * cfg_.streaming_rate_mbps / bw;
    std::vector<PeerId> children = it->second;  // snapshot: forwarding may not mutate feeds
    for (const PeerId& child : children) {
      if (cfg_.loss_enabled && utilization > 1.0 && rng_.uniform() < 1.0 - 1.0 / utilization)
        continue;  // uplink saturated, copy dropped
      double delay_ms = static_cast<double>(edge_delay_base(node, child)) / 1000.0;
      delay_ms += std::abs(rng_.normal()) * cfg_.packet_noise_ms;
      if (cfg_.congestion_delay_ms > 0)
        delay_ms += rng_.exponential(cfg_.congestion_delay_ms * utilization * utilization);
      push({t + std::max<SimTime>(100, to_us(delay_ms / 1000.0)), 0, Event::kArrival, -1, child,
            seq, emit_us, -1});
    }
  }

  // Every packet a node should have received while subscribed gets a row;
  // the ones that never arrived become delivered=false entries.
  void finalize_traces() {
    SimTime period = to_us(1.0 / cfg_.packet_rate_pps);
    for (const auto& [node, windows] : result_.subscriptions) {
      const auto& seen = delivered_[node];
      for (const auto& [start, end] : windows) {
        std::int64_t first = (start + period - 1) / period;
        for (std::int64_t seq = first; seq < result_.packets_emitted; ++seq) {
          SimTime emit = seq * period;
          if (emit >= end) break;
          bool got = static_cast<std::size_t>(seq) < seen.size() &&
                     seen[static_cast<std::size_t>(seq)];
          if (!got) result_.traces.push_back({node, seq, emit, 0, false});
        }
      }
    }
    std::stable_sort(result_.traces.begin(), result_.traces.end(),
                     [](const PacketTraceEntry& a, const PacketTraceEntry& b) {
                       if (a.node != b.node) return a.node < b.node;
                       return a.seq < b.seq;
                     });
  }

  SimConfig cfg_;
  Rng rng_;
  SimTime now_ = 0;
  std::uint64_t next_order_ = 0;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;

  std::vector<PeerRecord> population_;
  std::vector<PeerId> join_order_;
  RoomState room_;
  HeartbeatTracker tracker_;
  std::map<PeerId, SimTime> silenced_;
  std::map<PeerId, Feed> in_feed_;
  std::map<PeerId, std::vector<PeerId>> out_feed_;
  std::map<PeerId, SimTime> gap_open_;
  std::map<std::pair<PeerId, PeerId>, SimTime> edge_base_us_;
  std::map<PeerId, std::vector<bool>> delivered_;
  std::vector<CommitJob> commits_;
  SimResult result_;
};

inline SimResult run_simulation(const SimConfig& config) { return Simulator(config).run(); }

inline MetricReport report_for(const SimResult& result) {
  return aggregate_report(result.traces, result.snapshots, result.join_time_us,
                          result.first_arrival_us);
}

}  // namespace fybrr
