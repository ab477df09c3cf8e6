#pragma once

// Overlay tree maintenance: peer joining, leaving, failure handling and the
// auxiliary-connection bookkeeping that bridges orphans while the tree is
// being repaired.
//
// All mutating operations either complete and leave the room valid
// (validate_room() empty) or throw without changing it. Every choice the
// algorithms make is a total order, so identical operation sequences produce
// identical rooms.

#include <algorithm>
#include <set>

#include "fybrr/core.hpp"
#include "fybrr/scoring.hpp"

namespace fybrr {

struct JoinOutcome {
  PeerId assigned_parent;
  // Set when the source was full and the newcomer displaced the weakest
  // direct child of the source, adopting it (and its subtree).
  std::optional<PeerId> displaced_child;
  std::vector<PeerId> aux_candidates;
};

struct AuxBridge {
  PeerId orphan;
  std::optional<PeerId> helper;  // empty when no live candidate existed
};

struct LeaveOutcome {
  std::optional<PeerId> promoted_child;         // took over the leaver's spot
  std::optional<PeerId> refilled_source_child;  // pulled up to fill a source vacancy
  std::vector<std::pair<PeerId, JoinOutcome>> rejoined_peers;
  std::vector<AuxBridge> aux_bridges;           // orphan bridging, in child order
};

inline int depth(const RoomState& room, const PeerId& id) {
  const PeerRecord* p = room.find(id);
  if (!p || p->state != PeerState::kActive)
    throw Error(Errc::unknown_peer, "no ACTIVE peer '" + id + "'");
  int d = 0;
  while (p->parent) {
    p = room.find(*p->parent);
    if (!p || ++d > static_cast<int>(room.peers.size()))
      throw Error(Errc::invalid_parameter, "broken parent chain at '" + id + "'");
  }
  return d;
}

inline int height(const RoomState& room) {
  if (!room.find(room.source)) throw Error(Errc::room_not_found, "room has no source");
  int h = 0;
  for (const auto& [id, p] : room.peers)
    if (p.state == PeerState::kActive) h = std::max(h, depth(room, id));
  return h;
}

inline PeerId find_min_slot_child_of_source(const RoomState& room) {
  const PeerRecord* src = room.find(room.source);
  if (!src || src->children.empty())
    throw Error(Errc::empty_children, "source has no children");
  // children is in join order, so the first strict minimum wins ties.
  const PeerId* best = nullptr;
  int best_slots = 0;
  for (const PeerId& c : src->children) {
    const PeerRecord* r = room.find(c);
    if (!r) continue;
    if (!best || r->slots < best_slots) {
      best = &c;
      best_slots = r->slots;
    }
  }
  if (!best) throw Error(Errc::empty_children, "source has no children");
  return *best;
}

namespace detail {

// Total order for "best parent". Levels fill before new ones open (a
// score-first order chains every newcomer under the strongest node and builds
// a spine instead of a tree); the score ranks candidates within a level.
inline bool better_parent(const PeerRecord& a, int depth_a, const PeerRecord& b, int depth_b) {
  if (depth_a != depth_b) return depth_a < depth_b;
  if (a.score != b.score) return a.score > b.score;
  if (a.join_order != b.join_order) return a.join_order < b.join_order;
  return a.id < b.id;
}

inline PeerId find_best_parent_excluding(const RoomState& room,
                                         const std::set<PeerId>& exclude) {
  const PeerRecord* best = nullptr;
  int best_depth = 0;
  for (const auto& [id, p] : room.peers) {
    if (p.state != PeerState::kActive || p.free_slots() <= 0) continue;
    if (exclude.count(id)) continue;
    int d = depth(room, id);
    if (!best || better_parent(p, d, *best, best_depth)) {
      best = &p;
      best_depth = d;
    }
  }
  if (!best) throw Error(Errc::no_capacity, "no ACTIVE peer has a free slot");
  return best->id;
}

inline std::set<PeerId> collect_subtree(const RoomState& room, const PeerId& root) {
  std::set<PeerId> out;
  std::vector<PeerId> stack{root};
  while (!stack.empty()) {
    PeerId id = stack.back();
    stack.pop_back();
    if (!out.insert(id).second) continue;
    if (const PeerRecord* p = room.find(id))
      for (const PeerId& c : p->children) stack.push_back(c);
  }
  return out;
}

struct Placement {
  PeerId parent;
  std::optional<PeerId> displaced;
};

// Read-only join planning: free source slot first, then displacement of the
// weakest source child, then the best-scored peer with a free slot.
inline Placement plan_join(const RoomState& room, const PeerRecord& peer, int current_children,
                           const std::set<PeerId>& exclude) {
  const PeerRecord* src = room.find(room.source);
  if (!src || src->state != PeerState::kActive)
    throw Error(Errc::room_not_found, "room has no ACTIVE source");
  if (src->free_slots() > 0) return {room.source, std::nullopt};
  if (!src->children.empty() && current_children < peer.slots) {
    PeerId weakest = find_min_slot_child_of_source(room);
    const PeerRecord* w = room.find(weakest);
    if (w && w->slots < peer.slots && !exclude.count(weakest))
      return {room.source, weakest};
  }
  return {find_best_parent_excluding(room, exclude), std::nullopt};
}

inline void attach(RoomState& room, const PeerId& child, const PeerId& parent) {
  room.peers.at(child).parent = parent;
  room.peers.at(parent).children.push_back(child);
  room.active_aux.erase(child);  // a real parent supersedes any bridge
}

inline void detach(RoomState& room, const PeerId& child) {
  PeerRecord& c = room.peers.at(child);
  if (!c.parent) return;
  PeerRecord& p = room.peers.at(*c.parent);
  p.children.erase(std::remove(p.children.begin(), p.children.end(), child), p.children.end());
  c.parent.reset();
}

// Applies a planned placement. For a displacement the newcomer takes the
// weakest child's position in the source's list and adopts it.
inline void commit_placement(RoomState& room, const PeerId& id, const Placement& pl) {
  if (pl.displaced) {
    PeerRecord& src = room.peers.at(room.source);
    auto it = std::find(src.children.begin(), src.children.end(), *pl.displaced);
    *it = id;
    room.peers.at(id).parent = room.source;
    room.peers.at(*pl.displaced).parent = id;
    room.peers.at(id).children.push_back(*pl.displaced);
    room.active_aux.erase(id);
    room.active_aux.erase(*pl.displaced);
  } else {
    attach(room, id, pl.parent);
  }
}

}  // namespace detail

inline PeerId find_best_parent(const RoomState& room) {
  return detail::find_best_parent_excluding(room, {});
}

// Preferred temporary feeders for a peer, best first: siblings of its parent
// plus its grandparent, nearest to the source first, higher score breaking
// ties. A peer directly under the source falls back to its own siblings, and
// the source itself is the candidate of last resort.
inline std::vector<PeerId> auxiliary_candidates(const RoomState& room, const PeerId& id) {
  const PeerRecord* p = room.find(id);
  if (!p || p->state != PeerState::kActive)
    throw Error(Errc::unknown_peer, "no ACTIVE peer '" + id + "'");
  if (id == room.source) throw Error(Errc::source_has_no_aux, "source has no auxiliary feeders");
  if (!p->parent) throw Error(Errc::invalid_parameter, "peer '" + id + "' has no parent");

  std::vector<PeerId> raw;
  const PeerRecord& parent = *room.find(*p->parent);
  if (*p->parent == room.source) {
    for (const PeerId& sib : room.peers.at(room.source).children)
      if (sib != id) raw.push_back(sib);
  } else {
    const PeerId& grandparent = *parent.parent;
    for (const PeerId& sib : room.peers.at(grandparent).children)
      if (sib != *p->parent) raw.push_back(sib);
    raw.push_back(grandparent);
  }

  std::vector<PeerId> out;
  for (const PeerId& c : raw) {
    const PeerRecord* r = room.find(c);
    if (r && r->state == PeerState::kActive && c != id) out.push_back(c);
  }
  std::stable_sort(out.begin(), out.end(), [&room](const PeerId& a, const PeerId& b) {
    int da = depth(room, a), db = depth(room, b);
    if (da != db) return da < db;
    const PeerRecord& ra = *room.find(a);
    const PeerRecord& rb = *room.find(b);
    if (ra.score != rb.score) return ra.score > rb.score;
    if (ra.join_order != rb.join_order) return ra.join_order < rb.join_order;
    return a < b;
  });
  if (out.empty()) out.push_back(room.source);
  return out;
}

namespace detail {

// Walks the orphan's precomputed candidate list and records the first live
// entry in active_aux. Candidates that meanwhile ended up inside the orphan's
// own subtree cannot feed it and are skipped.
inline PeerId activate_auxiliary_impl(RoomState& room, const PeerId& orphan) {
  const PeerRecord* o = room.find(orphan);
  if (!o || o->state != PeerState::kActive)
    throw Error(Errc::unknown_peer, "no ACTIVE peer '" + orphan + "'");
  auto it = room.aux_table.find(orphan);
  std::set<PeerId> own = collect_subtree(room, orphan);
  if (it != room.aux_table.end()) {
    for (const PeerId& cand : it->second) {
      const PeerRecord* c = room.find(cand);
      if (!c || c->state != PeerState::kActive || own.count(cand)) continue;
      if (cand != room.source && !c->parent) continue;  // helper must be fed itself
      room.active_aux[orphan] = cand;
      return cand;
    }
  }
  throw Error(Errc::no_live_candidate, "no live auxiliary candidate for '" + orphan + "'");
}

}  // namespace detail

inline PeerId activate_auxiliary(RoomState& room, const PeerId& orphan) {
  return detail::activate_auxiliary_impl(room, orphan);
}

inline RoomState create_room(const std::string& room_id, PeerRecord source_peer,
                             double streaming_rate_mbps, const ScoreParams& params,
                             SlotPolicy slot_policy = SlotPolicy::kBucketed) {
  if (!valid_peer_id(source_peer.id))
    throw Error(Errc::invalid_parameter, "source id must be 1-64 printable characters");
  detail::require_rate_and_params(streaming_rate_mbps, params);
  RoomState room;
  room.room_id = room_id;
  room.source = source_peer.id;
  room.streaming_rate_mbps = streaming_rate_mbps;
  room.params = params;
  room.slot_policy = slot_policy;
  source_peer.score = initial_score(source_peer.upload_bandwidth_mbps, streaming_rate_mbps, params);
  source_peer.slots =
      slots_for(source_peer.upload_bandwidth_mbps, streaming_rate_mbps, params, slot_policy);
  source_peer.parent.reset();
  source_peer.children.clear();
  source_peer.state = PeerState::kActive;
  source_peer.join_order = room.next_join_order++;
  room.peers.emplace(source_peer.id, std::move(source_peer));
  return room;
}

// Joins a peer whose score and slots the caller already computed. A tombstone
// with the same id is resurrected: its failure count and accumulated active
// duration survive, and the score is recomputed from the merged stats.
inline JoinOutcome join_peer(RoomState& room, PeerRecord peer) {
  if (!valid_peer_id(peer.id))
    throw Error(Errc::invalid_parameter, "peer id must be 1-64 printable characters");
  if (!(peer.upload_bandwidth_mbps > 0))
    throw Error(Errc::invalid_parameter, "peer bandwidth must be positive");
  if (peer.latency_s <= 0) peer.latency_s = room.params.latency_floor_s;
  if (peer.slots < 0 || peer.score < 0)
    throw Error(Errc::invalid_parameter, "peer score/slots must be non-negative");

  if (const PeerRecord* existing = room.find(peer.id)) {
    if (existing->state == PeerState::kActive)
      throw Error(Errc::duplicate_peer, "peer '" + peer.id + "' is already ACTIVE");
    peer.num_of_failure = existing->num_of_failure;
    peer.active_duration_s = existing->active_duration_s;
    peer.score = compute_score({peer.upload_bandwidth_mbps, peer.latency_s,
                                peer.active_duration_s, peer.num_of_failure},
                               room.streaming_rate_mbps, room.params);
  }

  detail::Placement pl = detail::plan_join(room, peer, 0, {});

  PeerId id = peer.id;
  peer.parent.reset();
  peer.children.clear();
  peer.state = PeerState::kActive;
  peer.join_order = room.next_join_order++;
  room.peers.insert_or_assign(id, std::move(peer));
  detail::commit_placement(room, id, pl);

  JoinOutcome out{pl.parent, pl.displaced, auxiliary_candidates(room, id)};
  room.aux_table[id] = out.aux_candidates;
  return out;
}

namespace detail {

// Re-runs the join placement for an already ACTIVE peer whose parent link was
// severed, keeping its subtree attached. The subtree itself is off limits as
// a parent candidate.
inline JoinOutcome place_subtree(RoomState& room, const PeerId& id) {
  PeerRecord& rec = room.peers.at(id);
  std::set<PeerId> subtree = collect_subtree(room, id);
  Placement pl = plan_join(room, rec, static_cast<int>(rec.children.size()), subtree);
  commit_placement(room, id, pl);
  JoinOutcome out{pl.parent, pl.displaced, auxiliary_candidates(room, id)};
  room.aux_table[id] = out.aux_candidates;
  return out;
}

// Highest-score ACTIVE peer that is neither the source nor one of its direct
// children; used to refill a vacancy right under the source.
inline std::optional<PeerId> find_next_best_node(const RoomState& room) {
  const PeerRecord& src = room.peers.at(room.source);
  std::set<PeerId> direct(src.children.begin(), src.children.end());
  const PeerRecord* best = nullptr;
  for (const auto& [id, p] : room.peers) {
    if (p.state != PeerState::kActive || id == room.source || direct.count(id)) continue;
    if (!best || p.score > best->score ||
        (p.score == best->score &&
         (p.join_order < best->join_order || (p.join_order == best->join_order && id < best->id))))
      best = &p;
  }
  if (!best) return std::nullopt;
  return best->id;
}

inline void refresh_aux(RoomState& room, const PeerId& id) {
  if (id == room.source) return;
  room.aux_table[id] = auxiliary_candidates(room, id);
}

// Shared removal path for voluntary leave and detected failure. Runs on a
// scratch copy so a mid-restructure error cannot leave the room torn.
inline LeaveOutcome remove_peer(RoomState& room, const PeerId& id, bool is_failure) {
  const PeerRecord* p = room.find(id);
  if (!p || p->state != PeerState::kActive)
    throw Error(Errc::unknown_peer, "no ACTIVE peer '" + id + "'");
  if (id == room.source)
    throw Error(Errc::source_cannot_leave, "source departure ends the room");

  RoomState work = room;
  LeaveOutcome out;
  PeerRecord& rec = work.peers.at(id);
  rec.state = is_failure ? PeerState::kFailed : PeerState::kLeaving;
  if (is_failure) ++rec.num_of_failure;
  PeerId old_parent = *rec.parent;
  std::vector<PeerId> kids = rec.children;

  // Bridge every orphan through an auxiliary feeder before restructuring.
  for (const PeerId& kid : kids) {
    try {
      out.aux_bridges.push_back({kid, activate_auxiliary_impl(work, kid)});
    } catch (const Error& e) {
      if (e.code() != Errc::no_live_candidate) throw;
      out.aux_bridges.push_back({kid, std::nullopt});  // rejoins without a bridge
    }
  }

  // Detach the leaver; its slot under old_parent is up for grabs.
  PeerRecord& parent_rec = work.peers.at(old_parent);
  auto slot = std::find(parent_rec.children.begin(), parent_rec.children.end(), id);
  std::size_t slot_index = static_cast<std::size_t>(slot - parent_rec.children.begin());
  parent_rec.children.erase(slot);
  rec.parent.reset();
  rec.children.clear();
  work.aux_table.erase(id);
  work.active_aux.erase(id);

  if (!kids.empty()) {
    // Best child steps into the leaver's position, subtree intact.
    PeerId best = kids.front();
    for (const PeerId& kid : kids) {
      const PeerRecord& a = work.peers.at(kid);
      const PeerRecord& b = work.peers.at(best);
      if (a.score > b.score ||
          (a.score == b.score &&
           (a.join_order < b.join_order || (a.join_order == b.join_order && kid < best))))
        best = kid;
    }
    PeerRecord& promoted = work.peers.at(best);
    promoted.parent = old_parent;
    PeerRecord& np = work.peers.at(old_parent);
    np.children.insert(np.children.begin() + static_cast<std::ptrdiff_t>(
                                                  std::min(slot_index, np.children.size())),
                       best);
    work.active_aux.erase(best);
    out.promoted_child = best;
    refresh_aux(work, best);

    // The rest re-enter the joining protocol, strongest first.
    std::vector<PeerId> rest;
    for (const PeerId& kid : kids)
      if (kid != best) rest.push_back(kid);
    std::stable_sort(rest.begin(), rest.end(), [&work](const PeerId& a, const PeerId& b) {
      const PeerRecord& ra = work.peers.at(a);
      const PeerRecord& rb = work.peers.at(b);
      if (ra.score != rb.score) return ra.score > rb.score;
      if (ra.join_order != rb.join_order) return ra.join_order < rb.join_order;
      return a < b;
    });
    for (const PeerId& kid : rest) {
      work.peers.at(kid).parent.reset();
      out.rejoined_peers.emplace_back(kid, place_subtree(work, kid));
      work.active_aux.erase(kid);
    }
  } else if (old_parent == work.source) {
    // A free rider vacated a seat right under the source: pull up the best
    // peer that is not already a direct child, subtree intact.
    if (std::optional<PeerId> next = find_next_best_node(work)) {
      detach(work, *next);
      PeerRecord& src = work.peers.at(work.source);
      src.children.insert(src.children.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                      slot_index, src.children.size())),
                          *next);
      work.peers.at(*next).parent = work.source;
      work.active_aux.erase(*next);
      out.refilled_source_child = *next;
      refresh_aux(work, *next);
    }
  }

  room = std::move(work);
  return out;
}

}  // namespace detail

// Voluntary departure (Algorithm 2). The leaver's best child takes its place,
// its other children re-enter the joining protocol, and a childless direct
// child of the source is backfilled by the next best node.
inline LeaveOutcome leave_peer(RoomState& room, const PeerId& id) {
  return detail::remove_peer(room, id, /*is_failure=*/false);
}

// Same restructuring as leave_peer, but the tombstone's failure count is
// incremented so a future rejoin scores the peer as less stable.
inline LeaveOutcome handle_failure(RoomState& room, const PeerId& id) {
  return detail::remove_peer(room, id, /*is_failure=*/true);
}

// Applies a mid-stream stats report and recomputes the stored score. The tree
// is not restructured; the new score only affects future parent decisions.
inline double update_stats(RoomState& room, const PeerId& id, double latency_s,
                           double active_duration_s) {
  PeerRecord* p = room.find(id);
  if (!p || p->state != PeerState::kActive)
    throw Error(Errc::unknown_peer, "no ACTIVE peer '" + id + "'");
  if (latency_s <= 0 || active_duration_s < 0)
    throw Error(Errc::invalid_parameter, "latency must be > 0 and duration >= 0");
  p->latency_s = latency_s;
  p->active_duration_s = active_duration_s;
  p->score = compute_score({p->upload_bandwidth_mbps, p->latency_s, p->active_duration_s,
                            p->num_of_failure},
                           room.streaming_rate_mbps, room.params);
  return p->score;
}

}  // namespace fybrr
