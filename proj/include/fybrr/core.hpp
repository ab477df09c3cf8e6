#pragma once

// Core domain model for a streaming room: peers, the overlay tree and the
// structural invariants that every mutation has to preserve.

#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fybrr {

using PeerId = std::string;

enum class Errc {
  invalid_parameter,
  room_not_found,
  duplicate_room,
  duplicate_peer,
  unknown_peer,
  no_capacity,
  empty_children,
  source_cannot_leave,
  source_has_no_aux,
  no_live_candidate,
  insufficient_data,
  empty_trace,
  corrupt_log,
  bad_message,
  invalid_config,
  io_error,
};

inline const char* to_string(Errc c) {
  switch (c) {
    case Errc::invalid_parameter: return "invalid-parameter";
    case Errc::room_not_found: return "room-not-found";
    case Errc::duplicate_room: return "duplicate-room";
    case Errc::duplicate_peer: return "duplicate-peer";
    case Errc::unknown_peer: return "unknown-peer";
    case Errc::no_capacity: return "no-capacity";
    case Errc::empty_children: return "empty-children";
    case Errc::source_cannot_leave: return "source-cannot-leave";
    case Errc::source_has_no_aux: return "source-has-no-aux";
    case Errc::no_live_candidate: return "no-live-candidate";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::empty_trace: return "empty-trace";
    case Errc::corrupt_log: return "corrupt-log";
    case Errc::bad_message: return "bad-message";
    case Errc::invalid_config: return "invalid-config";
    case Errc::io_error: return "io-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

enum class PeerState { kJoining, kActive, kLeaving, kFailed };

inline const char* to_string(PeerState s) {
  switch (s) {
    case PeerState::kJoining: return "JOINING";
    case PeerState::kActive: return "ACTIVE";
    case PeerState::kLeaving: return "LEAVING";
    case PeerState::kFailed: return "FAILED";
  }
  return "?";
}

// Weights and guard values for the score function plus the slot budget range.
// k1+k2+k3 must sum to one; the floors keep the latency and stability terms
// finite when a peer reports zero latency or has never failed.
struct ScoreParams {
  double k1 = 0.5;
  double k2 = 0.25;
  double k3 = 0.25;
  double latency_floor_s = 0.001;
  int failure_floor = 1;
  int min_slots = 2;
  int max_slots = 4;

  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (k1 < 0 || k2 < 0 || k3 < 0) v.push_back("score weights must be non-negative");
    double sum = k1 + k2 + k3;
    if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9) v.push_back("score weights must sum to 1");
    if (!(latency_floor_s > 0)) v.push_back("latency_floor_s must be positive");
    if (failure_floor < 1) v.push_back("failure_floor must be >= 1");
    if (min_slots < 1 || min_slots > max_slots) v.push_back("need 1 <= min_slots <= max_slots");
    return v;
  }
  bool valid() const { return violations().empty(); }

  friend bool operator==(const ScoreParams&, const ScoreParams&) = default;
};

// How a peer's slot budget is derived from its upload bandwidth.
enum class SlotPolicy { kBucketed, kBandwidthRatio };

inline const char* to_string(SlotPolicy p) {
  return p == SlotPolicy::kBucketed ? "bucketed" : "bandwidth-ratio";
}

struct PeerRecord {
  PeerId id;
  double upload_bandwidth_mbps = 0.0;
  double latency_s = 0.001;          // measured source-to-peer
  double active_duration_s = 0.0;    // accumulated across the session
  int num_of_failure = 0;            // cumulative across rejoins
  double score = 0.0;
  int slots = 0;                     // total children capacity
  std::optional<PeerId> parent;      // absent only for the source
  std::vector<PeerId> children;      // insertion order; ties elsewhere use it
  PeerState state = PeerState::kJoining;
  std::uint64_t join_order = 0;      // room-local, assigned when turning ACTIVE

  int free_slots() const { return slots - static_cast<int>(children.size()); }

  friend bool operator==(const PeerRecord&, const PeerRecord&) = default;
};

inline bool valid_peer_id(std::string_view id) {
  if (id.empty() || id.size() > 64) return false;
  for (unsigned char c : id)
    if (!std::isprint(c)) return false;
  return true;
}

// One streaming session. The parent/children relation over ACTIVE peers forms
// a single tree rooted at the source; LEAVING/FAILED records stay behind as
// tombstones so failure counts survive a rejoin.
struct RoomState {
  std::string room_id;
  PeerId source;
  std::map<PeerId, PeerRecord> peers;
  double streaming_rate_mbps = 0.0;
  ScoreParams params;
  SlotPolicy slot_policy = SlotPolicy::kBucketed;
  // Precomputed auxiliary candidates per peer, and the live orphan -> helper
  // links that exist only while a departure is being repaired.
  std::map<PeerId, std::vector<PeerId>> aux_table;
  std::map<PeerId, PeerId> active_aux;
  std::uint64_t next_join_order = 0;

  const PeerRecord* find(const PeerId& id) const {
    auto it = peers.find(id);
    return it == peers.end() ? nullptr : &it->second;
  }
  PeerRecord* find(const PeerId& id) {
    auto it = peers.find(id);
    return it == peers.end() ? nullptr : &it->second;
  }
  bool is_active(const PeerId& id) const {
    const PeerRecord* p = find(id);
    return p && p->state == PeerState::kActive;
  }
  std::size_t active_count() const {
    std::size_t n = 0;
    for (const auto& [id, p] : peers)
      if (p.state == PeerState::kActive) ++n;
    return n;
  }

  friend bool operator==(const RoomState&, const RoomState&) = default;
};

// Diagnostic check of every structural invariant. Returns one human-readable
// line per violation; empty means the room is consistent.
inline std::vector<std::string> validate_room(const RoomState& room) {
  std::vector<std::string> out;
  auto fail = [&out](const std::string& msg) { out.push_back(msg); };

  for (const auto& msg : room.params.violations()) fail("params: " + msg);
  if (!(room.streaming_rate_mbps > 0)) fail("streaming_rate must be positive");

  const PeerRecord* src = room.find(room.source);
  if (!src) {
    fail("source '" + room.source + "' not present in peers map");
    return out;
  }
  if (src->state != PeerState::kActive) fail("source is not ACTIVE");
  if (src->parent) fail("source must not have a parent");

  // Per-record checks plus a global child -> parent index.
  std::map<PeerId, PeerId> child_owner;
  for (const auto& [id, p] : room.peers) {
    if (id != p.id) fail("peer map key '" + id + "' differs from record id '" + p.id + "'");
    if (!valid_peer_id(id)) fail("peer id '" + id + "' is not 1-64 printable characters");
    if (!(p.upload_bandwidth_mbps > 0)) fail("peer " + id + ": upload bandwidth must be positive");
    if (!(p.latency_s > 0)) fail("peer " + id + ": latency must be positive");
    if (p.active_duration_s < 0) fail("peer " + id + ": active_duration must be >= 0");
    if (p.num_of_failure < 0) fail("peer " + id + ": num_of_failure must be >= 0");
    if (p.score < 0) fail("peer " + id + ": score must be >= 0");
    if (p.slots < 0) fail("peer " + id + ": slots must be >= 0");

    if (p.state == PeerState::kActive) {
      if (static_cast<int>(p.children.size()) > p.slots) {
        std::ostringstream os;
        os << "peer " << id << ": " << p.children.size() << " children exceed " << p.slots
           << " slots";
        fail(os.str());
      }
      if (id == room.source) {
        if (p.parent) fail("source must have no parent");
      } else if (!p.parent) {
        fail("ACTIVE peer " + id + " has no parent");
      }
    } else {
      if (p.parent) fail(std::string(to_string(p.state)) + " peer " + id + " still has a parent");
      if (!p.children.empty())
        fail(std::string(to_string(p.state)) + " peer " + id + " still has children");
    }

    for (const PeerId& c : p.children) {
      auto [it, inserted] = child_owner.emplace(c, id);
      if (!inserted)
        fail("peer " + c + " appears in children of both " + it->second + " and " + id);
      const PeerRecord* cr = room.find(c);
      if (!cr) {
        fail("peer " + id + " lists unknown child " + c);
        continue;
      }
      if (cr->state != PeerState::kActive)
        fail("peer " + id + " lists " + std::string(to_string(cr->state)) + " child " + c);
      else if (!cr->parent || *cr->parent != id)
        fail("peer " + id + " lists child " + c + " but " + c + ".parent = " +
             (cr->parent ? *cr->parent : std::string("(none)")));
    }
  }

  // Cross-check parent pointers against children lists.
  for (const auto& [id, p] : room.peers) {
    if (p.state != PeerState::kActive || !p.parent) continue;
    const PeerRecord* pr = room.find(*p.parent);
    if (!pr) {
      fail("peer " + id + " has unknown parent " + *p.parent);
      continue;
    }
    if (pr->state != PeerState::kActive)
      fail("peer " + id + " has " + std::string(to_string(pr->state)) + " parent " + *p.parent);
    bool listed = false;
    for (const PeerId& c : pr->children)
      if (c == id) listed = true;
    if (!listed) fail("peer " + id + " has parent " + *p.parent + " that does not list it");
  }

  // Reachability: every ACTIVE peer hangs off the source, no cycles.
  std::set<PeerId> seen;
  std::vector<PeerId> stack{room.source};
  while (!stack.empty()) {
    PeerId id = stack.back();
    stack.pop_back();
    if (!seen.insert(id).second) {
      fail("cycle detected at peer " + id);
      continue;
    }
    const PeerRecord* p = room.find(id);
    if (!p) continue;
    for (const PeerId& c : p->children) stack.push_back(c);
  }
  std::size_t active = 0, edges = 0;
  for (const auto& [id, p] : room.peers) {
    if (p.state != PeerState::kActive) continue;
    ++active;
    edges += p.children.size();
    if (!seen.count(id)) fail("ACTIVE peer " + id + " not reachable from source");
  }
  if (active > 0 && edges != active - 1) {
    std::ostringstream os;
    os << "tree has " << edges << " edges for " << active << " ACTIVE peers";
    fail(os.str());
  }

  // Auxiliary links must point at live peers that are themselves fed.
  for (const auto& [orphan, aux] : room.active_aux) {
    const PeerRecord* o = room.find(orphan);
    const PeerRecord* a = room.find(aux);
    if (!o || o->state != PeerState::kActive)
      fail("active_aux orphan " + orphan + " is not an ACTIVE peer");
    if (!a || a->state != PeerState::kActive)
      fail("active_aux helper " + aux + " is not an ACTIVE peer");
    else if (aux != room.source && !a->parent)
      fail("active_aux helper " + aux + " has no stream source of its own");
  }
  for (const auto& [id, list] : room.aux_table) {
    if (!room.find(id)) fail("aux_table entry for unknown peer " + id);
    (void)list;
  }
  return out;
}

}  // namespace fybrr
