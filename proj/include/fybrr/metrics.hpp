#pragma once

// Receiver-side performance metrics over packet traces: delivery ratio,
// latency, interarrival jitter (RFC 3550 section 6.4.1 recurrence) and the
// per-scheme aggregate report with its CSV projections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fybrr/core.hpp"

namespace fybrr {

// Times are integer simulated microseconds end to end; that keeps event order
// and replay comparisons exact.
struct PacketTraceEntry {
  PeerId node;
  std::int64_t seq = 0;
  std::int64_t emit_us = 0;
  std::int64_t arrive_us = 0;
  bool delivered = false;

  friend bool operator==(const PacketTraceEntry&, const PacketTraceEntry&) = default;
};

struct TopologySnapshot {
  std::int64_t time_us = 0;
  std::map<PeerId, PeerId> parent_of;  // child -> parent, over ACTIVE peers
  int height = 0;
};

inline double compute_pdr(std::int64_t received, std::int64_t lost) {
  if (received < 0 || lost < 0)
    throw Error(Errc::invalid_parameter, "packet counts must be non-negative");
  if (received + lost == 0) throw Error(Errc::empty_trace, "no packets accounted for");
  return static_cast<double>(received) / static_cast<double>(received + lost);
}

struct JitterResult {
  double final_ms = 0.0;
  std::vector<std::pair<std::int64_t, double>> series;  // (seq, running estimate)
};

// Running interarrival jitter over one node's trace, ordered by seq. D is the
// transit-time difference between consecutively *delivered* packets; lost
// packets in between are skipped.
inline JitterResult compute_jitter(const std::vector<PacketTraceEntry>& trace) {
  JitterResult out;
  bool have_prev = false;
  std::int64_t prev_transit_us = 0;
  std::size_t delivered = 0;
  double j_ms = 0.0;
  for (const PacketTraceEntry& e : trace) {
    if (!e.delivered) continue;
    ++delivered;
    std::int64_t transit_us = e.arrive_us - e.emit_us;
    if (have_prev) {
      double d_ms = std::abs(static_cast<double>(transit_us - prev_transit_us)) / 1000.0;
      j_ms += (d_ms - j_ms) / 16.0;
      out.series.emplace_back(e.seq, j_ms);
    }
    prev_transit_us = transit_us;
    have_prev = true;
  }
  if (delivered < 2)
    throw Error(Errc::insufficient_data, "jitter needs at least two delivered packets");
  out.final_ms = j_ms;
  return out;
}

struct LatencyResult {
  std::vector<double> per_packet_ms;
  double mean_ms = 0.0;
};

inline LatencyResult compute_latency(const std::vector<PacketTraceEntry>& trace) {
  LatencyResult out;
  double sum = 0.0;
  for (const PacketTraceEntry& e : trace) {
    if (!e.delivered) continue;
    double ms = static_cast<double>(e.arrive_us - e.emit_us) / 1000.0;
    out.per_packet_ms.push_back(ms);
    sum += ms;
  }
  if (out.per_packet_ms.empty()) throw Error(Errc::empty_trace, "no delivered packets");
  out.mean_ms = sum / static_cast<double>(out.per_packet_ms.size());
  return out;
}

struct NodeMetrics {
  std::int64_t received = 0;
  std::int64_t lost = 0;
  double pdr = 1.0;
  double mean_latency_ms = 0.0;
  double jitter_ms = 0.0;
  std::optional<double> startup_delay_s;  // empty: never received
  int final_depth = -1;                   // -1: not in final topology
  bool leaf = false;
};

struct SeriesPoint {
  std::string metric;
  PeerId node;
  double t_s = 0.0;
  double value = 0.0;
};

struct MetricReport {
  std::map<PeerId, NodeMetrics> per_node;
  double mean_pdr = 1.0;
  double leaf_mean_latency_ms = 0.0;
  double leaf_median_latency_ms = 0.0;
  double leaf_mean_jitter_ms = 0.0;
  double leaf_median_jitter_ms = 0.0;
  double mean_startup_delay_s = 0.0;
  std::vector<std::pair<double, int>> height_series;  // (t_s, height)
  double utilization = 0.0;
  std::vector<SeriesPoint> series;  // 1-second resolution plot data
};

namespace detail {
inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// Folds per-node traces into the report. Leaf-node averages follow the final
// snapshot's leaf set; series are bucketed at one simulated second. The
// optional first-arrival map overrides trace-derived startup times (a peer
// joining mid-stream starts on packets emitted before it subscribed).
inline MetricReport aggregate_report(const std::vector<PacketTraceEntry>& traces,
                                     const std::vector<TopologySnapshot>& snapshots,
                                     const std::map<PeerId, std::int64_t>& join_time_us,
                                     const std::map<PeerId, std::int64_t>& first_arrival_us = {}) {
  MetricReport report;

  std::map<PeerId, std::vector<PacketTraceEntry>> per_node;
  for (const PacketTraceEntry& e : traces) per_node[e.node].push_back(e);

  std::map<PeerId, int> final_depth;
  std::map<PeerId, bool> is_leaf;
  if (!snapshots.empty()) {
    const TopologySnapshot& last = snapshots.back();
    std::map<PeerId, int> child_count;
    for (const auto& [child, parent] : last.parent_of) {
      ++child_count[parent];
      child_count.emplace(child, child_count[child]);
    }
    for (const auto& [child, parent] : last.parent_of) {
      int d = 0;
      PeerId at = child;
      while (true) {
        auto it = last.parent_of.find(at);
        if (it == last.parent_of.end()) break;
        at = it->second;
        ++d;
      }
      final_depth[child] = d;
      is_leaf[child] = child_count[child] == 0;
      final_depth.emplace(at, 0);
      is_leaf.emplace(at, false);
    }
  }

  std::vector<double> leaf_lat, leaf_jit, startups;
  std::int64_t total_received = 0, total_lost = 0;
  for (auto& [node, entries] : per_node) {
    std::sort(entries.begin(), entries.end(),
              [](const PacketTraceEntry& a, const PacketTraceEntry& b) { return a.seq < b.seq; });
    NodeMetrics m;
    std::int64_t first_arrival = -1;
    for (const PacketTraceEntry& e : entries) {
      if (e.delivered) {
        ++m.received;
        if (first_arrival < 0 || e.arrive_us < first_arrival) first_arrival = e.arrive_us;
      } else {
        ++m.lost;
      }
    }
    if (m.received + m.lost > 0) m.pdr = compute_pdr(m.received, m.lost);
    if (m.received > 0) m.mean_latency_ms = compute_latency(entries).mean_ms;
    if (m.received >= 2) m.jitter_ms = compute_jitter(entries).final_ms;
    if (auto fa = first_arrival_us.find(node); fa != first_arrival_us.end())
      first_arrival = fa->second;
    auto jt = join_time_us.find(node);
    if (jt != join_time_us.end() && first_arrival >= 0)
      m.startup_delay_s = static_cast<double>(first_arrival - jt->second) / 1e6;
    if (auto it = final_depth.find(node); it != final_depth.end()) m.final_depth = it->second;
    if (auto it = is_leaf.find(node); it != is_leaf.end()) m.leaf = it->second;

    total_received += m.received;
    total_lost += m.lost;
    if (m.leaf && m.received > 0) {
      leaf_lat.push_back(m.mean_latency_ms);
      if (m.received >= 2) leaf_jit.push_back(m.jitter_ms);
    }
    if (m.startup_delay_s) startups.push_back(*m.startup_delay_s);
    report.per_node[node] = m;
  }

  if (total_received + total_lost > 0) report.mean_pdr = compute_pdr(total_received, total_lost);
  if (!leaf_lat.empty()) {
    double s = 0;
    for (double v : leaf_lat) s += v;
    report.leaf_mean_latency_ms = s / static_cast<double>(leaf_lat.size());
    report.leaf_median_latency_ms = detail::median(leaf_lat);
  }
  if (!leaf_jit.empty()) {
    double s = 0;
    for (double v : leaf_jit) s += v;
    report.leaf_mean_jitter_ms = s / static_cast<double>(leaf_jit.size());
    report.leaf_median_jitter_ms = detail::median(leaf_jit);
  }
  if (!startups.empty()) {
    double s = 0;
    for (double v : startups) s += v;
    report.mean_startup_delay_s = s / static_cast<double>(startups.size());
  }
  for (const TopologySnapshot& snap : snapshots)
    report.height_series.emplace_back(static_cast<double>(snap.time_us) / 1e6, snap.height);

  // Per-second series: mean leaf latency and delivery ratio of the packets
  // that arrived in each bucket, plus the height timeline.
  std::map<std::int64_t, std::pair<double, std::int64_t>> lat_buckets;  // sum, count
  std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> pdr_buckets;  // recv, total
  for (const PacketTraceEntry& e : traces) {
    std::int64_t bucket = e.emit_us / 1000000;
    auto& p = pdr_buckets[bucket];
    ++p.second;
    if (!e.delivered) continue;
    ++p.first;
    if (auto it = is_leaf.find(e.node); it != is_leaf.end() && it->second) {
      auto& b = lat_buckets[bucket];
      b.first += static_cast<double>(e.arrive_us - e.emit_us) / 1000.0;
      ++b.second;
    }
  }
  for (const auto& [t, b] : lat_buckets)
    if (b.second > 0)
      report.series.push_back({"leaf_latency_ms", "", static_cast<double>(t),
                               b.first / static_cast<double>(b.second)});
  for (const auto& [t, b] : pdr_buckets)
    if (b.second > 0)
      report.series.push_back({"pdr", "", static_cast<double>(t),
                               static_cast<double>(b.first) / static_cast<double>(b.second)});
  for (const auto& [t, h] : report.height_series)
    report.series.push_back({"height", "", t, static_cast<double>(h)});
  int join_index = 0;
  for (const auto& [node, t] : join_time_us) {
    (void)t;
    auto it = report.per_node.find(node);
    if (it != report.per_node.end() && it->second.startup_delay_s)
      report.series.push_back(
          {"startup_delay_s", node, static_cast<double>(join_index), *it->second.startup_delay_s});
    ++join_index;
  }
  return report;
}

inline void write_trace_csv(std::ostream& os, const std::vector<PacketTraceEntry>& traces) {
  os << "node_id,seq,emit_us,arrive_us,delivered\n";
  for (const PacketTraceEntry& e : traces)
    os << e.node << ',' << e.seq << ',' << e.emit_us << ',' << (e.delivered ? e.arrive_us : 0)
       << ',' << (e.delivered ? 1 : 0) << '\n';
}

inline void write_series_csv(std::ostream& os, const MetricReport& report) {
  os << "metric,node_id,t_s,value\n";
  std::ostringstream tmp;
  tmp << std::setprecision(9);
  for (const SeriesPoint& p : report.series) {
    tmp.str("");
    tmp << p.t_s << ',' << p.value;
    os << p.metric << ',' << p.node << ',' << tmp.str() << '\n';
  }
}

inline void write_snapshot_csv(std::ostream& os, const TopologySnapshot& snap) {
  os << "child,parent\n";
  for (const auto& [child, parent] : snap.parent_of) os << child << ',' << parent << '\n';
}

}  // namespace fybrr
