#pragma once

// Peer fitness scoring and slot budgets.
//
//   score = k1 * bandwidth/rate + k2 * 1/latency + k3 * duration/failures
//
// with floor guards on the two divisors. Slots come either from the raw
// bandwidth/rate ratio or from the bucketed table used in the experiments.

#include <cmath>

#include "fybrr/core.hpp"

namespace fybrr {

struct PeerStats {
  double upload_bandwidth_mbps = 0.0;
  double latency_s = 0.0;
  double active_duration_s = 0.0;
  int num_of_failure = 0;
};

namespace detail {
inline void require_rate_and_params(double streaming_rate_mbps, const ScoreParams& params) {
  if (!(streaming_rate_mbps > 0))
    throw Error(Errc::invalid_parameter, "streaming_rate must be positive");
  if (!params.valid())
    throw Error(Errc::invalid_parameter, "score params: " + params.violations().front());
}
}  // namespace detail

inline double compute_score(const PeerStats& stats, double streaming_rate_mbps,
                            const ScoreParams& params) {
  detail::require_rate_and_params(streaming_rate_mbps, params);
  if (!(stats.upload_bandwidth_mbps > 0))
    throw Error(Errc::invalid_parameter, "upload_bandwidth must be positive");
  if (stats.latency_s < 0 || stats.active_duration_s < 0 || stats.num_of_failure < 0)
    throw Error(Errc::invalid_parameter, "latency, duration and failures must be >= 0");

  double capacity = stats.upload_bandwidth_mbps / streaming_rate_mbps;
  double latency = std::max(stats.latency_s, params.latency_floor_s);
  double failures = static_cast<double>(std::max(stats.num_of_failure, params.failure_floor));
  return params.k1 * capacity + params.k2 * (1.0 / latency) +
         params.k3 * (stats.active_duration_s / failures);
}

// Score of a peer that just joined: only the bandwidth term is known, the
// latency and stability terms accrue during the stream.
inline double initial_score(double upload_bandwidth_mbps, double streaming_rate_mbps,
                            const ScoreParams& params) {
  detail::require_rate_and_params(streaming_rate_mbps, params);
  if (!(upload_bandwidth_mbps > 0))
    throw Error(Errc::invalid_parameter, "upload_bandwidth must be positive");
  return params.k1 * (upload_bandwidth_mbps / streaming_rate_mbps);
}

inline int compute_slots(double upload_bandwidth_mbps, double streaming_rate_mbps) {
  if (!(upload_bandwidth_mbps > 0) || !(streaming_rate_mbps > 0))
    throw Error(Errc::invalid_parameter, "bandwidth and streaming_rate must be positive");
  return static_cast<int>(std::floor(upload_bandwidth_mbps / streaming_rate_mbps));
}

// Experimental slot table: [5,15) -> 2, [15,50) -> 3, [50,100] -> 4 Mbps,
// clamped into [min_slots, max_slots] outside the measured range.
inline int bucketed_slots(double upload_bandwidth_mbps, const ScoreParams& params) {
  if (!(upload_bandwidth_mbps > 0))
    throw Error(Errc::invalid_parameter, "upload_bandwidth must be positive");
  int slots;
  if (upload_bandwidth_mbps < 5.0)
    slots = params.min_slots;
  else if (upload_bandwidth_mbps < 15.0)
    slots = 2;
  else if (upload_bandwidth_mbps < 50.0)
    slots = 3;
  else if (upload_bandwidth_mbps <= 100.0)
    slots = 4;
  else
    slots = params.max_slots;
  return std::min(std::max(slots, params.min_slots), params.max_slots);
}

inline int slots_for(double upload_bandwidth_mbps, double streaming_rate_mbps,
                     const ScoreParams& params, SlotPolicy policy) {
  return policy == SlotPolicy::kBucketed
             ? bucketed_slots(upload_bandwidth_mbps, params)
             : compute_slots(upload_bandwidth_mbps, streaming_rate_mbps);
}

}  // namespace fybrr
