#pragma once

// Engine configuration file: one JSON document with optional "scoring",
// "heartbeat", "simulation" and "service" sections. Missing fields keep
// their defaults; FYBRR_* environment variables override the file and
// command-line flags override both.

#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "fybrr/heartbeat.hpp"
#include "fybrr/service.hpp"
#include "fybrr/sim.hpp"

namespace fybrr {

struct EngineConfig {
  ScoreParams score_params;
  HeartbeatConfig heartbeat;
  SimConfig sim;
  std::string listen = "0.0.0.0:7470";
  std::string log_dir;
  bool trust_client_scores = false;

  ServiceConfig service() const {
    ServiceConfig s;
    s.score_params = score_params;
    s.heartbeat = heartbeat;
    s.slot_policy = sim.slot_policy;
    s.default_streaming_rate_mbps = sim.streaming_rate_mbps;
    s.trust_client_scores = trust_client_scores;
    s.log_dir = log_dir;
    return s;
  }
};

namespace detail {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void parse_scoring(const nlohmann::json& j, ScoreParams& p) {
  read_field(j, "k1", p.k1);
  read_field(j, "k2", p.k2);
  read_field(j, "k3", p.k3);
  read_field(j, "latency_floor_s", p.latency_floor_s);
  read_field(j, "failure_floor", p.failure_floor);
  read_field(j, "min_slots", p.min_slots);
  read_field(j, "max_slots", p.max_slots);
}

inline void parse_heartbeat(const nlohmann::json& j, HeartbeatConfig& h) {
  read_field(j, "interval_s", h.interval_s);
  read_field(j, "miss_threshold", h.miss_threshold);
}

inline void parse_simulation(const nlohmann::json& j, SimConfig& s) {
  read_field(j, "seed", s.seed);
  read_field(j, "num_peers", s.num_peers);
  if (j.contains("scheme")) {
    auto scheme = parse_scheme(j.at("scheme").get<std::string>());
    if (!scheme) throw Error(Errc::invalid_config, "scheme must be fybrr, binary or quad");
    s.scheme = *scheme;
  }
  read_field(j, "streaming_rate_mbps", s.streaming_rate_mbps);
  read_field(j, "packet_rate_pps", s.packet_rate_pps);
  read_field(j, "duration_s", s.duration_s);
  read_field(j, "join_gap_s", s.join_gap_s);
  if (j.contains("bandwidth_buckets")) {
    s.bandwidth_buckets.clear();
    for (const auto& b : j.at("bandwidth_buckets"))
      s.bandwidth_buckets.push_back({b.at("lo_mbps").get<double>(), b.at("hi_mbps").get<double>(),
                                     b.at("weight").get<double>()});
  }
  read_field(j, "edge_delay_median_ms", s.edge_delay_median_ms);
  read_field(j, "edge_delay_sigma", s.edge_delay_sigma);
  read_field(j, "packet_noise_ms", s.packet_noise_ms);
  read_field(j, "congestion_delay_ms", s.congestion_delay_ms);
  read_field(j, "loss_enabled", s.loss_enabled);
  read_field(j, "leave_rate_hz", s.leave_rate_hz);
  read_field(j, "fail_rate_hz", s.fail_rate_hz);
  read_field(j, "reparent_delay_s", s.reparent_delay_s);
  read_field(j, "heartbeat_detection", s.heartbeat_detection);
  if (j.contains("slot_policy")) {
    std::string policy = j.at("slot_policy").get<std::string>();
    if (policy == "bucketed")
      s.slot_policy = SlotPolicy::kBucketed;
    else if (policy == "bandwidth-ratio")
      s.slot_policy = SlotPolicy::kBandwidthRatio;
    else
      throw Error(Errc::invalid_config, "slot_policy must be bucketed or bandwidth-ratio");
  }
}

}  // namespace detail

inline EngineConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::invalid_config, "config must be a JSON object");
  EngineConfig cfg;
  if (j.contains("scoring")) detail::parse_scoring(j.at("scoring"), cfg.score_params);
  if (j.contains("heartbeat")) detail::parse_heartbeat(j.at("heartbeat"), cfg.heartbeat);
  if (j.contains("simulation")) detail::parse_simulation(j.at("simulation"), cfg.sim);
  if (j.contains("service")) {
    const auto& s = j.at("service");
    detail::read_field(s, "listen", cfg.listen);
    detail::read_field(s, "log_dir", cfg.log_dir);
    detail::read_field(s, "trust_client_scores", cfg.trust_client_scores);
  }
  cfg.sim.score_params = cfg.score_params;
  cfg.sim.heartbeat = cfg.heartbeat;

  auto problems = cfg.score_params.violations();
  for (const auto& msg : cfg.heartbeat.violations()) problems.push_back(msg);
  for (const auto& msg : cfg.sim.violations()) problems.push_back(msg);
  if (!problems.empty()) throw Error(Errc::invalid_config, problems.front());
  return cfg;
}

inline EngineConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(Errc::io_error, "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

// FYBRR_LISTEN, FYBRR_LOG_DIR, FYBRR_SEED, FYBRR_SCHEME override file values.
inline void apply_env(EngineConfig& cfg) {
  if (const char* v = std::getenv("FYBRR_LISTEN")) cfg.listen = v;
  if (const char* v = std::getenv("FYBRR_LOG_DIR")) cfg.log_dir = v;
  if (const char* v = std::getenv("FYBRR_SEED")) cfg.sim.seed = std::strtoull(v, nullptr, 10);
  if (const char* v = std::getenv("FYBRR_SCHEME")) {
    auto scheme = parse_scheme(v);
    if (!scheme) throw Error(Errc::invalid_config, "FYBRR_SCHEME must be fybrr, binary or quad");
    cfg.sim.scheme = *scheme;
  }
  if (const char* v = std::getenv("FYBRR_HEARTBEAT_INTERVAL")) {
    cfg.heartbeat.interval_s = std::strtod(v, nullptr);
    cfg.sim.heartbeat = cfg.heartbeat;
  }
  if (const char* v = std::getenv("FYBRR_HEARTBEAT_MISSES")) {
    cfg.heartbeat.miss_threshold = static_cast<int>(std::strtol(v, nullptr, 10));
    cfg.sim.heartbeat = cfg.heartbeat;
  }
}

}  // namespace fybrr
