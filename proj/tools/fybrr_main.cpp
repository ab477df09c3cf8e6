// Command-line front end: run the signaling service, drive simulations,
// compare the three overlay schemes on shared seeds, replay event logs and
// validate configs. Exit codes: 0 success, 1 invalid input, 2 I/O failure.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "fybrr/config.hpp"
#include "fybrr/event_log.hpp"
#include "fybrr/service.hpp"
#include "fybrr/sim.hpp"

namespace fs = std::filesystem;
using namespace fybrr;

namespace {

std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw Error(Errc::io_error, "cannot write '" + tmp.string() + "'");
    os << content;
  }
  fs::rename(tmp, path);
}

int ensure_writable_dir(const fs::path& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream probe(out_dir / ".write_probe");
  if (!probe) return 2;
  probe.close();
  fs::remove(out_dir / ".write_probe", ec);
  return 0;
}

struct RunSummary {
  Scheme scheme = Scheme::kFybrr;
  std::uint64_t seed = 0;
  int height = 0;
  double mean_latency_ms = 0, median_latency_ms = 0;
  double mean_jitter_ms = 0, median_jitter_ms = 0;
  double mean_pdr = 1.0;
  double capacity = 0;  // utilization for fybrr, demand for baselines
  double mean_startup_s = 0;
};

RunSummary summarize(const SimResult& result, const MetricReport& report) {
  RunSummary s;
  s.scheme = result.config.scheme;
  s.seed = result.config.seed;
  s.height = result.snapshots.empty() ? 0 : result.snapshots.back().height;
  s.mean_latency_ms = report.leaf_mean_latency_ms;
  s.median_latency_ms = report.leaf_median_latency_ms;
  s.mean_jitter_ms = report.leaf_mean_jitter_ms;
  s.median_jitter_ms = report.leaf_median_jitter_ms;
  s.mean_pdr = report.mean_pdr;
  s.mean_startup_s = report.mean_startup_delay_s;
  return s;
}

void write_run_outputs(const fs::path& dir, const SimResult& result, const MetricReport& report) {
  std::ostringstream tag;
  tag << to_string(result.config.scheme) << "_seed" << result.config.seed;
  std::ostringstream traces, series, snapshot;
  write_trace_csv(traces, result.traces);
  write_series_csv(series, report);
  if (!result.snapshots.empty()) write_snapshot_csv(snapshot, result.snapshots.back());
  write_file_atomic(dir / ("trace_" + tag.str() + ".csv"), traces.str());
  write_file_atomic(dir / ("series_" + tag.str() + ".csv"), series.str());
  write_file_atomic(dir / ("topology_" + tag.str() + ".csv"), snapshot.str());
}

// Per-seed population in join order, reconstructed from the room records
// (ids are zero-padded join indexes, so lexicographic order is join order).
std::vector<PeerRecord> population_of(const SimResult& result) {
  std::vector<PeerRecord> peers;
  for (const auto& [id, t] : result.join_time_us) {
    (void)t;
    peers.push_back(result.final_room.peers.at(id));
  }
  std::sort(peers.begin(), peers.end(),
            [](const PeerRecord& a, const PeerRecord& b) { return a.id < b.id; });
  return peers;
}

int run_compare(const EngineConfig& cfg, const std::vector<std::uint64_t>& seeds,
                const fs::path& out_dir) {
  if (int rc = ensure_writable_dir(out_dir)) {
    std::cerr << "error: cannot write to '" << out_dir.string() << "'\n";
    return rc;
  }
  std::vector<RunSummary> rows;
  bool ordering_ok = true;
  for (std::uint64_t seed : seeds) {
    std::map<Scheme, RunSummary> by_scheme;
    for (Scheme scheme : {Scheme::kFybrr, Scheme::kBinary, Scheme::kQuad}) {
      SimConfig run_cfg = cfg.sim;
      run_cfg.seed = seed;
      run_cfg.scheme = scheme;
      SimResult result = run_simulation(run_cfg);
      MetricReport report = report_for(result);
      RunSummary s = summarize(result, report);
      if (scheme == Scheme::kFybrr)
        s.capacity = capacity_utilization(result.final_room);
      else
        s.capacity = capacity_demand(scheme, population_of(result));
      write_run_outputs(out_dir, result, report);
      by_scheme[scheme] = s;
      rows.push_back(s);
    }
    if (!(by_scheme[Scheme::kQuad].height <= by_scheme[Scheme::kFybrr].height &&
          by_scheme[Scheme::kFybrr].height <= by_scheme[Scheme::kBinary].height))
      ordering_ok = false;
  }

  std::ostringstream summary;
  summary << "scheme,seed,height,mean_latency_ms,median_latency_ms,mean_jitter_ms,"
             "median_jitter_ms,mean_pdr,capacity,mean_startup_s\n";
  summary.precision(9);
  for (const RunSummary& s : rows)
    summary << to_string(s.scheme) << ',' << s.seed << ',' << s.height << ','
            << s.mean_latency_ms << ',' << s.median_latency_ms << ',' << s.mean_jitter_ms << ','
            << s.median_jitter_ms << ',' << s.mean_pdr << ',' << s.capacity << ','
            << s.mean_startup_s << '\n';
  summary << "height_ordering,quad<=fybrr<=binary," << (ordering_ok ? "PASS" : "FAIL") << '\n';
  write_file_atomic(out_dir / "summary.csv", summary.str());
  std::cout << summary.str();
  std::cout << "wrote " << rows.size() << " runs to " << out_dir.string() << "\n";
  return 0;
}

int run_simulate(const EngineConfig& cfg, const fs::path& out_dir) {
  if (int rc = ensure_writable_dir(out_dir)) {
    std::cerr << "error: cannot write to '" << out_dir.string() << "'\n";
    return rc;
  }
  SimResult result = run_simulation(cfg.sim);
  MetricReport report = report_for(result);
  write_run_outputs(out_dir, result, report);
  RunSummary s = summarize(result, report);
  std::cout << "scheme=" << to_string(s.scheme) << " seed=" << s.seed
            << " peers=" << cfg.sim.num_peers << " height=" << s.height << "\n"
            << "mean_pdr=" << s.mean_pdr << " leaf_latency_ms=" << s.mean_latency_ms
            << " leaf_jitter_ms=" << s.mean_jitter_ms << " startup_s=" << s.mean_startup_s
            << "\n";
  return 0;
}

int run_replay(const std::string& log_path) {
  auto rooms = replay_event_log(read_log_file(log_path));
  std::cout << rooms.size() << " room(s) reconstructed\n";
  bool ok = true;
  for (const auto& [id, room] : rooms) {
    auto violations = validate_room(room);
    std::cout << "room " << id << ": " << room.active_count() << " active peers, height "
              << height(room) << (violations.empty() ? ", valid" : ", INVALID") << "\n";
    for (const auto& v : violations) {
      std::cout << "  violation: " << v << "\n";
      ok = false;
    }
  }
  return ok ? 0 : 1;
}

int run_serve(const EngineConfig& cfg) {
  auto colon = cfg.listen.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "error: --listen expects host:port\n";
    return 1;
  }
  std::string host = cfg.listen.substr(0, colon);
  int port = std::stoi(cfg.listen.substr(colon + 1));
  if (!cfg.log_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg.log_dir, ec);
  }
  ServerCore core(cfg.service());
  TcpServer server(core, host, port);
  server.start();
  std::cout << "listening on " << host << ":" << server.port() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::cout << "stopped\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"score-based P2P live streaming control plane"};
  app.require_subcommand(1);

  std::string config_path, scheme_flag, out_dir = "out", listen_flag, log_dir_flag, log_path;
  std::vector<std::uint64_t> seeds;
  std::uint64_t seed_flag = 0;
  double hb_interval = 0;
  int hb_misses = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON configuration file");
    cmd->add_option("--heartbeat-interval", hb_interval, "heartbeat interval in seconds");
    cmd->add_option("--heartbeat-misses", hb_misses, "consecutive misses before failure");
  };

  CLI::App* serve = app.add_subcommand("serve", "run the signaling service");
  add_common(serve);
  serve->add_option("--listen", listen_flag, "host:port to listen on");
  serve->add_option("--log-dir", log_dir_flag, "directory for per-room event logs");

  CLI::App* simulate = app.add_subcommand("simulate", "run one simulation");
  add_common(simulate);
  CLI::Option* seed_opt = simulate->add_option("--seed", seed_flag, "simulation seed");
  simulate->add_option("--scheme", scheme_flag, "fybrr | binary | quad");
  simulate->add_option("--out-dir", out_dir, "output directory");

  CLI::App* compare = app.add_subcommand("compare", "run all three schemes on shared seeds");
  add_common(compare);
  compare->add_option("--seeds", seeds, "seeds to run (each runs all schemes)");
  compare->add_option("--out-dir", out_dir, "output directory");

  CLI::App* replay = app.add_subcommand("replay", "rebuild rooms from an event log");
  replay->add_option("--log", log_path, "event log file")->required();

  CLI::App* validate = app.add_subcommand("validate", "check a config or log file");
  validate->add_option("--config", config_path, "JSON configuration file");
  validate->add_option("--log", log_path, "event log file");

  CLI11_PARSE(app, argc, argv);

  try {
    EngineConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    apply_env(cfg);
    if (!listen_flag.empty()) cfg.listen = listen_flag;
    if (!log_dir_flag.empty()) cfg.log_dir = log_dir_flag;
    if (hb_interval > 0) cfg.heartbeat.interval_s = hb_interval;
    if (hb_misses > 0) cfg.heartbeat.miss_threshold = hb_misses;
    cfg.sim.heartbeat = cfg.heartbeat;
    if (seed_opt->count() > 0) cfg.sim.seed = seed_flag;
    if (!scheme_flag.empty()) {
      auto scheme = parse_scheme(scheme_flag);
      if (!scheme) throw Error(Errc::invalid_config, "scheme must be fybrr, binary or quad");
      cfg.sim.scheme = *scheme;
    }

    if (app.got_subcommand(serve)) return run_serve(cfg);
    if (app.got_subcommand(simulate)) return run_simulate(cfg, out_dir);
    if (app.got_subcommand(compare)) {
      if (seeds.empty()) seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
      return run_compare(cfg, seeds, out_dir);
    }
    if (app.got_subcommand(replay)) return run_replay(log_path);
    if (app.got_subcommand(validate)) {
      if (config_path.empty() && log_path.empty()) {
        std::cerr << "error: validate needs --config or --log\n";
        return 1;
      }
      if (!log_path.empty()) replay_event_log(read_log_file(log_path));
      std::cout << "OK\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::io_error ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
