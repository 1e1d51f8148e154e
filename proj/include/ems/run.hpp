#pragma once

// Builds a simulation from a RunConfig, runs the batch and writes the run
// folder; `load_run` reads a run folder back for tracing, metrics and the api.

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ems/config.hpp"
#include "ems/forecast.hpp"
#include "ems/forecast_io.hpp"
#include "ems/io.hpp"
#include "ems/metrics.hpp"
#include "ems/sim.hpp"
#include "ems/trace.hpp"

namespace ems {

struct RunPlan {
  SimConfig sim;
  std::vector<PolicyId> policies;
  std::vector<std::vector<EmergencyCall>> scenarios;
  unsigned threads = 1;
  std::vector<std::string> warnings;
};

namespace detail {

template <class T>
std::vector<T> take_first(std::vector<T> v, int n, int max, const std::string& key, const std::string& what) {
  if (n > static_cast<int>(v.size()))
    throw ConfigError(key, fmt::format("asks for {} {} but the file lists {}", n, what, v.size()));
  if (n > 0) v.resize(static_cast<std::size_t>(n));
  if (max > 0 && static_cast<int>(v.size()) > max) throw ConfigError(key, fmt::format("at most {} {}", max, what));
  return v;
}

inline int nearest_index(const GeoPoint& p, const std::vector<GeoPoint>& sites) {
  int best = 0;
  double best_a = kInf;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    const double a = central_angle(p, sites[k]);
    if (a < best_a) {
      best_a = a;
      best = static_cast<int>(k);
    }
  }
  return best;
}

inline BoundingBox padded_box(const std::vector<GeoPoint>& pts, double pad) {
  BoundingBox b{90, 180, -90, -180};
  for (const auto& p : pts) {
    b.min_lat = std::min(b.min_lat, p.lat);
    b.max_lat = std::max(b.max_lat, p.lat);
    b.min_lon = std::min(b.min_lon, p.lon);
    b.max_lon = std::max(b.max_lon, p.lon);
  }
  b.min_lat = std::max(-90.0, b.min_lat - pad);
  b.max_lat = std::min(90.0, b.max_lat + pad);
  b.min_lon -= pad;
  b.max_lon += pad;
  return b;
}

inline std::vector<FleetMember> build_fleet(const RunConfig& cfg, const std::vector<Site>& bases) {
  const auto stations = locations(bases);
  std::vector<FleetMember> fleet;
  if (!cfg.ambulances_file.empty()) {
    std::vector<AmbulanceRow> rows;
    try {
      rows = read_ambulances_file(cfg.ambulances_file);
    } catch (const Error& e) {
      throw ConfigError("ambulances_file", e.what());
    }
    rows = take_first(std::move(rows), cfg.n_ambulances, 0, "n_ambulances", "ambulances");
    for (const auto& r : rows) {
      FleetMember m;
      m.type = r.type;
      m.station = nearest_index(r.loc, stations);
      if (r.home_station >= 0) {
        const auto it = std::find_if(bases.begin(), bases.end(), [&](const Site& s) { return s.id == r.home_station; });
        if (it == bases.end())
          throw ConfigError("ambulances_file", fmt::format("ambulance {} names unknown base {}", r.id, r.home_station));
        m.home = static_cast<int>(it - bases.begin());
      }
      fleet.push_back(m);
    }
  } else {
    const int n = cfg.n_ambulances > 0 ? cfg.n_ambulances : static_cast<int>(bases.size());
    for (int k = 0; k < n; ++k) {
      FleetMember m;
      m.station = k % static_cast<int>(bases.size());
      fleet.push_back(m);
    }
  }
  if (fleet.empty()) throw ConfigError("n_ambulances", "fleet is empty");
  return fleet;
}

inline std::vector<std::vector<EmergencyCall>> scenarios_from_history(const RunConfig& cfg, RunPlan& plan) {
  std::vector<EmergencyCall> history;
  try {
    for (auto& s : read_calls_file(cfg.history_file)) history.insert(history.end(), s.begin(), s.end());
  } catch (const Error& e) {
    throw ConfigError("history_file", e.what());
  }
  if (history.empty()) throw ConfigError("history_file", "no calls");
  FitSpec spec;
  spec.nx = cfg.grid_nx;
  spec.ny = cfg.grid_ny;
  spec.region = cfg.region;
  spec.window_minutes = cfg.window_minutes;
  spec.by_weekday = cfg.by_weekday;
  spec.utc_offset_s = cfg.utc_offset_s;
  FitReport rep;
  const auto bundle = fit_history(history, spec, &rep);
  if (rep.rejected > 0) plan.warnings.push_back(fmt::format("{} historical calls fall outside the model", rep.rejected));
  return generate_from(bundle, cfg.start, cfg.end(), cfg.n_scenarios, cfg.seed, cfg.class_probs);
}

inline std::vector<std::vector<EmergencyCall>> scenarios_from_rate(const RunConfig& cfg, const std::vector<GeoPoint>& bases) {
  const BoundingBox box = cfg.region ? *cfg.region : padded_box(bases, 0.05);
  const auto sp = build_rect_partition(box, 1, 1);
  const auto tp = make_daily_windows(cfg.window_minutes, false, cfg.utc_offset_s);
  IntensityModel m;
  m.C = 3;
  m.I = 1;
  m.T = tp.size();
  m.types = {0, 1, 2};
  const double total = cfg.priority_probs[0] + cfg.priority_probs[1] + cfg.priority_probs[2];
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < m.T; ++t) m.lambda.push_back(cfg.call_rate_per_hour * cfg.priority_probs[c] / total);
  m.flagged.assign(m.lambda.size(), false);
  GenerationOptions opt;
  for (int c = 0; c < 3; ++c) opt.call_types[c] = CallType{c, "", static_cast<Priority>(c), 1.0, 0};
  opt.class_probs = cfg.class_probs;
  return generate_sample_paths(m, sp, tp, cfg.start, cfg.end(), cfg.n_scenarios, cfg.seed, opt);
}

}  // namespace detail

inline RunPlan build_plan(const RunConfig& cfg) {
  RunPlan plan;
  plan.warnings = cfg.warnings;
  auto load_sites = [](const std::string& path, const std::string& key) {
    try {
      return read_sites_file(path);
    } catch (const Error& e) {
      throw ConfigError(key, e.what());
    }
  };
  const auto bases = detail::take_first(load_sites(cfg.bases_file, "bases_file"), cfg.n_bases, kMaxBases, "n_bases", "bases");
  if (bases.empty()) throw ConfigError("bases_file", "no bases");
  const auto hospitals =
      detail::take_first(load_sites(cfg.hospitals_file, "hospitals_file"), cfg.n_hospitals, kMaxHospitals, "n_hospitals", "hospitals");

  SimConfig& sim = plan.sim;
  sim.start = cfg.start;
  sim.end = cfg.end();
  sim.stations = locations(bases);
  sim.hospitals = locations(hospitals);
  if (!cfg.cleaning_file.empty()) sim.cleaning_stations = locations(load_sites(cfg.cleaning_file, "cleaning_file"));
  sim.fleet = detail::build_fleet(cfg, bases);
  sim.use_home_base = cfg.h_use_fixed_bases;
  sim.cost.theta_priority = cfg.theta;
  sim.cost.m = cfg.m_matrix;
  sim.cost.mismatch_penalty = cfg.mismatch_penalty;
  sim.speed_kmh = cfg.speed_kmh;
  if (!cfg.graph_file.empty()) {
    try {
      sim.graph = std::make_shared<const StreetGraph>(load_graph_file(cfg.graph_file, {cfg.graph_undirected}));
    } catch (const Error& e) {
      throw ConfigError("graph_file", e.what());
    }
  }
  sim.durations.on_scene = {cfg.scene_median_s, cfg.scene_sigma};
  sim.durations.at_hospital = {cfg.hospital_median_s, cfg.hospital_sigma};
  sim.durations.cleaning = {cfg.cleaning_median_s, cfg.cleaning_sigma};
  sim.class_probs = cfg.class_probs;
  sim.seed = cfg.seed;
  sim.n_scenarios = cfg.n_scenarios;
  sim.clip_to_horizon = cfg.clip_to_horizon;

  for (const auto& p : cfg.policies) plan.policies.push_back(PolicyId::parse(p, cfg.nm_window_s));
  plan.threads = static_cast<unsigned>(cfg.threads);

  if (!cfg.calls_file.empty()) {
    try {
      plan.scenarios = read_calls_file(cfg.calls_file);
    } catch (const Error& e) {
      throw ConfigError("calls_file", e.what());
    }
    if (plan.scenarios.empty()) throw ConfigError("calls_file", "no calls");
    const auto src = cfg.sources.find("n_scenarios");
    if (src != cfg.sources.end() && src->second != "default") {
      plan.scenarios = detail::take_first(std::move(plan.scenarios), cfg.n_scenarios, 0, "n_scenarios", "scenarios");
    }
  } else if (!cfg.history_file.empty()) {
    plan.scenarios = detail::scenarios_from_history(cfg, plan);
  } else {
    plan.scenarios = detail::scenarios_from_rate(cfg, sim.stations);
  }
  sim.validate();
  return plan;
}

// ------------------------------------------------------------ run folder

inline constexpr const char* kCallsFile = "calls.txt";
inline constexpr const char* kManifestFile = "run.cfg";
inline constexpr const char* kSummaryFile = "summary.csv";

/// What a run folder needs to be read back.
struct RunManifest {
  double speed_kmh = kDefaultSpeedKmh;
  Timestamp start = 0, end = 0;
  std::array<double, 3> theta{1, 2, 4};
  std::vector<std::string> policies;
  int n_scenarios = 0;
  double utc_offset_s = 0;
  std::string graph_file;
  bool graph_undirected = false;
};

inline void write_manifest(std::ostream& out, const RunManifest& m) {
  std::string policies;
  for (const auto& p : m.policies) policies += (policies.empty() ? "" : ",") + p;
  out << fmt::format("speed_kmh = {}\nstart = {}\nend = {}\ntheta = {},{},{}\npolicies = {}\nn_scenarios = {}\n",
                     m.speed_kmh, m.start, m.end, m.theta[0], m.theta[1], m.theta[2], policies, m.n_scenarios);
  out << fmt::format("utc_offset_s = {}\ngraph_file = {}\ngraph_undirected = {}\n", m.utc_offset_s, m.graph_file,
                     m.graph_undirected ? "true" : "false");
}

inline RunManifest read_manifest(std::istream& in) {
  RunManifest m;
  std::set<std::string> seen;
  for (const auto& [k, v] : read_config_pairs(in)) {
    seen.insert(k);
    if (k == "speed_kmh") m.speed_kmh = detail::to_positive(k, v);
    else if (k == "start") m.start = detail::to_double(k, v);
    else if (k == "end") m.end = detail::to_double(k, v);
    else if (k == "theta") m.theta = detail::to_array<3>(k, v);
    else if (k == "policies") m.policies = detail::split(v, ',');
    else if (k == "n_scenarios") m.n_scenarios = detail::to_count(k, v);
    else if (k == "utc_offset_s") m.utc_offset_s = detail::to_double(k, v);
    else if (k == "graph_file") m.graph_file = v;
    else if (k == "graph_undirected") m.graph_undirected = detail::to_bool(k, v);
  }
  for (const char* k : {"speed_kmh", "start", "end", "policies", "n_scenarios"})
    if (!seen.count(k)) throw ConfigError(k, "missing from the run manifest");
  return m;
}

struct RunResult {
  std::vector<SimOutput> outputs;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

/// Writes calls.txt, the manifest, and per (scenario, policy) the trajectory,
/// response-time and trip-history files, plus summary.csv.
inline std::vector<std::filesystem::path> write_run(const std::filesystem::path& folder, const RunConfig& cfg,
                                                    const std::vector<std::vector<EmergencyCall>>& scenarios,
                                                    const std::vector<SimOutput>& outputs,
                                                    std::vector<std::string>* warnings = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(folder, ec);
  if (ec) throw ConfigError("output_folder", "cannot create " + folder.string() + ": " + ec.message());
  std::vector<std::filesystem::path> files;
  files.push_back(folder / kCallsFile);
  write_calls_file(files.back(), scenarios);

  RunManifest m;
  m.speed_kmh = cfg.speed_kmh;
  m.start = cfg.start;
  m.end = cfg.end();
  m.theta = cfg.theta;
  m.policies = cfg.policies;
  m.n_scenarios = static_cast<int>(scenarios.size());
  m.utc_offset_s = cfg.utc_offset_s;
  if (!cfg.graph_file.empty()) m.graph_file = std::filesystem::absolute(cfg.graph_file).string();
  m.graph_undirected = cfg.graph_undirected;
  files.push_back(folder / kManifestFile);
  detail::write_file(files.back(), m, [](std::ostream& o, const auto& v) { write_manifest(o, v); });

  for (const auto& o : outputs) {
    if (o.failed) {
      if (warnings) warnings->push_back(fmt::format("scenario {} under {} failed: {}", o.scenario, o.policy, o.error));
      continue;
    }
    files.push_back(write_trajectories(o, folder));
    files.push_back(write_response_times(o, folder));
    files.push_back(write_history_file(o, folder));
  }

  std::vector<SummaryRow> rows;
  for (MetricKind kind : {MetricKind::Raw, MetricKind::Penalized}) {
    MetricFilter f;
    f.kind = kind;
    f.utc_offset_s = cfg.utc_offset_s;
    try {
      const auto r = summary_table(outputs, f);
      rows.insert(rows.end(), r.begin(), r.end());
    } catch (const Error& e) {
      if (e.code() != Errc::EmptySelection) throw;
    }
  }
  files.push_back(folder / kSummaryFile);
  detail::write_file(files.back(), rows, [](std::ostream& o, const auto& v) { write_summary_csv(o, v); });
  return files;
}

inline RunResult run_simulation(const RunConfig& cfg) {
  RunPlan plan = build_plan(cfg);
  RunResult res;
  res.warnings = plan.warnings;
  res.outputs = run_batch(plan.sim, plan.scenarios, plan.policies, plan.threads);
  res.files = write_run(cfg.output_folder, cfg, plan.scenarios, res.outputs, &res.warnings);
  return res;
}

// ------------------------------------------------------------ reloading

namespace detail {

// Service timeline of a served call recovered from its ambulance's history.
inline void recover_timeline(CallRecord& r, const AmbulanceState& s) {
  r.arrival_scene = r.t_c + r.waiting_on_scene;
  for (std::size_t i = 0; i < s.types.size(); ++i) {
    if (s.types[i] != TripType::OnScene || s.targets[i] != r.call) continue;
    r.arrival_scene = s.times[i];
    r.depart_scene = s.times[i + 1];
    std::size_t j = i + 1;
    while (j < s.types.size() && (s.types[j] == TripType::ToHospital || s.types[j] == TripType::AtHospital ||
                                  s.types[j] == TripType::ToCleaning || s.types[j] == TripType::Cleaning)) {
      if (s.types[j] == TripType::ToHospital) r.arrival_hospital = s.times[j + 1];
      if (s.types[j] == TripType::AtHospital) r.depart_hospital = s.times[j + 1];
      ++j;
    }
    r.service_end = s.times[j];
    return;
  }
}

}  // namespace detail

/// Reads a run folder back. Records carry the response-file fields and the
/// service timeline found in the trip histories.
inline std::vector<SimOutput> load_run(const std::filesystem::path& folder, RunManifest* manifest_out = nullptr) {
  auto min = detail::open_in(folder / kManifestFile);
  const RunManifest m = read_manifest(min);
  const auto scenarios = read_calls_file(folder / kCallsFile);
  std::vector<SimOutput> out;
  for (int s = 0; s < m.n_scenarios; ++s)
    for (const auto& h : m.policies) {
      const auto resp = folder / response_file_name(s, h);
      if (!std::filesystem::exists(resp)) continue;
      SimOutput o;
      o.scenario = s;
      o.policy = h;
      o.speed_kmh = m.speed_kmh;
      o.start = m.start;
      o.end = m.end;
      if (static_cast<std::size_t>(s) < scenarios.size()) o.calls = scenarios[static_cast<std::size_t>(s)];
      {
        auto in = detail::open_in(folder / history_file_name(s, h));
        o.fleet = read_histories(in);
      }
      std::map<CallId, const EmergencyCall*> by_id;
      for (const auto& c : o.calls) by_id[c.id] = &c;
      auto in = detail::open_in(resp);
      for (const auto& row : read_response_rows(in)) {
        CallRecord r;
        r.call = row.call;
        r.t_c = row.t_c;
        if (auto it = by_id.find(row.call); it != by_id.end()) {
          r.loc = it->second->loc;
          r.type_id = it->second->type_id;
          r.priority = it->second->priority;
          r.service_class = it->second->service_class;
        }
        r.theta = m.theta[static_cast<std::size_t>(r.priority)];
        r.served = row.amb >= 0;
        r.amb = row.amb;
        r.waiting_on_scene = row.response;
        r.waiting_on_scene_penalized = r.served ? r.theta * row.response : kInf;
        r.allocation_cost = row.cost;
        if (r.served) {
          const auto it = std::find_if(o.fleet.begin(), o.fleet.end(), [&](const auto& a) { return a.id == row.amb; });
          if (it != o.fleet.end()) detail::recover_timeline(r, *it);
        }
        o.records.push_back(std::move(r));
      }
      out.push_back(std::move(o));
    }
  if (manifest_out) *manifest_out = m;
  return out;
}

// ---------------------------------------------------------------- traces

/// `epoch lat lon type` per grid time.
inline void write_trace(std::ostream& out, const DiscretizedRide& r) {
  for (std::size_t k = 0; k < r.times.size(); ++k)
    out << fmt::format("{} {} {} {}\n", r.times[k], r.rides[k].lat, r.rides[k].lon, code(r.types[k]));
}

inline DiscretizedRide read_trace(std::istream& in) {
  DiscretizedRide r;
  detail::LineReader lr(in);
  std::vector<std::string> tok;
  while (lr.next(tok)) {
    if (tok.size() != 4) lr.fail("expected 4 fields");
    r.times.push_back(lr.number(tok[0]));
    r.rides.push_back(lr.point(tok[1], tok[2]));
    try {
      r.types.push_back(trip_type_from_code(static_cast<int>(lr.integer(tok[3]))));
    } catch (const Error& e) {
      lr.fail(e.what());
    }
  }
  return r;
}

/// Discretizes every ambulance of every run in `folder` at `t_step` and
/// writes one trace file per ambulance into `dest` (default: the run folder).
inline std::vector<std::filesystem::path> trace_run(const std::filesystem::path& folder, double t_step,
                                                    std::filesystem::path dest = {}) {
  if (!(t_step > 0) || !std::isfinite(t_step)) throw Error(Errc::InvalidStep, "time step must be positive");
  if (dest.empty()) dest = folder;
  std::filesystem::create_directories(dest);
  RunManifest m;
  const auto runs = load_run(folder, &m);
  std::shared_ptr<const StreetGraph> graph;
  if (!m.graph_file.empty()) graph = std::make_shared<const StreetGraph>(load_graph_file(m.graph_file, {m.graph_undirected}));
  const Router router(m.speed_kmh, graph);
  std::vector<std::filesystem::path> files;
  for (const auto& o : runs)
    for (const auto& s : o.fleet) {
      const auto ride = discretize(expand_on_streets(s, router), t_step, o.speed_kmh);
      files.push_back(dest / trace_file_name(o.scenario, o.policy, s.id));
      detail::write_file(files.back(), ride, [](std::ostream& os, const auto& v) { write_trace(os, v); });
    }
  return files;
}

}  // namespace ems
