#pragma once

// Discrete-event engine. Call arrivals and service completions drive policy
// decisions; each dispatch appends the whole service to the ambulance's trip
// arrays and produces a call record.

#include <algorithm>
#include <atomic>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "ems/dispatch.hpp"
#include "ems/domain.hpp"
#include "ems/error.hpp"
#include "ems/geo.hpp"
#include "ems/streets.hpp"

namespace ems {

// ---------------------------------------------------------------------------
// Configuration

/// Lognormal duration with the given median (seconds) and log-scale sigma;
/// sigma = 0 gives the median exactly.
struct DurationModel {
  double median_s = 1200.0;
  double sigma = 0.0;

  template <class Rng>
  Duration draw(Rng& rng) const {
    if (!(median_s >= 0.0)) throw Error(Errc::InvalidDuration, "negative median duration");
    std::normal_distribution<double> z(0.0, 1.0);
    const double g = z(rng);
    if (sigma <= 0.0 || median_s == 0.0) return median_s;
    return median_s * std::exp(sigma * g);
  }
};

struct ServiceDurations {
  DurationModel on_scene{1200.0, 0.4};
  DurationModel at_hospital{1800.0, 0.4};
  DurationModel cleaning{1200.0, 0.3};
};

struct FleetMember {
  AmbulanceType type;
  int station = 0;  // initial station index
  std::optional<int> home;  // home base index, defaults to the initial station
};

struct SimConfig {
  Timestamp start = 0.0;
  Timestamp end = 7 * 24 * 3600.0;
  std::vector<GeoPoint> stations;
  std::vector<GeoPoint> hospitals;
  std::vector<GeoPoint> cleaning_stations;  // empty: ambulance stations double as cleaning stations
  std::vector<FleetMember> fleet;
  PolicyId policy;
  bool use_home_base = false;
  CostModel cost;
  double speed_kmh = kDefaultSpeedKmh;
  std::shared_ptr<const StreetGraph> graph;
  ServiceDurations durations;
  std::array<double, 4> class_probs{0.25, 0.25, 0.25, 0.25};
  std::uint64_t seed = 1;
  int n_scenarios = 1;
  bool clip_to_horizon = true;

  void validate() const {
    if (fleet.empty()) throw Error(Errc::EmptyFleet, "fleet is empty");
    if (stations.empty()) throw Error(Errc::ConfigError, "at least one station is required");
    if (!(speed_kmh > 0.0)) throw Error(Errc::InvalidSpeed, "speed must be positive");
    if (!(end >= start)) throw Error(Errc::ConfigError, "end precedes start");
    for (const auto& p : stations)
      if (!is_valid(p)) throw Error(Errc::ConfigError, "invalid station location");
    for (const auto& p : hospitals)
      if (!is_valid(p)) throw Error(Errc::ConfigError, "invalid hospital location");
    for (const auto& p : cleaning_stations)
      if (!is_valid(p)) throw Error(Errc::ConfigError, "invalid cleaning station location");
    for (const auto& m : fleet) {
      if (m.station < 0 || m.station >= static_cast<int>(stations.size()))
        throw Error(Errc::ConfigError, "ambulance station index out of range");
      if (m.home && (*m.home < 0 || *m.home >= static_cast<int>(stations.size())))
        throw Error(Errc::ConfigError, "home base index out of range");
    }
    double total = 0.0;
    for (double p : class_probs) {
      if (!(p >= 0.0)) throw Error(Errc::ConfigError, "class probabilities must be nonnegative");
      total += p;
    }
    if (!(total > 0.0)) throw Error(Errc::ConfigError, "class probabilities sum to zero");
  }

  const std::vector<GeoPoint>& cleaning_sites() const {
    return cleaning_stations.empty() ? stations : cleaning_stations;
  }

  Router make_router() const { return Router(speed_kmh, graph); }
};

// ---------------------------------------------------------------------------
// Call materialization

namespace detail {

inline int nearest_site(const GeoPoint& from, const std::vector<GeoPoint>& sites,
                        const Router& router) {
  int best = -1;
  Duration best_t = kInf;
  for (std::size_t i = 0; i < sites.size(); ++i) {
    Duration t;
    try {
      t = router.travel_time(from, sites[i], 0.0);
    } catch (const Error& e) {
      if (e.code() != Errc::Unreachable) throw;
      continue;
    }
    if (t < best_t) {
      best_t = t;
      best = static_cast<int>(i);
    }
  }
  return best;
}

inline int site_index(const GeoPoint& p, const std::vector<GeoPoint>& sites) {
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (sites[i] == p) return static_cast<int>(i);
  return -1;
}

}  // namespace detail

/// Fills every missing duration and destination of `calls`. Three durations
/// are drawn per call in call order whatever its class, so the random stream
/// does not depend on which fields were already present.
template <class Rng>
std::vector<EmergencyCall> materialize_calls(std::vector<EmergencyCall> calls, const SimConfig& cfg,
                                             Rng& rng) {
  const Router router = cfg.make_router();
  const auto& cleaning = cfg.cleaning_sites();
  for (auto& c : calls) {
    const Duration scene = cfg.durations.on_scene.draw(rng);
    const Duration hosp = cfg.durations.at_hospital.draw(rng);
    const Duration clean = cfg.durations.cleaning.draw(rng);
    if (!c.time_on_scene) c.time_on_scene = scene;
    if (needs_hospital(c.service_class)) {
      if (!c.hospital) {
        const int h = detail::nearest_site(c.loc, cfg.hospitals, router);
        if (h < 0) throw Error(Errc::ConfigError, "call " + std::to_string(c.id) + " needs a hospital");
        c.hospital = cfg.hospitals[h];
        c.hospital_index = h;
      } else if (c.hospital_index < 0) {
        c.hospital_index = detail::site_index(*c.hospital, cfg.hospitals);
      }
      if (!c.time_at_hospital) c.time_at_hospital = hosp;
    } else {
      c.hospital.reset();
      c.time_at_hospital.reset();
      c.hospital_index = -1;
    }
    if (needs_cleaning(c.service_class)) {
      if (!c.cleaning_station) {
        const GeoPoint from = c.hospital ? *c.hospital : c.loc;
        const int k = detail::nearest_site(from, cleaning, router);
        if (k < 0) {
          throw Error(Errc::ConfigError, "call " + std::to_string(c.id) + " needs a cleaning station");
        }
        c.cleaning_station = cleaning[k];
        c.cleaning_index = k;
      } else if (c.cleaning_index < 0) {
        c.cleaning_index = detail::site_index(*c.cleaning_station, cleaning);
      }
      if (!c.cleaning_time) c.cleaning_time = clean;
    } else {
      c.cleaning_station.reset();
      c.cleaning_time.reset();
      c.cleaning_index = -1;
    }
  }
  return calls;
}

// ---------------------------------------------------------------------------
// Records and output

struct CallRecord {
  CallId call = -1;
  Timestamp t_c = 0.0;
  GeoPoint loc;
  int type_id = 0;
  Priority priority = Priority::Low;
  ServiceClass service_class = ServiceClass::C4;
  double theta = 1.0;

  bool served = false;
  bool failed = false;
  std::string diagnostic;

  int amb = -1;
  DecisionKind decision = DecisionKind::Queue;
  Availability dispatch_case = Availability::AtStation;
  Timestamp decision_time = 0.0;
  GeoPoint response_origin;
  Timestamp departure = 0.0;
  int redirected_station = -1;

  Duration waiting_on_scene = kInf;
  double waiting_on_scene_penalized = kInf;
  std::optional<Duration> waiting_to_hospital;
  std::optional<double> waiting_to_hospital_penalized;
  double allocation_cost = kInf;

  Timestamp arrival_scene = kInf;
  Timestamp depart_scene = kInf;
  std::optional<Timestamp> arrival_hospital;
  std::optional<Timestamp> depart_hospital;
  Timestamp service_end = kInf;
};

enum class EventKind { CallArrival = 0, ServiceComplete = 1, ArrivedAtStation = 2 };

constexpr std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::CallArrival: return "call_arrival";
    case EventKind::ServiceComplete: return "service_complete";
    case EventKind::ArrivedAtStation: return "arrived_at_station";
  }
  return "call_arrival";
}

struct SimEvent {
  Timestamp time = 0.0;
  EventKind kind = EventKind::CallArrival;
  std::int64_t id = 0;  // call index for arrivals, fleet index otherwise
  std::uint64_t version = 0;

  friend bool operator>(const SimEvent& a, const SimEvent& b) {
    return std::tie(a.time, a.kind, a.id) > std::tie(b.time, b.kind, b.id);
  }
};

struct LogEntry {
  Timestamp time = 0.0;
  EventKind event = EventKind::CallArrival;
  DecisionKind decision = DecisionKind::Idle;
  int amb = -1;
  CallId call = -1;
  int station = -1;
};

struct SimOutput {
  int scenario = 0;
  std::string policy;
  double speed_kmh = kDefaultSpeedKmh;
  Timestamp start = 0.0;
  Timestamp end = 0.0;
  std::vector<AmbulanceState> fleet;
  std::vector<EmergencyCall> calls;
  std::vector<CallRecord> records;  // same order as calls
  std::vector<LogEntry> log;
  std::vector<GeoPoint> stations;
  std::vector<GeoPoint> hospitals;
  std::vector<GeoPoint> cleaning_stations;
  bool failed = false;
  std::string error;
};

/// Everything a decision saw, handed to an optional observer.
struct DecisionTrace {
  Timestamp now = 0.0;
  EventKind event = EventKind::CallArrival;
  const EmergencyCall* call = nullptr;  // arriving call
  int freed = -1;                      // freed fleet index
  const std::vector<AmbulanceState>* fleet = nullptr;
  const std::vector<EmergencyCall>* queue = nullptr;
  const std::vector<DispatchDecision>* decisions = nullptr;
};

struct RunHooks {
  std::function<void(const DecisionTrace&)> on_decision;
};

// ---------------------------------------------------------------------------
// Engine

namespace detail {

/// Truncates a trip history at `h`: segments starting at or after h are
/// dropped and the one straddling h ends at its interpolated position.
inline void clip_history(AmbulanceState& s, Timestamp h, double speed_kmh) {
  if (s.times.empty()) return;
  std::size_t keep = 0;  // segments kept
  while (keep < s.types.size() && s.times[keep] < h) ++keep;
  if (keep == 0) {
    s.trips.resize(1);
    s.times.resize(1);
    s.types.clear();
    s.targets.clear();
    return;
  }
  const std::size_t last = keep - 1;
  if (s.times[last + 1] > h) {
    s.trips[last + 1] = position_between(s.trips[last], s.trips[last + 1], s.times[last], h, speed_kmh);
    s.times[last + 1] = h;
  }
  s.trips.resize(keep + 1);
  s.times.resize(keep + 1);
  s.types.resize(keep);
  s.targets.resize(keep);
}

class Engine {
 public:
  Engine(const SimConfig& cfg, const std::vector<EmergencyCall>& calls, int scenario,
         const RunHooks& hooks)
      : cfg_(cfg), calls_(calls), hooks_(hooks), router_(cfg.make_router()) {
    out_.scenario = scenario;
    out_.policy = cfg.policy.label();
    out_.speed_kmh = cfg.speed_kmh;
    out_.start = cfg.start;
    out_.end = cfg.end;
    out_.stations = cfg.stations;
    out_.hospitals = cfg.hospitals;
    out_.cleaning_stations = cfg.cleaning_sites();
    out_.calls = calls;
    for (std::size_t i = 0; i < cfg.fleet.size(); ++i) {
      const auto& m = cfg.fleet[i];
      auto s = AmbulanceState::at_station(static_cast<int>(i), m.type, cfg.stations[m.station],
                                          m.station, cfg.start);
      const int home = m.home.value_or(m.station);
      s.home_base = cfg.stations[home];
      s.home_station = home;
      fleet_.push_back(std::move(s));
    }
    version_.assign(fleet_.size(), 0);
    for (std::size_t i = 0; i < calls.size(); ++i) {
      index_.emplace(calls[i].id, i);
      CallRecord r;
      r.call = calls[i].id;
      r.t_c = calls[i].t_c;
      r.loc = calls[i].loc;
      r.type_id = calls[i].type_id;
      r.priority = calls[i].priority;
      r.service_class = calls[i].service_class;
      r.theta = cfg.cost.theta(calls[i]);
      out_.records.push_back(std::move(r));
      events_.push({calls[i].t_c, EventKind::CallArrival, static_cast<std::int64_t>(i), 0});
    }
  }

  SimOutput run() {
    while (!events_.empty()) {
      const SimEvent ev = events_.top();
      events_.pop();
      switch (ev.kind) {
        case EventKind::CallArrival: on_arrival(ev); break;
        case EventKind::ServiceComplete:
          if (ev.version == version_[ev.id]) on_free(ev);
          break;
        case EventKind::ArrivedAtStation:
          if (ev.version == version_[ev.id]) {
            out_.log.push_back({ev.time, ev.kind, DecisionKind::Idle, static_cast<int>(ev.id), -1,
                                fleet_[ev.id].station_b});
          }
          break;
      }
    }
    for (const auto& q : queue_) {
      auto& r = out_.records[index_.at(q.id)];
      r.failed = true;
      r.diagnostic = "never dispatched";
    }
    finalize();
    out_.fleet = std::move(fleet_);
    return std::move(out_);
  }

 private:
  PolicyInput input(Timestamp now, const std::vector<EmergencyCall>* lookahead) const {
    PolicyInput in;
    in.fleet = &fleet_;
    in.queue = &queue_;
    in.lookahead = lookahead;
    in.ctx.now = now;
    in.ctx.cost = &cfg_.cost;
    in.ctx.router = &router_;
    in.ctx.stations = &cfg_.stations;
    in.ctx.use_home_base = cfg_.use_home_base;
    return in;
  }

  void on_arrival(const SimEvent& ev) {
    const auto& call = calls_[ev.id];
    if (assigned_.contains(call.id)) {
      out_.log.push_back({ev.time, ev.kind, DecisionKind::Reserve,
                          out_.records[ev.id].amb, call.id, -1});
      return;
    }
    std::vector<EmergencyCall> lookahead;
    if (cfg_.policy.kind == PolicyKind::NM) {
      for (std::size_t k = ev.id + 1; k < calls_.size(); ++k) {
        const auto& c = calls_[k];
        if (c.t_c > ev.time + cfg_.policy.nm_window) break;
        if (c.t_c <= ev.time || assigned_.contains(c.id)) continue;
        lookahead.push_back(c);
      }
    }
    const auto in = input(ev.time, &lookahead);
    const auto decisions = policy_on_call(cfg_.policy, in, call);
    notify(ev, &call, -1, decisions);
    apply(ev, decisions);
  }

  void on_free(const SimEvent& ev) {
    const auto in = input(ev.time, nullptr);
    const auto decisions = policy_on_free(cfg_.policy, in, static_cast<int>(ev.id));
    notify(ev, nullptr, static_cast<int>(ev.id), decisions);
    apply(ev, decisions);
  }

  void notify(const SimEvent& ev, const EmergencyCall* call, int freed,
              const std::vector<DispatchDecision>& decisions) {
    if (!hooks_.on_decision) return;
    DecisionTrace t;
    t.now = ev.time;
    t.event = ev.kind;
    t.call = call;
    t.freed = freed;
    t.fleet = &fleet_;
    t.queue = &queue_;
    t.decisions = &decisions;
    hooks_.on_decision(t);
  }

  void remove_from_queue(CallId id) {
    queue_.erase(std::remove_if(queue_.begin(), queue_.end(),
                                [&](const EmergencyCall& c) { return c.id == id; }),
                 queue_.end());
  }

  void schedule_free(int amb) {
    ++version_[amb];
    events_.push({fleet_[amb].t_f, EventKind::ServiceComplete, amb, version_[amb]});
  }

  void apply(const SimEvent& ev, const std::vector<DispatchDecision>& decisions) {
    for (const auto& d : decisions) {
      out_.log.push_back({ev.time, ev.kind, d.kind, d.amb, d.call, d.station});
      switch (d.kind) {
        case DecisionKind::DispatchNow:
        case DecisionKind::DispatchAfterService:
        case DecisionKind::Reserve: dispatch(d); break;
        case DecisionKind::Queue: {
          const auto& call = calls_[index_.at(d.call)];
          if (std::none_of(queue_.begin(), queue_.end(),
                           [&](const EmergencyCall& c) { return c.id == call.id; })) {
            queue_.push_back(call);
          }
          break;
        }
        case DecisionKind::Reject: {
          auto& r = out_.records[index_.at(d.call)];
          r.failed = true;
          r.diagnostic = "unreachable from every ambulance";
          remove_from_queue(d.call);
          assigned_.insert(d.call);
          break;
        }
        case DecisionKind::ToStation: {
          auto& s = fleet_[d.amb];
          try {
            commit_to_station(s, d.station, cfg_.stations[d.station], ev.time, router_);
          } catch (const Error& e) {
            if (e.code() != Errc::Unreachable) throw;
            commit_idle(s, ev.time);
          }
          ++version_[d.amb];
          if (s.t_b > ev.time) {
            events_.push({s.t_b, EventKind::ArrivedAtStation, d.amb, version_[d.amb]});
          }
          break;
        }
        case DecisionKind::Idle:
          commit_idle(fleet_[d.amb], ev.time);
          ++version_[d.amb];
          break;
      }
    }
  }

  void dispatch(const DispatchDecision& d) {
    const std::size_t ci = index_.at(d.call);
    const auto& call = calls_[ci];
    auto& r = out_.records[ci];
    remove_from_queue(call.id);
    assigned_.insert(call.id);
    ServiceOutcome o;
    try {
      o = commit_dispatch(fleet_[d.amb], call, d.decision_time, router_, cfg_.cost);
    } catch (const Error& e) {
      if (e.code() != Errc::Unreachable) throw;
      r.failed = true;
      r.diagnostic = e.what();
      return;
    }
    r.served = true;
    r.amb = d.amb;
    r.decision = d.kind;
    r.dispatch_case = o.dispatch_case;
    r.decision_time = o.decision_time;
    r.response_origin = o.response_origin;
    r.departure = o.departure;
    r.redirected_station = o.redirected_station;
    r.waiting_on_scene = o.waiting_on_scene;
    r.waiting_on_scene_penalized = penalization(o.waiting_on_scene, r.theta);
    r.waiting_to_hospital = o.waiting_to_hospital;
    if (o.waiting_to_hospital) r.waiting_to_hospital_penalized = r.theta * *o.waiting_to_hospital;
    r.allocation_cost = o.cost;
    r.arrival_scene = o.arrival_scene;
    r.depart_scene = o.depart_scene;
    r.arrival_hospital = o.arrival_hospital;
    r.depart_hospital = o.depart_hospital;
    r.service_end = o.service_end;
    schedule_free(d.amb);
  }

  void finalize() {
    Timestamp horizon = cfg_.end;
    if (!cfg_.clip_to_horizon) {
      for (const auto& s : fleet_)
        if (!s.times.empty()) horizon = std::max(horizon, s.times.back());
    }
    for (auto& s : fleet_) {
      if (std::isfinite(s.t_b) && s.times.back() < horizon) {
        detail::push_segment(s, s.loc_b, horizon, TripType::AtStation, s.station_b);
      }
      if (cfg_.clip_to_horizon) clip_history(s, horizon, cfg_.speed_kmh);
    }
  }

  const SimConfig& cfg_;
  const std::vector<EmergencyCall>& calls_;
  const RunHooks& hooks_;
  Router router_;
  SimOutput out_;
  std::vector<AmbulanceState> fleet_;
  std::vector<std::uint64_t> version_;
  std::vector<EmergencyCall> queue_;
  std::set<CallId> assigned_;
  std::unordered_map<CallId, std::size_t> index_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, std::greater<>> events_;
};

}  // namespace detail

/// Runs one scenario on calls that are already materialized and sorted by t_c.
inline SimOutput run_materialized(const SimConfig& cfg, const std::vector<EmergencyCall>& calls,
                                  int scenario = 0, const RunHooks& hooks = {}) {
  cfg.validate();
  for (std::size_t i = 1; i < calls.size(); ++i) {
    if (calls[i].t_c < calls[i - 1].t_c) throw Error(Errc::ValidationError, "calls not sorted by time");
  }
  std::set<CallId> ids;
  for (const auto& c : calls) {
    if (!ids.insert(c.id).second) throw Error(Errc::ValidationError, "duplicate call id " + std::to_string(c.id));
    if (!is_valid(c.loc)) throw Error(Errc::ValidationError, "call " + std::to_string(c.id) + " has an invalid location");
  }
  detail::Engine engine(cfg, calls, scenario, hooks);
  return engine.run();
}

/// Materializes missing call fields with `rng`, then runs the scenario.
template <class Rng>
SimOutput run_scenario(const SimConfig& cfg, std::vector<EmergencyCall> calls, Rng& rng,
                       int scenario = 0, const RunHooks& hooks = {}) {
  std::stable_sort(calls.begin(), calls.end(),
                   [](const EmergencyCall& a, const EmergencyCall& b) { return a.t_c < b.t_c; });
  const auto full = materialize_calls(std::move(calls), cfg, rng);
  return run_materialized(cfg, full, scenario, hooks);
}

/// Random stream for scenario `scenario` under `seed`.
inline std::mt19937_64 scenario_rng(std::uint64_t seed, std::uint64_t scenario) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(scenario), static_cast<std::uint32_t>(scenario >> 32)};
  return std::mt19937_64(seq);
}

/// Every scenario under every policy, scenario-major. Each scenario's calls
/// are materialized once so all policies see identical call streams. Runs
/// are independent and execute on up to `threads` workers (0 = hardware).
inline std::vector<SimOutput> run_batch(const SimConfig& cfg,
                                        const std::vector<std::vector<EmergencyCall>>& scenarios,
                                        const std::vector<PolicyId>& policies,
                                        unsigned threads = 0) {
  if (scenarios.empty() || policies.empty()) {
    throw Error(Errc::ConfigError, "need at least one scenario and one policy");
  }
  std::vector<std::vector<EmergencyCall>> streams;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    auto calls = scenarios[s];
    std::stable_sort(calls.begin(), calls.end(),
                     [](const EmergencyCall& a, const EmergencyCall& b) { return a.t_c < b.t_c; });
    auto rng = scenario_rng(cfg.seed, s);
    streams.push_back(materialize_calls(std::move(calls), cfg, rng));
  }
  const std::size_t total = scenarios.size() * policies.size();
  std::vector<SimOutput> out(total);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      const std::size_t s = k / policies.size();
      SimConfig local = cfg;
      local.policy = policies[k % policies.size()];
      try {
        out[k] = run_materialized(local, streams[s], static_cast<int>(s));
      } catch (const Error& e) {
        out[k].scenario = static_cast<int>(s);
        out[k].policy = local.policy.label();
        out[k].calls = streams[s];
        out[k].failed = true;
        out[k].error = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(threads, total); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

// ---------------------------------------------------------------------------
// Snapshots

enum class CallPhase { Waiting, OnScene, ToHospital, AtHospital, Cleaning, Completed, Unserved };

constexpr std::string_view to_string(CallPhase p) {
  switch (p) {
    case CallPhase::Waiting: return "waiting";
    case CallPhase::OnScene: return "on_scene";
    case CallPhase::ToHospital: return "to_hospital";
    case CallPhase::AtHospital: return "at_hospital";
    case CallPhase::Cleaning: return "cleaning";
    case CallPhase::Completed: return "completed";
    case CallPhase::Unserved: return "unserved";
  }
  return "waiting";
}

struct AmbulanceSnapshot {
  int amb = -1;
  TripType type = TripType::AtStation;
  GeoPoint position;
  std::int64_t target = -1;
  std::size_t segment = 0;
};

struct CallSnapshot {
  CallId call = -1;
  GeoPoint loc;
  Priority priority = Priority::Low;
  CallPhase phase = CallPhase::Waiting;
  int amb = -1;
};

struct Snapshot {
  Timestamp time = 0.0;
  std::vector<AmbulanceSnapshot> ambulances;
  std::vector<CallSnapshot> calls;  // calls with t_c <= time that are not completed
};

/// Segment index containing t, right-continuous; the last segment also
/// covers its own end time. Returns npos for histories with no segment.
inline std::size_t segment_at(const AmbulanceState& s, Timestamp t) {
  if (s.types.empty()) return static_cast<std::size_t>(-1);
  const auto it = std::upper_bound(s.times.begin(), s.times.end(), t);
  std::size_t i = static_cast<std::size_t>(it - s.times.begin());
  i = (i == 0) ? 0 : i - 1;
  return std::min(i, s.types.size() - 1);
}

/// Position of an ambulance at t, interpolating along its history.
inline GeoPoint position_at(const AmbulanceState& s, Timestamp t, double speed_kmh) {
  const std::size_t i = segment_at(s, t);
  if (i == static_cast<std::size_t>(-1)) return s.trips.front();
  return position_between(s.trips[i], s.trips[i + 1], s.times[i], t, speed_kmh);
}

inline CallPhase call_phase(const CallRecord& r, Timestamp t) {
  if (!r.served) return CallPhase::Unserved;
  if (t < r.arrival_scene) return CallPhase::Waiting;
  if (t < r.depart_scene) return CallPhase::OnScene;
  if (r.arrival_hospital && t < *r.arrival_hospital) return CallPhase::ToHospital;
  if (r.depart_hospital && t < *r.depart_hospital) return CallPhase::AtHospital;
  if (t < r.service_end) return CallPhase::Cleaning;
  return CallPhase::Completed;
}

/// A call counts as active from its arrival until its service ends.
inline bool is_active(const CallRecord& r, Timestamp t) {
  return r.served && r.t_c <= t && t < r.service_end;
}

inline Snapshot snapshot(const SimOutput& out, Timestamp t) {
  if (!(t >= out.start && t <= out.end)) {
    throw Error(Errc::OutOfRange, "time outside the simulated window");
  }
  Snapshot snap;
  snap.time = t;
  for (const auto& s : out.fleet) {
    AmbulanceSnapshot a;
    a.amb = s.id;
    const std::size_t i = segment_at(s, t);
    if (i == static_cast<std::size_t>(-1)) {
      a.position = s.trips.front();
    } else {
      a.segment = i;
      a.type = s.types[i];
      a.target = s.targets[i];
      a.position = position_between(s.trips[i], s.trips[i + 1], s.times[i], t, out.speed_kmh);
    }
    snap.ambulances.push_back(a);
  }
  for (const auto& r : out.records) {
    if (r.t_c > t) continue;
    const CallPhase phase = call_phase(r, t);
    if (phase == CallPhase::Completed) continue;
    snap.calls.push_back({r.call, r.loc, r.priority, phase, r.amb});
  }
  return snap;
}

}  // namespace ems
