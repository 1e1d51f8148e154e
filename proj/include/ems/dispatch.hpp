#pragma once

// Allocation costs, response-time estimates and the five dispatch policies
// (CA, BM, NM, GHP1, GHP2).
//
// Policies are pure: they read the fleet, the queue and the lookahead calls,
// project their own decisions on a private copy of the fleet and return the
// decision list. The engine applies the same decisions with the same commit
// functions, so projected and real states agree exactly.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ems/domain.hpp"
#include "ems/error.hpp"
#include "ems/geo.hpp"
#include "ems/streets.hpp"

namespace ems {

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kDefaultMismatchPenalty = 1e4;

// ---------------------------------------------------------------------------
// Cost model

struct CostModel {
  std::array<double, 3> theta_priority{1.0, 2.0, 4.0};
  std::map<int, CallType> call_types;
  std::map<std::pair<int, int>, double> m;  // (ambulance type id, call type id) -> penalty
  double mismatch_penalty = kDefaultMismatchPenalty;
  bool strict_pairs = false;

  double theta(const EmergencyCall& c) const {
    if (auto it = call_types.find(c.type_id); it != call_types.end()) return it->second.theta;
    return theta_priority.at(static_cast<int>(c.priority));
  }

  int required_rank(const EmergencyCall& c) const {
    if (auto it = call_types.find(c.type_id); it != call_types.end()) return it->second.required_rank;
    return 0;
  }

  double m_value(const AmbulanceType& a, int call_type_id, int required) const {
    if (auto it = m.find({a.id, call_type_id}); it != m.end()) return it->second;
    if (strict_pairs) {
      throw Error(Errc::UnknownTypePair, "no M entry for ambulance type " + std::to_string(a.id) +
                                             " and call type " + std::to_string(call_type_id));
    }
    return a.rank >= required ? 0.0 : mismatch_penalty;
  }

  double m_value(const AmbulanceType& a, const EmergencyCall& c) const {
    return m_value(a, c.type_id, required_rank(c));
  }

  /// Every theta and M entry multiplied by k.
  CostModel scaled(double k) const {
    CostModel out = *this;
    for (double& t : out.theta_priority) t *= k;
    for (auto& [id, ct] : out.call_types) ct.theta *= k;
    for (auto& [key, v] : out.m) v *= k;
    out.mismatch_penalty *= k;
    return out;
  }
};

inline double penalization(Duration t, double theta) {
  if (t < 0) throw Error(Errc::InvalidDuration, "negative duration " + std::to_string(t));
  return theta * t;
}

inline double penalization(Duration t, const CallType& c) { return penalization(t, c.theta); }

inline double allocation_cost(const AmbulanceType& a, const CallType& c, Duration t,
                              const CostModel& m) {
  return penalization(t, c.theta) + m.m_value(a, c.id, c.required_rank);
}

inline double allocation_cost(const AmbulanceType& a, const EmergencyCall& c, Duration t,
                              const CostModel& m) {
  return penalization(t, m.theta(c)) + m.m_value(a, c);
}

// ---------------------------------------------------------------------------
// Response-time estimate

struct ResponseEstimate {
  Availability state = Availability::AtStation;
  GeoPoint origin;        // where the trip to the scene starts
  Timestamp departure = 0.0;
  Duration travel = kInf;
  Duration waiting = kInf;  // arrival on scene minus t_c
  bool reachable = false;
};

/// Position of an ambulance heading to its base at time `now`. A freed
/// ambulance that has not been sent anywhere yet stays at loc_f.
inline GeoPoint en_route_position(const AmbulanceState& s, Timestamp now, double speed_kmh) {
  if (!std::isfinite(s.t_b)) return s.loc_f;
  return position_between(s.loc_f, s.loc_b, s.t_f, now, speed_kmh);
}

inline ResponseEstimate response_time_estimate(const AmbulanceState& s, const EmergencyCall& call,
                                               Timestamp now, const Router& router) {
  ResponseEstimate r;
  r.state = availability(s, now);
  switch (r.state) {
    case Availability::AtStation:
      r.origin = s.loc_b;
      r.departure = now;
      break;
    case Availability::EnRouteToStation:
      r.origin = en_route_position(s, now, router.speed_kmh());
      r.departure = now;
      break;
    case Availability::Busy:
      r.origin = s.loc_f;
      r.departure = s.t_f;
      break;
  }
  try {
    r.travel = router.travel_time(r.origin, call.loc, r.departure);
  } catch (const Error& e) {
    if (e.code() != Errc::Unreachable) throw;
    return r;
  }
  r.reachable = true;
  r.waiting = (r.departure + r.travel) - call.t_c;
  return r;
}

// ---------------------------------------------------------------------------
// Committing decisions to an ambulance state

struct ServiceOutcome {
  int amb = -1;
  CallId call = -1;
  Availability dispatch_case = Availability::AtStation;
  Timestamp decision_time = 0.0;
  GeoPoint response_origin;
  Timestamp departure = 0.0;
  int redirected_station = -1;
  Timestamp arrival_scene = 0.0;
  Timestamp depart_scene = 0.0;
  std::optional<Timestamp> arrival_hospital;
  std::optional<Timestamp> depart_hospital;
  Timestamp service_end = 0.0;
  Duration waiting_on_scene = 0.0;
  std::optional<Duration> waiting_to_hospital;
  double cost = 0.0;
};

namespace detail {

inline void push_segment(AmbulanceState& s, const GeoPoint& to, Timestamp at, TripType type,
                         std::int64_t target) {
  s.trips.push_back(to);
  s.times.push_back(at);
  s.types.push_back(type);
  s.targets.push_back(target);
}

}  // namespace detail

/// Sends `s` to `call` with the decision taken at `now`, appending every leg
/// of the service to the trip arrays. Requires a materialized call.
inline ServiceOutcome commit_dispatch(AmbulanceState& s, const EmergencyCall& call, Timestamp now,
                                      const Router& router, const CostModel& cost) {
  if (auto problem = check_materialized(call); !problem.empty()) {
    throw Error(Errc::ValidationError, "call " + std::to_string(call.id) + ": " + problem);
  }
  const double v = router.speed_kmh();
  ServiceOutcome out;
  out.amb = s.id;
  out.call = call.id;
  out.decision_time = now;
  out.dispatch_case = availability(s, now);

  // Route every leg first so that an unreachable leg leaves `s` untouched.
  switch (out.dispatch_case) {
    case Availability::AtStation:
      out.response_origin = s.loc_b;
      out.departure = now;
      break;
    case Availability::EnRouteToStation:
      out.departure = now;
      out.response_origin = en_route_position(s, now, v);
      if (std::isfinite(s.t_b)) out.redirected_station = s.station_b;
      break;
    case Availability::Busy:
      out.response_origin = s.loc_f;
      out.departure = s.t_f;
      break;
  }
  out.arrival_scene = out.departure + router.travel_time(out.response_origin, call.loc, out.departure);
  out.depart_scene = out.arrival_scene + *call.time_on_scene;
  GeoPoint here = call.loc;
  Timestamp t = out.depart_scene;
  Timestamp arrive_cleaning = 0.0;
  if (needs_hospital(call.service_class)) {
    const Duration leg = router.travel_time(here, *call.hospital, t);
    out.waiting_to_hospital = *call.time_on_scene + leg;
    out.arrival_hospital = t + leg;
    out.depart_hospital = *out.arrival_hospital + *call.time_at_hospital;
    here = *call.hospital;
    t = *out.depart_hospital;
  }
  if (needs_cleaning(call.service_class)) {
    arrive_cleaning = t + router.travel_time(here, *call.cleaning_station, t);
    t = arrive_cleaning + *call.cleaning_time;
    here = *call.cleaning_station;
  }
  out.service_end = t;
  out.waiting_on_scene = out.arrival_scene - call.t_c;
  out.cost = allocation_cost(s.type, call, out.waiting_on_scene, cost);

  switch (out.dispatch_case) {
    case Availability::AtStation:
      if (s.times.empty() || s.times.back() < now) {
        detail::push_segment(s, s.loc_b, now, TripType::AtStation, s.station_b);
      }
      break;
    case Availability::EnRouteToStation:
      if (!std::isfinite(s.t_b)) break;
      if (now <= s.t_f && out.response_origin == s.loc_f) {
        s.trips.pop_back();
        s.times.pop_back();
        s.types.pop_back();
        s.targets.pop_back();
      } else {
        s.trips.back() = out.response_origin;
        s.times.back() = now;
      }
      break;
    case Availability::Busy:
      break;
  }
  detail::push_segment(s, call.loc, out.arrival_scene, TripType::ToScene, call.id);
  detail::push_segment(s, call.loc, out.depart_scene, TripType::OnScene, call.id);
  if (needs_hospital(call.service_class)) {
    detail::push_segment(s, *call.hospital, *out.arrival_hospital, TripType::ToHospital,
                         call.hospital_index);
    detail::push_segment(s, *call.hospital, *out.depart_hospital, TripType::AtHospital,
                         call.hospital_index);
  }
  if (needs_cleaning(call.service_class)) {
    detail::push_segment(s, *call.cleaning_station, arrive_cleaning, TripType::ToCleaning,
                         call.cleaning_index);
    detail::push_segment(s, *call.cleaning_station, t, TripType::Cleaning, call.cleaning_index);
  }

  s.t_f = t;
  s.loc_f = here;
  s.t_b = kFarFuture;
  s.station_b = -1;
  return out;
}

/// Sends a freed ambulance (t_f <= now, not heading anywhere) to `station`.
/// Arrival at the same location makes it idle there immediately.
inline void commit_to_station(AmbulanceState& s, int station, const GeoPoint& loc, Timestamp now,
                              const Router& router) {
  s.loc_b = loc;
  s.station_b = station;
  if (s.loc_f == loc) {
    s.t_b = now;
    return;
  }
  const Timestamp arrive = now + router.travel_time(s.loc_f, loc, now);
  detail::push_segment(s, loc, arrive, TripType::ToStation, station);
  s.t_b = arrive;
}

/// Leaves a freed ambulance idle where it is.
inline void commit_idle(AmbulanceState& s, Timestamp now) {
  s.loc_b = s.loc_f;
  s.station_b = -1;
  s.t_b = now;
}

/// Station with the least travel time from `from`; -1 when none is reachable.
inline int closest_station(const GeoPoint& from, Timestamp now, const Router& router,
                           const std::vector<GeoPoint>& stations) {
  int best = -1;
  Duration best_t = kInf;
  for (std::size_t i = 0; i < stations.size(); ++i) {
    Duration t;
    try {
      t = router.travel_time(from, stations[i], now);
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

// ---------------------------------------------------------------------------
// Policies

enum class PolicyKind { CA, BM, NM, GHP1, GHP2 };

struct PolicyId {
  PolicyKind kind = PolicyKind::CA;
  Duration nm_window = 3600.0;  // NM lookahead, seconds

  std::string label() const {
    switch (kind) {
      case PolicyKind::CA: return "CA";
      case PolicyKind::BM: return "BM";
      case PolicyKind::NM: return "NM";
      case PolicyKind::GHP1: return "GHP1";
      case PolicyKind::GHP2: return "GHP2";
    }
    return "CA";
  }

  static PolicyId parse(const std::string& s, Duration nm_window = 3600.0) {
    PolicyId p;
    p.nm_window = nm_window;
    if (s == "CA") p.kind = PolicyKind::CA;
    else if (s == "BM") p.kind = PolicyKind::BM;
    else if (s == "NM") p.kind = PolicyKind::NM;
    else if (s == "GHP1") p.kind = PolicyKind::GHP1;
    else if (s == "GHP2") p.kind = PolicyKind::GHP2;
    else throw Error(Errc::ConfigError, "unknown policy '" + s + "'");
    if (p.kind == PolicyKind::NM && !(nm_window > 0)) {
      throw Error(Errc::ConfigError, "NM window must be positive");
    }
    return p;
  }

  static std::vector<PolicyId> all(Duration nm_window = 3600.0) {
    return {parse("CA"), parse("BM"), parse("NM", nm_window), parse("GHP1"), parse("GHP2")};
  }
};

enum class DecisionKind {
  DispatchNow,
  DispatchAfterService,
  Queue,
  ToStation,
  Idle,
  Reserve,  // NM: busy ambulance held for a known future call, dispatched after service
  Reject,   // no ambulance can reach the call
};

constexpr std::string_view to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::DispatchNow: return "dispatch_now";
    case DecisionKind::DispatchAfterService: return "dispatch_after_service";
    case DecisionKind::Queue: return "queue";
    case DecisionKind::ToStation: return "to_station";
    case DecisionKind::Idle: return "idle";
    case DecisionKind::Reserve: return "reserve";
    case DecisionKind::Reject: return "reject";
  }
  return "idle";
}

struct DispatchDecision {
  DecisionKind kind = DecisionKind::Idle;
  int amb = -1;  // fleet index
  CallId call = -1;
  int station = -1;
  Timestamp decision_time = 0.0;
  double cost = kInf;
  std::vector<double> candidate_costs;  // per fleet index, as evaluated for this decision
};

struct PolicyContext {
  Timestamp now = 0.0;
  const CostModel* cost = nullptr;
  const Router* router = nullptr;
  const std::vector<GeoPoint>* stations = nullptr;
  bool use_home_base = false;
};

/// Everything a policy may look at. `queue` holds arrived, undispatched calls
/// in arrival order; `lookahead` the known future calls (NM only).
struct PolicyInput {
  const std::vector<AmbulanceState>* fleet = nullptr;
  const std::vector<EmergencyCall>* queue = nullptr;
  const std::vector<EmergencyCall>* lookahead = nullptr;
  PolicyContext ctx;
};

/// GHP1 processing order: decreasing penalized waiting time at `now`, then
/// earlier arrival, then lower id. Returns indices into `queue`.
inline std::vector<std::size_t> ghp1_order(const std::vector<EmergencyCall>& queue, Timestamp now,
                                           const CostModel& cost) {
  std::vector<std::size_t> idx(queue.size());
  std::vector<double> key(queue.size());
  for (std::size_t i = 0; i < queue.size(); ++i) {
    idx[i] = i;
    key[i] = cost.theta(queue[i]) * std::max(0.0, now - queue[i].t_c);
  }
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return key[a] > key[b];
    if (queue[a].t_c != queue[b].t_c) return queue[a].t_c < queue[b].t_c;
    return queue[a].id < queue[b].id;
  });
  return idx;
}

namespace detail {

/// Copy of the fleet keeping only the tail of each trip history, which is all
/// the commit functions touch.
inline std::vector<AmbulanceState> projection(const std::vector<AmbulanceState>& fleet) {
  std::vector<AmbulanceState> out;
  out.reserve(fleet.size());
  for (const auto& s : fleet) {
    AmbulanceState p;
    p.id = s.id;
    p.type = s.type;
    p.t_f = s.t_f;
    p.loc_f = s.loc_f;
    p.t_b = s.t_b;
    p.loc_b = s.loc_b;
    p.station_b = s.station_b;
    p.home_base = s.home_base;
    p.home_station = s.home_station;
    const std::size_t n = s.trips.size();
    const std::size_t keep = std::min<std::size_t>(n, 2);
    p.trips.assign(s.trips.end() - keep, s.trips.end());
    p.times.assign(s.times.end() - keep, s.times.end());
    if (keep == 2) {
      p.types.push_back(s.types.back());
      p.targets.push_back(s.targets.back());
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct Evaluation {
  std::vector<double> cost;
  std::vector<ResponseEstimate> estimate;
};

inline Evaluation evaluate(const std::vector<AmbulanceState>& fleet, const EmergencyCall& call,
                           Timestamp now, const PolicyContext& ctx) {
  Evaluation e;
  e.cost.resize(fleet.size(), kInf);
  e.estimate.resize(fleet.size());
  for (std::size_t j = 0; j < fleet.size(); ++j) {
    e.estimate[j] = response_time_estimate(fleet[j], call, now, *ctx.router);
    if (e.estimate[j].reachable) {
      e.cost[j] = allocation_cost(fleet[j].type, call, e.estimate[j].waiting, *ctx.cost);
    }
  }
  return e;
}

/// Lower capability rank first, then lower id.
inline bool more_basic(const AmbulanceState& a, const AmbulanceState& b) {
  if (a.type.rank != b.type.rank) return a.type.rank < b.type.rank;
  return a.id < b.id;
}

/// Fleet indices achieving the minimal finite cost, most basic first.
inline std::vector<int> best_set(const std::vector<AmbulanceState>& fleet,
                                 const std::vector<double>& cost) {
  double best = kInf;
  for (double c : cost) best = std::min(best, c);
  std::vector<int> out;
  if (!std::isfinite(best)) return out;
  for (std::size_t j = 0; j < cost.size(); ++j) {
    if (cost[j] == best) out.push_back(static_cast<int>(j));
  }
  std::sort(out.begin(), out.end(),
            [&](int a, int b) { return more_basic(fleet[a], fleet[b]); });
  return out;
}

inline bool is_available(const AmbulanceState& s, Timestamp now) {
  return availability(s, now) != Availability::Busy;
}

inline DispatchDecision make_dispatch(const std::vector<AmbulanceState>& fleet, int j,
                                      const EmergencyCall& call, Timestamp now,
                                      const Evaluation& ev) {
  DispatchDecision d;
  d.kind = is_available(fleet[j], now) ? DecisionKind::DispatchNow
                                       : DecisionKind::DispatchAfterService;
  d.amb = j;
  d.call = call.id;
  d.decision_time = now;
  d.cost = ev.cost[j];
  d.candidate_costs = ev.cost;
  return d;
}

inline DispatchDecision make_simple(DecisionKind kind, CallId call, Timestamp now,
                                    std::vector<double> costs = {}) {
  DispatchDecision d;
  d.kind = kind;
  d.call = call;
  d.decision_time = now;
  d.candidate_costs = std::move(costs);
  return d;
}

inline DispatchDecision station_decision(const AmbulanceState& s, int amb,
                                         const PolicyContext& ctx) {
  DispatchDecision d;
  d.amb = amb;
  d.decision_time = ctx.now;
  int station = -1;
  if (ctx.use_home_base && s.home_station >= 0) {
    station = s.home_station;
  } else if (ctx.stations != nullptr) {
    station = closest_station(s.loc_f, ctx.now, *ctx.router, *ctx.stations);
  }
  if (station < 0) {
    d.kind = DecisionKind::Idle;
  } else {
    d.kind = DecisionKind::ToStation;
    d.station = station;
  }
  return d;
}

// CA: closest available in time.
inline DispatchDecision ca_choose(const std::vector<AmbulanceState>& fleet,
                                  const EmergencyCall& call, const PolicyContext& ctx) {
  const auto ev = evaluate(fleet, call, ctx.now, ctx);
  int best = -1;
  bool any_reachable = false;
  for (std::size_t j = 0; j < fleet.size(); ++j) {
    if (!ev.estimate[j].reachable) continue;
    any_reachable = true;
    if (!is_available(fleet[j], ctx.now)) continue;
    if (best < 0 || ev.estimate[j].waiting < ev.estimate[best].waiting ||
        (ev.estimate[j].waiting == ev.estimate[best].waiting && more_basic(fleet[j], fleet[best]))) {
      best = static_cast<int>(j);
    }
  }
  if (best >= 0) return make_dispatch(fleet, best, call, ctx.now, ev);
  return make_simple(any_reachable ? DecisionKind::Queue : DecisionKind::Reject, call.id, ctx.now,
                     ev.cost);
}

// BM: least allocation cost over every ambulance.
inline DispatchDecision bm_choose(const std::vector<AmbulanceState>& fleet,
                                  const EmergencyCall& call, const PolicyContext& ctx) {
  const auto ev = evaluate(fleet, call, ctx.now, ctx);
  const auto best = best_set(fleet, ev.cost);
  if (best.empty()) return make_simple(DecisionKind::Reject, call.id, ctx.now, ev.cost);
  return make_dispatch(fleet, best.front(), call, ctx.now, ev);
}

inline const EmergencyCall* find_call(const std::vector<EmergencyCall>& calls, CallId id) {
  for (const auto& c : calls) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

inline void apply(std::vector<AmbulanceState>& fleet, const DispatchDecision& d,
                  const EmergencyCall& call, const PolicyContext& ctx) {
  try {
    commit_dispatch(fleet[d.amb], call, d.decision_time, *ctx.router, *ctx.cost);
  } catch (const Error& e) {
    if (e.code() != Errc::Unreachable) throw;
  }
}

// GHP1 queue pass over `queue`; appends decisions and projects them on `fleet`.
inline std::set<CallId> ghp1_pass(std::vector<AmbulanceState>& fleet,
                                  const std::vector<EmergencyCall>& queue,
                                  const PolicyContext& ctx, std::vector<DispatchDecision>& out) {
  std::set<CallId> handled;
  for (std::size_t qi : ghp1_order(queue, ctx.now, *ctx.cost)) {
    const auto& call = queue[qi];
    const auto ev = evaluate(fleet, call, ctx.now, ctx);
    const auto best = best_set(fleet, ev.cost);
    if (best.empty()) {
      out.push_back(make_simple(DecisionKind::Reject, call.id, ctx.now, ev.cost));
      handled.insert(call.id);
      continue;
    }
    for (int j : best) {
      if (is_available(fleet[j], ctx.now)) {
        auto d = make_dispatch(fleet, j, call, ctx.now, ev);
        apply(fleet, d, call, ctx);
        out.push_back(std::move(d));
        handled.insert(call.id);
        break;
      }
    }
  }
  return handled;
}

// GHP2 min-max pass.
inline std::set<CallId> ghp2_pass(std::vector<AmbulanceState>& fleet,
                                  const std::vector<EmergencyCall>& queue,
                                  const PolicyContext& ctx, std::vector<DispatchDecision>& out) {
  std::set<CallId> handled;
  std::vector<const EmergencyCall*> open;
  for (const auto& c : queue) open.push_back(&c);
  while (!open.empty()) {
    std::vector<Evaluation> evs;
    std::vector<double> min_alloc;
    for (std::size_t k = 0; k < open.size();) {
      auto ev = evaluate(fleet, *open[k], ctx.now, ctx);
      const double m = *std::min_element(ev.cost.begin(), ev.cost.end());
      if (!std::isfinite(m)) {
        out.push_back(make_simple(DecisionKind::Reject, open[k]->id, ctx.now, ev.cost));
        handled.insert(open[k]->id);
        open.erase(open.begin() + static_cast<std::ptrdiff_t>(k));
        continue;
      }
      evs.push_back(std::move(ev));
      min_alloc.push_back(m);
      ++k;
    }
    if (open.empty()) break;
    const double top = *std::max_element(min_alloc.begin(), min_alloc.end());
    std::size_t chosen = open.size();
    int chosen_amb = -1;
    std::size_t deferred = open.size();
    for (std::size_t k = 0; k < open.size(); ++k) {
      if (min_alloc[k] != top) continue;
      if (deferred == open.size() || open[k]->id < open[deferred]->id) deferred = k;
      for (int j : best_set(fleet, evs[k].cost)) {
        if (!is_available(fleet[j], ctx.now)) continue;
        if (chosen == open.size() || open[k]->id < open[chosen]->id) {
          chosen = k;
          chosen_amb = j;
        }
        break;
      }
    }
    if (chosen == open.size()) {
      open.erase(open.begin() + static_cast<std::ptrdiff_t>(deferred));
      continue;
    }
    auto d = make_dispatch(fleet, chosen_amb, *open[chosen], ctx.now, evs[chosen]);
    apply(fleet, d, *open[chosen], ctx);
    out.push_back(std::move(d));
    handled.insert(open[chosen]->id);
    open.erase(open.begin() + static_cast<std::ptrdiff_t>(chosen));
  }
  return handled;
}

// NM for one call, with lookahead reservations.
inline void nm_call(std::vector<AmbulanceState>& fleet, const EmergencyCall& call,
                    const std::vector<EmergencyCall>& lookahead, const PolicyContext& ctx,
                    std::vector<DispatchDecision>& out) {
  std::set<CallId> reserved;
  while (true) {
    const auto ev = evaluate(fleet, call, ctx.now, ctx);
    const auto best = best_set(fleet, ev.cost);
    if (best.empty()) {
      out.push_back(make_simple(DecisionKind::Reject, call.id, ctx.now, ev.cost));
      return;
    }
    for (int j : best) {
      if (is_available(fleet[j], ctx.now)) {
        auto d = make_dispatch(fleet, j, call, ctx.now, ev);
        apply(fleet, d, call, ctx);
        out.push_back(std::move(d));
        return;
      }
    }
    // Every best ambulance is busy: inspect the calls each one is also best for.
    struct Competing {
      const EmergencyCall* call;
      double cost;
      Evaluation ev;
    };
    std::vector<std::vector<Competing>> competing(best.size());
    for (std::size_t b = 0; b < best.size(); ++b) {
      const int j = best[b];
      for (const auto& k : lookahead) {
        if (reserved.contains(k.id) || k.id == call.id) continue;
        if (k.t_c <= ctx.now || k.t_c > fleet[j].t_f) continue;
        auto kev = evaluate(fleet, k, k.t_c, ctx);
        const auto kbest = best_set(fleet, kev.cost);
        if (std::find(kbest.begin(), kbest.end(), j) == kbest.end()) continue;
        const double c = kev.cost[j];
        competing[b].push_back({&k, c, std::move(kev)});
      }
    }
    for (std::size_t b = 0; b < best.size(); ++b) {
      const int j = best[b];
      const bool good = std::all_of(competing[b].begin(), competing[b].end(),
                                    [&](const Competing& k) { return ev.cost[j] <= k.cost; });
      if (good) {
        auto d = make_dispatch(fleet, j, call, ctx.now, ev);
        apply(fleet, d, call, ctx);
        out.push_back(std::move(d));
        return;
      }
    }
    // No good ambulance: hold the most basic one for its cheapest future call.
    const int j = best.front();
    const auto& cands = competing.front();
    std::size_t pick = 0;
    for (std::size_t q = 1; q < cands.size(); ++q) {
      const auto& a = cands[q];
      const auto& p = cands[pick];
      if (a.cost < p.cost || (a.cost == p.cost && (a.call->t_c < p.call->t_c ||
                                                   (a.call->t_c == p.call->t_c &&
                                                    a.call->id < p.call->id)))) {
        pick = q;
      }
    }
    const auto& target = cands[pick];
    DispatchDecision d;
    d.kind = DecisionKind::Reserve;
    d.amb = j;
    d.call = target.call->id;
    d.decision_time = target.call->t_c;
    d.cost = target.cost;
    d.candidate_costs = target.ev.cost;
    apply(fleet, d, *target.call, ctx);
    out.push_back(std::move(d));
    reserved.insert(target.call->id);
  }
}

}  // namespace detail

/// Decisions when `call` arrives at ctx.now. `in.queue` excludes `call`.
inline std::vector<DispatchDecision> policy_on_call(const PolicyId& policy, const PolicyInput& in,
                                                    const EmergencyCall& call) {
  const auto& fleet_in = *in.fleet;
  if (fleet_in.empty()) throw Error(Errc::EmptyFleet, "no ambulances");
  const auto& ctx = in.ctx;
  std::vector<DispatchDecision> out;
  switch (policy.kind) {
    case PolicyKind::CA:
      out.push_back(detail::ca_choose(fleet_in, call, ctx));
      break;
    case PolicyKind::BM:
      out.push_back(detail::bm_choose(fleet_in, call, ctx));
      break;
    case PolicyKind::NM: {
      auto fleet = detail::projection(fleet_in);
      static const std::vector<EmergencyCall> kNone;
      detail::nm_call(fleet, call, in.lookahead ? *in.lookahead : kNone, ctx, out);
      break;
    }
    case PolicyKind::GHP1:
    case PolicyKind::GHP2: {
      auto fleet = detail::projection(fleet_in);
      std::vector<EmergencyCall> queue = in.queue ? *in.queue : std::vector<EmergencyCall>{};
      queue.push_back(call);
      const auto handled = policy.kind == PolicyKind::GHP1
                               ? detail::ghp1_pass(fleet, queue, ctx, out)
                               : detail::ghp2_pass(fleet, queue, ctx, out);
      if (!handled.contains(call.id)) {
        out.push_back(detail::make_simple(DecisionKind::Queue, call.id, ctx.now));
      }
      break;
    }
  }
  return out;
}

/// Decisions when fleet ambulance `amb` completes its service at ctx.now.
inline std::vector<DispatchDecision> policy_on_free(const PolicyId& policy, const PolicyInput& in,
                                                    int amb) {
  const auto& fleet_in = *in.fleet;
  if (fleet_in.empty()) throw Error(Errc::EmptyFleet, "no ambulances");
  const auto& ctx = in.ctx;
  static const std::vector<EmergencyCall> kNone;
  const auto& queue = in.queue ? *in.queue : kNone;
  std::vector<DispatchDecision> out;
  switch (policy.kind) {
    case PolicyKind::CA:
    case PolicyKind::BM: {
      std::vector<std::size_t> order(queue.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (queue[a].t_c != queue[b].t_c) return queue[a].t_c < queue[b].t_c;
        return queue[a].id < queue[b].id;
      });
      for (std::size_t qi : order) {
        const auto ev = detail::evaluate(fleet_in, queue[qi], ctx.now, ctx);
        if (!ev.estimate[amb].reachable) continue;
        out.push_back(detail::make_dispatch(fleet_in, amb, queue[qi], ctx.now, ev));
        return out;
      }
      break;
    }
    case PolicyKind::NM:
      break;
    case PolicyKind::GHP1:
    case PolicyKind::GHP2: {
      auto fleet = detail::projection(fleet_in);
      if (policy.kind == PolicyKind::GHP1) detail::ghp1_pass(fleet, queue, ctx, out);
      else detail::ghp2_pass(fleet, queue, ctx, out);
      for (const auto& d : out) {
        if (d.amb == amb) return out;
      }
      break;
    }
  }
  out.push_back(detail::station_decision(fleet_in[amb], amb, ctx));
  return out;
}

}  // namespace ems
