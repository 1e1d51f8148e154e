#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "ems/sim.hpp"
#include "ems/trace.hpp"

using namespace ems;

namespace {

constexpr double kDay = 1704067200.0;  // 2024-01-01 00:00 UTC
constexpr double kPi = std::numbers::pi;

double hm(int h, int m) { return kDay + h * 3600.0 + m * 60.0; }

GeoPoint east(double km) { return {0.0, km / 6371.0 * 180.0 / kPi}; }

// Great-circle slerp via an explicit rotation about the plane normal.
GeoPoint slerp_oracle(GeoPoint a, GeoPoint b, double fraction) {
  auto unit = [](GeoPoint p) {
    const double la = p.lat * kPi / 180, lo = p.lon * kPi / 180;
    return std::array<double, 3>{std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la)};
  };
  const auto u = unit(a), w = unit(b);
  std::array<double, 3> k{u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]};
  const double kn = std::sqrt(k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
  if (kn == 0) return a;
  for (double& c : k) c /= kn;
  const double angle = std::atan2(kn, u[0] * w[0] + u[1] * w[1] + u[2] * w[2]);
  const double th = fraction * angle;
  // Rodrigues: u cos + (k x u) sin + k (k.u)(1 - cos); k.u = 0
  const std::array<double, 3> kxu{k[1] * u[2] - k[2] * u[1], k[2] * u[0] - k[0] * u[2], k[0] * u[1] - k[1] * u[0]};
  std::array<double, 3> r;
  for (int i = 0; i < 3; ++i) r[i] = u[i] * std::cos(th) + kxu[i] * std::sin(th);
  return {std::asin(std::clamp(r[2], -1.0, 1.0)) * 180 / kPi, std::atan2(r[1], r[0]) * 180 / kPi};
}

SimConfig single_call_config() {
  const GeoPoint b{-22.900, -43.200}, c{-22.930, -43.200}, h{-22.900, -43.260};
  auto g = std::make_shared<StreetGraph>();
  g->add_node(1, b);
  g->add_node(2, c);
  g->add_node(3, h);
  g->add_edge(1, 2, 10.0);
  g->add_edge(2, 3, 14.0);
  g->add_edge(3, 1, 20.0);
  SimConfig cfg;
  cfg.start = hm(4, 32);
  cfg.end = hm(5, 45);
  cfg.stations = {b};
  cfg.hospitals = {h};
  cfg.cleaning_stations = {b};
  cfg.fleet = {FleetMember{AmbulanceType{}, 0, std::nullopt}};
  cfg.graph = g;
  cfg.speed_kmh = 60.0;
  return cfg;
}

EmergencyCall single_call_call() {
  EmergencyCall c;
  c.id = 1;
  c.t_c = hm(4, 36);
  c.loc = {-22.930, -43.200};
  c.service_class = ServiceClass::C1;
  c.time_on_scene = 6 * 60.0;
  c.hospital = GeoPoint{-22.900, -43.260};
  c.hospital_index = 0;
  c.time_at_hospital = 19 * 60.0;
  c.cleaning_station = GeoPoint{-22.900, -43.200};
  c.cleaning_index = 0;
  c.cleaning_time = 0.0;
  return c;
}

struct RandomInstance {
  SimConfig cfg;
  std::vector<EmergencyCall> calls;
};

RandomInstance random_instance(std::uint64_t seed, PolicyId policy) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lat(-23.0, -22.8), lon(-43.5, -43.2);
  std::uniform_int_distribution<int> nst(2, 4), namb(2, 5), ncalls(5, 30), cls(1, 4), pr(0, 2);
  RandomInstance r;
  auto& cfg = r.cfg;
  cfg.start = kDay;
  cfg.end = kDay + 6 * 3600;
  const int ns = nst(rng);
  for (int i = 0; i < ns; ++i) cfg.stations.push_back({lat(rng), lon(rng)});
  cfg.hospitals = {{lat(rng), lon(rng)}, {lat(rng), lon(rng)}};
  const int na = namb(rng);
  for (int i = 0; i < na; ++i) {
    FleetMember m;
    m.type.rank = i % 2;
    m.type.id = i % 2;
    m.station = i % ns;
    cfg.fleet.push_back(m);
  }
  cfg.policy = policy;
  cfg.policy.nm_window = 1800;
  cfg.clip_to_horizon = false;
  cfg.use_home_base = seed % 2 == 0;
  cfg.durations.on_scene = {900, 0.5};
  cfg.durations.at_hospital = {1200, 0.5};
  cfg.durations.cleaning = {600, 0.5};
  const int nc = ncalls(rng);
  std::uniform_real_distribution<double> when(cfg.start, cfg.end);
  std::vector<double> times;
  for (int i = 0; i < nc; ++i) times.push_back(std::floor(when(rng)));
  std::sort(times.begin(), times.end());
  for (int i = 0; i < nc; ++i) {
    EmergencyCall c;
    c.id = 1000 + i;
    c.t_c = times[i];
    c.loc = {lat(rng), lon(rng)};
    c.service_class = static_cast<ServiceClass>(cls(rng));
    c.priority = static_cast<Priority>(pr(rng));
    c.type_id = static_cast<int>(c.priority);
    r.calls.push_back(c);
  }
  auto mrng = scenario_rng(seed, 0);
  r.calls = materialize_calls(r.calls, cfg, mrng);
  return r;
}

Timestamp arrival_from_arrays(const SimOutput& out, const CallRecord& r) {
  const auto& s = out.fleet[r.amb];
  for (std::size_t i = 0; i < s.types.size(); ++i) {
    if (s.types[i] == TripType::ToScene && s.targets[i] == r.call) return s.times[i + 1];
  }
  return kInf;
}

}  // namespace

TEST(Engine, TableOneReplay) {
  const auto cfg = single_call_config();
  const auto out = run_materialized(cfg, {single_call_call()});
  ASSERT_EQ(out.fleet.size(), 1u);
  const auto& s = out.fleet[0];
  const std::vector<Timestamp> times{hm(4, 32), hm(4, 36), hm(4, 46), hm(4, 52),
                                     hm(5, 6),  hm(5, 25), hm(5, 45)};
  EXPECT_EQ(s.times, times);
  std::vector<int> codes;
  for (auto t : s.types) codes.push_back(code(t));
  EXPECT_EQ(codes, (std::vector<int>{1, 2, 3, 4, 5, 6}));
  const GeoPoint b = cfg.stations[0], c = single_call_call().loc, h = cfg.hospitals[0];
  EXPECT_EQ(s.trips, (std::vector<GeoPoint>{b, b, c, c, h, h, b}));
  EXPECT_EQ(out.records[0].waiting_on_scene, 600.0);
  EXPECT_EQ(*out.records[0].waiting_to_hospital, 6 * 60.0 + 14 * 60.0);
  EXPECT_TRUE(validate_trip_sequence(s).empty());
}

TEST(Engine, ZeroCallsIdleWholeWindow) {
  auto cfg = single_call_config();
  cfg.fleet.push_back(cfg.fleet[0]);
  const auto out = run_materialized(cfg, {});
  for (const auto& s : out.fleet) {
    ASSERT_EQ(s.types.size(), 1u);
    EXPECT_EQ(s.types[0], TripType::AtStation);
    EXPECT_EQ(s.times, (std::vector<Timestamp>{cfg.start, cfg.end}));
  }
}

TEST(Engine, SingleC4CallCaseA) {
  SimConfig cfg;
  cfg.start = kDay;
  cfg.stations = {east(0)};
  cfg.fleet = {FleetMember{}};
  EmergencyCall c;
  c.id = 7;
  c.t_c = kDay + 100;
  c.loc = east(12);
  c.service_class = ServiceClass::C4;
  c.time_on_scene = 300;
  const Router router(cfg.speed_kmh);
  const Duration there = router.travel_time(east(0), east(12), c.t_c);
  const Duration back = router.travel_time(east(12), east(0), 0);
  cfg.end = ((c.t_c + there) + 300) + back;
  const auto out = run_materialized(cfg, {c});
  std::vector<int> codes;
  for (auto t : out.fleet[0].types) codes.push_back(code(t));
  EXPECT_EQ(codes, (std::vector<int>{1, 2, 3, 8}));
  EXPECT_NEAR(out.records[0].waiting_on_scene, there, 1e-9 * there);
  EXPECT_EQ(out.records[0].dispatch_case, Availability::AtStation);
}

TEST(Engine, RandomScenarioInvariants) {
  int case_b = 0;
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    for (const auto& policy : PolicyId::all()) {
      auto inst = random_instance(seed, policy);
      const auto out = run_materialized(inst.cfg, inst.calls);
      const Router router = inst.cfg.make_router();
      for (const auto& s : out.fleet) {
        const auto v = validate_trip_sequence(s);
        EXPECT_TRUE(v.empty()) << policy.label() << " seed " << seed << ": " << v[0].message;
        for (std::size_t i = 0; i < s.types.size(); ++i) {
          if (!is_moving(s.types[i])) continue;
          if (s.types[i] == TripType::ToStation && !(s.trips[i + 1] == out.stations[s.targets[i]])) continue;
          const double expect = router.travel_time(s.trips[i], s.trips[i + 1], s.times[i]);
          EXPECT_NEAR(s.times[i + 1] - s.times[i], expect, 1e-6);  // epoch-scale rounding
        }
      }
      std::vector<std::vector<const CallRecord*>> by_amb(out.fleet.size());
      for (const auto& r : out.records) {
        ASSERT_TRUE(r.served) << policy.label() << " seed " << seed << " call " << r.call;
        EXPECT_EQ(r.waiting_on_scene_penalized, r.theta * r.waiting_on_scene);
        EXPECT_NEAR(arrival_from_arrays(out, r) - r.t_c, r.waiting_on_scene, 1e-9);
        by_amb[r.amb].push_back(&r);
        if (r.dispatch_case == Availability::EnRouteToStation && r.redirected_station >= 0) {
          // independent interpolation of the truncated return trip
          const auto& s = out.fleet[r.amb];
          for (std::size_t i = 0; i < s.types.size(); ++i) {
            if (s.types[i] == TripType::ToStation && s.times[i + 1] == r.decision_time &&
                i + 1 < s.types.size() && s.targets[i + 1] == r.call) {
              const GeoPoint st = out.stations[r.redirected_station];
              const double total = great_circle_km(s.trips[i], st);
              const double done = 60.0 * (r.decision_time - s.times[i]) / 3600.0;
              const GeoPoint p = slerp_oracle(s.trips[i], st, std::min(1.0, done / total));
              EXPECT_LT(separation_deg(p, r.response_origin), 1e-7);
              ++case_b;
            }
          }
        }
      }
      for (auto& list : by_amb) {
        std::sort(list.begin(), list.end(),
                  [](auto a, auto b) { return a->arrival_scene < b->arrival_scene; });
        for (std::size_t k = 1; k < list.size(); ++k) {
          EXPECT_GE(list[k]->departure, list[k - 1]->service_end);
        }
      }
    }
  }
  EXPECT_GT(case_b, 0);
}

TEST(Engine, Deterministic) {
  auto inst = random_instance(5, PolicyId::parse("GHP2"));
  const auto a = run_materialized(inst.cfg, inst.calls);
  const auto b = run_materialized(inst.cfg, inst.calls);
  for (std::size_t i = 0; i < a.fleet.size(); ++i) {
    EXPECT_EQ(a.fleet[i].times, b.fleet[i].times);
    EXPECT_EQ(a.fleet[i].trips, b.fleet[i].trips);
  }
}

TEST(Engine, BatchSharesCallStreams) {
  auto inst = random_instance(3, PolicyId::parse("CA"));
  std::vector<EmergencyCall> raw = inst.calls;
  for (auto& c : raw) {
    c.time_on_scene.reset();
    c.hospital.reset();
    c.time_at_hospital.reset();
    c.cleaning_station.reset();
    c.cleaning_time.reset();
  }
  const auto outs = run_batch(inst.cfg, {raw}, PolicyId::all(), 2);
  ASSERT_EQ(outs.size(), 5u);
  for (const auto& o : outs) {
    EXPECT_FALSE(o.failed) << o.error;
    ASSERT_EQ(o.calls.size(), outs[0].calls.size());
    for (std::size_t i = 0; i < o.calls.size(); ++i) {
      EXPECT_EQ(o.calls[i].id, outs[0].calls[i].id);
      EXPECT_EQ(*o.calls[i].time_on_scene, *outs[0].calls[i].time_on_scene);
    }
  }
  const auto again = run_batch(inst.cfg, {raw, raw}, PolicyId::all(), 1);
  ASSERT_EQ(again.size(), 10u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(again[k].policy, outs[k].policy);
    for (std::size_t i = 0; i < again[k].records.size(); ++i)
      EXPECT_EQ(again[k].records[i].waiting_on_scene, outs[k].records[i].waiting_on_scene);
  }
}

TEST(Engine, BestMyopicBeatsClosestAvailableOnCraftedInstance) {
  SimConfig cfg;
  cfg.start = 0;
  cfg.end = 7200;
  cfg.stations = {east(0), east(30)};
  cfg.fleet = {FleetMember{AmbulanceType{}, 0, {}}, FleetMember{AmbulanceType{}, 1, {}}};
  auto mk = [](CallId id, double t, double km) {
    EmergencyCall c;
    c.id = id;
    c.t_c = t;
    c.loc = east(km);
    c.service_class = ServiceClass::C4;
    c.time_on_scene = 600;
    return c;
  };
  const std::vector<EmergencyCall> calls{mk(1, 0, 0.5), mk(2, 60, 1.0)};
  double mean[2];
  int k = 0;
  for (auto name : {"CA", "BM"}) {
    cfg.policy = PolicyId::parse(name);
    const auto out = run_materialized(cfg, calls);
    mean[k++] = (out.records[0].waiting_on_scene_penalized + out.records[1].waiting_on_scene_penalized) / 2;
  }
  EXPECT_LT(mean[1], mean[0]);
}

TEST(Engine, QueuedCallsAllServed) {
  SimConfig cfg;
  cfg.start = 0;
  cfg.end = 3600;
  cfg.stations = {east(0)};
  cfg.fleet = {FleetMember{}};
  cfg.clip_to_horizon = false;
  std::vector<EmergencyCall> calls;
  for (int i = 0; i < 5; ++i) {
    EmergencyCall c;
    c.id = i;
    c.t_c = i * 10.0;
    c.loc = east(1 + i);
    c.service_class = ServiceClass::C4;
    c.time_on_scene = 300;
    calls.push_back(c);
  }
  for (const auto& p : PolicyId::all()) {
    cfg.policy = p;
    const auto out = run_materialized(cfg, calls);
    for (const auto& r : out.records) EXPECT_TRUE(r.served) << p.label();
    EXPECT_TRUE(validate_trip_sequence(out.fleet[0]).empty()) << p.label();
  }
}

TEST(Engine, HooksSeeEveryDecision) {
  auto inst = random_instance(8, PolicyId::parse("BM"));
  std::size_t dispatches = 0;
  RunHooks hooks;
  hooks.on_decision = [&](const DecisionTrace& t) {
    for (const auto& d : *t.decisions) {
      if (d.kind == DecisionKind::DispatchNow || d.kind == DecisionKind::DispatchAfterService) {
        ++dispatches;
        for (double c : d.candidate_costs) EXPECT_LE(d.cost, c);
      }
    }
  };
  const auto out = run_materialized(inst.cfg, inst.calls, 0, hooks);
  EXPECT_EQ(dispatches, out.records.size());
}

TEST(Snapshot, Basics) {
  const auto cfg = single_call_config();
  const auto out = run_materialized(cfg, {single_call_call()});
  auto snap = snapshot(out, hm(4, 33));
  EXPECT_EQ(snap.ambulances[0].position, cfg.stations[0]);
  EXPECT_TRUE(snap.calls.empty());
  snap = snapshot(out, hm(4, 41));
  EXPECT_EQ(snap.ambulances[0].type, TripType::ToScene);
  const auto& s = out.fleet[0];
  const double seg = central_angle(s.trips[1], s.trips[2]);
  EXPECT_NEAR(central_angle(snap.ambulances[0].position, s.trips[1]) +
                  central_angle(snap.ambulances[0].position, s.trips[2]),
              seg, 1e-12);
  ASSERT_EQ(snap.calls.size(), 1u);
  EXPECT_EQ(snap.calls[0].phase, CallPhase::Waiting);
  snap = snapshot(out, hm(4, 50));
  EXPECT_EQ(snap.calls[0].phase, CallPhase::OnScene);
  EXPECT_THROW(snapshot(out, hm(4, 0)), Error);
  EXPECT_THROW(snapshot(out, hm(6, 0)), Error);
}

TEST(Snapshot, AgreesWithTrace) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto inst = random_instance(seed, PolicyId::parse("CA"));
    inst.cfg.clip_to_horizon = true;
    const auto out = run_materialized(inst.cfg, inst.calls);
    for (const auto& s : out.fleet) {
      const auto ride = discretize(s, 60, out.speed_kmh);
      for (std::size_t k = 0; k < ride.times.size(); ++k) {
        const auto snap = snapshot(out, ride.times[k]);
        EXPECT_LT(separation_deg(snap.ambulances[s.id].position, ride.rides[k]), 1e-9);
      }
    }
  }
}

namespace {

EmergencyCall c4_call(CallId id, double t, double km) {
  EmergencyCall c;
  c.id = id;
  c.t_c = t;
  c.loc = east(km);
  c.service_class = ServiceClass::C4;
  c.time_on_scene = 600;
  return c;
}

}  // namespace

// With every unit back at its home base before the next call, CA minimizes over a
// superset when a unit is added, so no response can get slower.
TEST(FleetMonotonicity, HoldsWhenCallsNeverOverlap) {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> pos(0, 20), nc(1, 6), ns(1, 4);
  for (int trial = 0; trial < 300; ++trial) {
    SimConfig cfg;
    cfg.start = 0;
    cfg.end = 1e6;
    cfg.clip_to_horizon = false;
    cfg.use_home_base = true;
    for (int i = ns(rng); i >= 0; --i) cfg.stations.push_back(east(pos(rng)));
    std::vector<EmergencyCall> calls;
    for (int i = 0, n = nc(rng); i < n; ++i) calls.push_back(c4_call(i, i * 7200.0, pos(rng)));
    for (std::size_t k = 0; k < cfg.stations.size(); ++k)
      cfg.fleet.push_back(FleetMember{AmbulanceType{}, static_cast<int>(k), {}});
    auto small = cfg;
    small.fleet.pop_back();
    const auto a = run_materialized(small, calls);
    const auto b = run_materialized(cfg, calls);
    for (std::size_t i = 0; i < calls.size(); ++i)
      EXPECT_LE(b.records[i].waiting_on_scene, a.records[i].waiting_on_scene + 1e-9);
  }
}

// A unit returning to base passes right by the second call. Adding a second
// unit that takes the first call leaves the returning unit at a far base.
TEST(FleetMonotonicity, CanFailWhenReturningUnitIsRedirected) {
  SimConfig cfg;
  cfg.start = 0;
  cfg.end = 1e5;
  cfg.clip_to_horizon = false;
  cfg.use_home_base = true;
  cfg.stations = {east(0), east(12)};
  cfg.fleet = {FleetMember{AmbulanceType{}, 0, {}}};
  const std::vector<EmergencyCall> calls{c4_call(0, 0, 10), c4_call(1, 1300, 9)};
  const auto one = run_materialized(cfg, calls);
  cfg.fleet.push_back(FleetMember{AmbulanceType{}, 1, {}});
  const auto two = run_materialized(cfg, calls);
  EXPECT_EQ(one.records[1].dispatch_case, Availability::EnRouteToStation);
  EXPECT_NEAR(one.records[1].waiting_on_scene, 40.0, 1e-6);
  EXPECT_EQ(two.records[0].amb, 1);
  EXPECT_NEAR(two.records[1].waiting_on_scene, 180.0, 1e-6);
}
