// One ambulance, one high priority call: prints the trip array and a few snapshots.
#include <cstdio>

#include "ems/sim.hpp"

using namespace ems;

int main() {
  SimConfig cfg;
  cfg.start = 1704067200;  // 2024-01-01 00:00 UTC
  cfg.end = cfg.start + 6 * 3600;
  cfg.stations = {{-22.9035, -43.1730}, {-22.9711, -43.1863}};
  cfg.hospitals = {{-22.9068, -43.1895}};
  cfg.fleet = {{AmbulanceType{1, "ALS", 1}, 0, std::nullopt}};
  cfg.policy = PolicyId::parse("CA");
  cfg.clip_to_horizon = false;

  EmergencyCall c;
  c.id = 1;
  c.t_c = cfg.start + 1800;
  c.loc = {-22.95, -43.18};
  c.priority = Priority::High;
  c.service_class = ServiceClass::C1;
  c.time_on_scene = 900;
  c.hospital = cfg.hospitals[0];
  c.hospital_index = 0;
  c.time_at_hospital = 1200;
  c.cleaning_station = cfg.stations[0];
  c.cleaning_index = 0;
  c.cleaning_time = 600;

  const SimOutput out = run_materialized(cfg, {c});
  const auto& s = out.fleet[0];
  std::printf("trip array of ambulance %d\n", s.id);
  for (std::size_t k = 0; k < s.types.size(); ++k)
    std::printf("  %8.1f -> %8.1f  type %d  target %lld\n", s.times[k] - cfg.start, s.times[k + 1] - cfg.start,
                code(s.types[k]), static_cast<long long>(s.targets[k]));

  const auto& r = out.records[0];
  std::printf("waiting on scene %.1f s, penalized %.1f\n", r.waiting_on_scene, r.waiting_on_scene_penalized);

  for (double dt : {0.0, 1800.0, 2000.0, 3000.0, 5000.0}) {
    const Snapshot snap = snapshot(out, cfg.start + dt);
    const auto& a = snap.ambulances[0];
    std::printf("t=%6.0f  type %d at (%.5f, %.5f), %zu open calls\n", dt, code(a.type), a.position.lat,
                a.position.lon, snap.calls.size());
  }
  return 0;
}
