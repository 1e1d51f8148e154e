#pragma once

// Fixed-step discretization of trip arrays on an absolute grid of multiples
// of t_step.

#include <cmath>
#include <vector>

#include "ems/domain.hpp"
#include "ems/error.hpp"
#include "ems/geo.hpp"
#include "ems/streets.hpp"

namespace ems {

struct DiscretizedRide {
  std::vector<GeoPoint> rides;
  std::vector<Timestamp> times;
  std::vector<TripType> types;
  double t_step = 0.0;
};

/// Samples the ride at every grid time k * t_step between the first and the
/// last node. The first node is emitted only when it is grid-aligned. A grid
/// time falling on a node shared by two segments belongs to the earlier one.
inline DiscretizedRide discretize(const std::vector<GeoPoint>& trips,
                                  const std::vector<Timestamp>& times,
                                  const std::vector<TripType>& types, double t_step,
                                  double speed_kmh) {
  if (!(t_step > 0.0) || !std::isfinite(t_step)) {
    throw Error(Errc::InvalidStep, "t_step must be positive");
  }
  DiscretizedRide out;
  out.t_step = t_step;
  const std::size_t n = trips.size();
  if (n < 2) return out;
  if (times.size() != n || types.size() + 1 != n) {
    throw Error(Errc::ValidationError, "trip arrays have inconsistent lengths");
  }
  auto emit = [&](const GeoPoint& p, Timestamp t, TripType type) {
    out.rides.push_back(p);
    out.times.push_back(t);
    out.types.push_back(type);
  };

  std::size_t i = 0;
  Timestamp t_prev = times[0];
  Timestamp t_next = times[1];
  auto k = static_cast<long long>(std::floor(t_prev / t_step));
  if (static_cast<double>(k) * t_step == t_prev) emit(trips[0], t_prev, types[0]);
  while (true) {
    while (static_cast<double>(k + 1) * t_step <= t_next) {
      ++k;
      const Timestamp tau = static_cast<double>(k) * t_step;
      emit(position_between(trips[i], trips[i + 1], t_prev, tau, speed_kmh), tau, types[i]);
    }
    ++i;
    while (i < n - 1 && static_cast<double>(k + 1) * t_step > times[i + 1]) ++i;
    if (i >= n - 1) break;
    t_prev = times[i];
    t_next = times[i + 1];
  }
  return out;
}

inline DiscretizedRide discretize(const AmbulanceState& s, double t_step, double speed_kmh) {
  return discretize(s.trips, s.times, s.types, t_step, speed_kmh);
}

/// Replaces every moving segment whose duration equals its street route time
/// by the street polyline, so that interpolation runs between consecutive
/// street nodes. Other segments are kept as they are.
inline AmbulanceState expand_on_streets(const AmbulanceState& s, const Router& router) {
  if (!router.has_graph() || s.types.empty()) return s;
  AmbulanceState out = s;
  out.trips = {s.trips.front()};
  out.times = {s.times.front()};
  out.types.clear();
  out.targets.clear();
  for (std::size_t i = 0; i < s.types.size(); ++i) {
    const Duration span = s.times[i + 1] - s.times[i];
    bool expanded = false;
    if (is_moving(s.types[i]) && !(s.trips[i] == s.trips[i + 1])) {
      try {
        const auto line = router.polyline(s.trips[i], s.trips[i + 1]);
        const auto offsets = router.polyline_offsets(s.trips[i], s.trips[i + 1]);
        if (line.size() > 2 && std::abs(offsets.back() - span) <= 1e-6) {
          for (std::size_t k = 1; k < line.size(); ++k) {
            out.trips.push_back(line[k]);
            out.times.push_back(k + 1 == line.size() ? s.times[i + 1] : s.times[i] + offsets[k]);
            out.types.push_back(s.types[i]);
            out.targets.push_back(s.targets.empty() ? -1 : s.targets[i]);
          }
          expanded = true;
        }
      } catch (const Error& e) {
        if (e.code() != Errc::Unreachable) throw;
      }
    }
    if (!expanded) {
      out.trips.push_back(s.trips[i + 1]);
      out.times.push_back(s.times[i + 1]);
      out.types.push_back(s.types[i]);
      out.targets.push_back(s.targets.empty() ? -1 : s.targets[i]);
    }
  }
  return out;
}

}  // namespace ems
