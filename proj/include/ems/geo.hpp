#pragma once

// Spherical geometry on an R = 6371 km earth: coordinate conversion,
// great-circle angles and travel times, and constant-speed interpolation
// along a great circle.
//
// Degrees at the boundary, radians internally. Speeds are km/h, times and
// durations are seconds.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ems/error.hpp"

namespace ems {

using Timestamp = double;  // seconds since the Unix epoch
using Duration = double;   // seconds

inline constexpr double kEarthRadiusKm = 6371.0;
inline constexpr double kDefaultSpeedKmh = 60.0;

struct GeoPoint {
  double lat = 0.0;  // [-90, 90]
  double lon = 0.0;  // (-180, 180]

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  friend Point3 operator+(Point3 a, Point3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Point3 operator-(Point3 a, Point3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Point3 operator*(double s, Point3 a) { return {s * a.x, s * a.y, s * a.z}; }
};

struct EarthConstants {
  double radius_km = kEarthRadiusKm;
  double speed_kmh = kDefaultSpeedKmh;
};

inline bool is_valid(const GeoPoint& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon > -180.0 && p.lon <= 180.0;
}

inline double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

/// Maps any longitude in degrees into (-180, 180].
inline double normalize_longitude(double lon) {
  double l = std::fmod(lon, 360.0);
  if (l <= -180.0) l += 360.0;
  if (l > 180.0) l -= 360.0;
  return l;
}

inline Point3 to_cartesian(const GeoPoint& p) {
  const double lat = deg_to_rad(p.lat);
  const double lon = deg_to_rad(p.lon);
  return {kEarthRadiusKm * std::cos(lat) * std::cos(lon),
          kEarthRadiusKm * std::cos(lat) * std::sin(lon), kEarthRadiusKm * std::sin(lat)};
}

/// Inverse of to_cartesian. Longitude at a pole is defined as 0.
///
/// Uses the two-argument arctangent forms, which agree with
/// lat = asin(z/R), lon = +-acos(x / sqrt(R^2 - z^2)) on the sphere but keep
/// full precision near the poles and near longitude 0 / 180.
inline GeoPoint from_cartesian(const Point3& p) {
  const double r = p.norm();
  if (!(std::abs(r - kEarthRadiusKm) <= 1e-6 * kEarthRadiusKm)) {
    throw Error(Errc::OffSphere, "point at distance " + std::to_string(r) + " km from centre");
  }
  const double rho = std::hypot(p.x, p.y);
  GeoPoint g;
  g.lat = rad_to_deg(std::atan2(p.z, rho));
  if (std::abs(p.z) >= kEarthRadiusKm * (1.0 - 1e-9) || rho == 0.0) {
    g.lon = 0.0;
  } else {
    g.lon = rad_to_deg(std::atan2(p.y, p.x));
    if (g.lon <= -180.0) g.lon = 180.0;
  }
  g.lat = std::clamp(g.lat, -90.0, 90.0);
  return g;
}

inline double chord_angle(const Point3& a, const Point3& b) {
  const double half = std::min(1.0, (b - a).norm() / (2.0 * kEarthRadiusKm));
  return 2.0 * std::asin(half);
}

/// Angle at the earth's centre between a and b, in [0, pi].
inline double central_angle(const GeoPoint& a, const GeoPoint& b) {
  return chord_angle(to_cartesian(a), to_cartesian(b));
}

inline double great_circle_km(const GeoPoint& a, const GeoPoint& b) {
  return kEarthRadiusKm * central_angle(a, b);
}

/// Seconds needed to cover `km` at `speed_kmh`.
inline Duration travel_seconds(double km, double speed_kmh) {
  if (!(speed_kmh > 0.0) || !std::isfinite(speed_kmh)) {
    throw Error(Errc::InvalidSpeed, "speed must be positive, got " + std::to_string(speed_kmh));
  }
  return km * 3600.0 / speed_kmh;
}

/// Great-circle travel time. `t0` is carried for the time-dependent contract;
/// the default speed model does not depend on it.
inline Duration travel_time_gc(const GeoPoint& a, const GeoPoint& b, Timestamp /*t0*/,
                               double speed_kmh) {
  if (!(speed_kmh > 0.0)) {
    throw Error(Errc::InvalidSpeed, "speed must be positive, got " + std::to_string(speed_kmh));
  }
  return travel_seconds(great_circle_km(a, b), speed_kmh);
}

/// Point at angle alpha0 from p1 on the arc p1 -> p2:
/// OP = (sin(alpha - alpha0) OP1 + sin(alpha0) OP2) / sin(alpha).
/// alpha0 is clamped to [0, alpha].
inline Point3 arc_point(const Point3& p1, const Point3& p2, double alpha0) {
  const double alpha = chord_angle(p1, p2);
  const double sin_alpha = std::sin(alpha);
  if (sin_alpha <= 1e-12) {
    if (alpha > std::numbers::pi / 2) {
      throw Error(Errc::AmbiguousGeodesic, "endpoints are antipodal");
    }
    return p1;
  }
  alpha0 = std::clamp(alpha0, 0.0, alpha);
  return (1.0 / sin_alpha) * (std::sin(alpha - alpha0) * p1 + std::sin(alpha0) * p2);
}

/// Position at time t of a vehicle leaving a at t0 and moving at constant
/// speed along the great circle to b. Times past arrival return b.
inline GeoPoint position_between(const GeoPoint& a, const GeoPoint& b, Timestamp t0, Timestamp t,
                                 double speed_kmh) {
  if (!(speed_kmh > 0.0)) {
    throw Error(Errc::InvalidSpeed, "speed must be positive, got " + std::to_string(speed_kmh));
  }
  if (a == b) return a;
  const Point3 p1 = to_cartesian(a);
  const Point3 p2 = to_cartesian(b);
  const double alpha = chord_angle(p1, p2);
  const double sin_alpha = std::sin(alpha);
  if (sin_alpha <= 1e-12) {
    if (alpha > std::numbers::pi / 2) {
      throw Error(Errc::AmbiguousGeodesic, "endpoints are antipodal");
    }
    // Coincident up to rounding.
    return (t > t0) ? b : a;
  }
  const double travelled = speed_kmh * (t - t0) / 3600.0;
  const double alpha0 = std::clamp(travelled / kEarthRadiusKm, 0.0, alpha);
  if (alpha0 <= 0.0) return a;
  if (alpha0 >= alpha) return b;
  return from_cartesian(arc_point(p1, p2, alpha0));
}

/// Angular difference between two points in degrees of arc; handy for
/// comparing positions across the +-180 meridian.
inline double separation_deg(const GeoPoint& a, const GeoPoint& b) {
  return rad_to_deg(central_angle(a, b));
}

}  // namespace ems
