#pragma once

// Calls, ambulances, trip records and the small taxonomies they use.

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ems/error.hpp"
#include "ems/geo.hpp"

namespace ems {

using CallId = std::int64_t;

/// Sentinel for t_b while an ambulance is neither at nor heading to a base.
inline constexpr Timestamp kFarFuture = std::numeric_limits<double>::infinity();

enum class Priority { Low = 0, Intermediate = 1, High = 2 };

constexpr std::string_view to_string(Priority p) {
  switch (p) {
    case Priority::Low: return "low";
    case Priority::Intermediate: return "intermediate";
    case Priority::High: return "high";
  }
  return "low";
}

inline Priority parse_priority(std::string_view s) {
  if (s == "low" || s == "0") return Priority::Low;
  if (s == "intermediate" || s == "1") return Priority::Intermediate;
  if (s == "high" || s == "2") return Priority::High;
  throw Error(Errc::ParseError, "unknown priority '" + std::string(s) + "'");
}

inline constexpr double default_theta(Priority p) {
  switch (p) {
    case Priority::Low: return 1.0;
    case Priority::Intermediate: return 2.0;
    case Priority::High: return 4.0;
  }
  return 1.0;
}

struct CallType {
  int id = 0;
  std::string label;
  Priority priority = Priority::Low;
  double theta = 1.0;
  int required_rank = 0;  // least ambulance rank that incurs no mismatch penalty
};

struct AmbulanceType {
  int id = 0;
  std::string label = "BLS";
  int rank = 0;  // higher is more advanced
};

enum class ServiceClass { C1 = 1, C2 = 2, C3 = 3, C4 = 4 };

constexpr bool needs_hospital(ServiceClass c) { return c == ServiceClass::C1 || c == ServiceClass::C2; }
constexpr bool needs_cleaning(ServiceClass c) { return c == ServiceClass::C1 || c == ServiceClass::C3; }

constexpr std::string_view to_string(ServiceClass c) {
  switch (c) {
    case ServiceClass::C1: return "C1";
    case ServiceClass::C2: return "C2";
    case ServiceClass::C3: return "C3";
    case ServiceClass::C4: return "C4";
  }
  return "C1";
}

inline ServiceClass parse_service_class(std::string_view s) {
  if (s == "C1" || s == "1") return ServiceClass::C1;
  if (s == "C2" || s == "2") return ServiceClass::C2;
  if (s == "C3" || s == "3") return ServiceClass::C3;
  if (s == "C4" || s == "4") return ServiceClass::C4;
  throw Error(Errc::ParseError, "unknown service class '" + std::string(s) + "'");
}

enum class TripType : int {
  AtStation = 1,
  ToScene = 2,
  OnScene = 3,
  ToHospital = 4,
  AtHospital = 5,
  ToCleaning = 6,
  Cleaning = 7,
  ToStation = 8,
};

constexpr int code(TripType t) { return static_cast<int>(t); }

inline TripType trip_type_from_code(int c) {
  if (c < 1 || c > 8) throw Error(Errc::ParseError, "trip type out of range: " + std::to_string(c));
  return static_cast<TripType>(c);
}

constexpr bool is_moving(TripType t) {
  return t == TripType::ToScene || t == TripType::ToHospital || t == TripType::ToCleaning ||
         t == TripType::ToStation;
}

/// Legs of a service in order, starting with the trip to the scene.
inline std::vector<TripType> service_legs(ServiceClass c) {
  std::vector<TripType> legs{TripType::ToScene, TripType::OnScene};
  if (needs_hospital(c)) {
    legs.push_back(TripType::ToHospital);
    legs.push_back(TripType::AtHospital);
  }
  if (needs_cleaning(c)) {
    legs.push_back(TripType::ToCleaning);
    legs.push_back(TripType::Cleaning);
  }
  return legs;
}

struct EmergencyCall {
  CallId id = 0;
  Timestamp t_c = 0.0;
  GeoPoint loc;
  int type_id = 0;
  Priority priority = Priority::Low;
  ServiceClass service_class = ServiceClass::C4;
  std::optional<Duration> time_on_scene;
  std::optional<GeoPoint> hospital;
  int hospital_index = -1;
  std::optional<Duration> time_at_hospital;
  std::optional<GeoPoint> cleaning_station;
  int cleaning_index = -1;
  std::optional<Duration> cleaning_time;
  std::optional<GeoPoint> base_after;
};

/// Checks the field presence rules of a call whose service has been fully
/// specified. Returns an empty string when consistent.
inline std::string check_materialized(const EmergencyCall& c) {
  if (!c.time_on_scene) return "missing time on scene";
  if (*c.time_on_scene < 0) return "negative time on scene";
  const bool h = c.hospital.has_value() && c.time_at_hospital.has_value();
  const bool hany = c.hospital.has_value() || c.time_at_hospital.has_value();
  if (needs_hospital(c.service_class) != h || (hany && !h)) return "hospital fields do not match class";
  const bool k = c.cleaning_station.has_value() && c.cleaning_time.has_value();
  const bool kany = c.cleaning_station.has_value() || c.cleaning_time.has_value();
  if (needs_cleaning(c.service_class) != k || (kany && !k)) return "cleaning fields do not match class";
  if (c.time_at_hospital && *c.time_at_hospital < 0) return "negative time at hospital";
  if (c.cleaning_time && *c.cleaning_time < 0) return "negative cleaning time";
  return {};
}

struct AmbulanceState {
  int id = 0;
  AmbulanceType type;
  Timestamp t_f = 0.0;
  GeoPoint loc_f;
  Timestamp t_b = 0.0;
  GeoPoint loc_b;
  int station_b = -1;  // index of the base at loc_b, -1 when unknown
  std::optional<GeoPoint> home_base;
  int home_station = -1;

  std::vector<GeoPoint> trips;
  std::vector<Timestamp> times;
  std::vector<TripType> types;
  std::vector<std::int64_t> targets;  // per segment: call id, hospital, cleaning or station index

  /// Ambulance idle at `station` since `t`.
  static AmbulanceState at_station(int id, AmbulanceType type, const GeoPoint& station,
                                   int station_index, Timestamp t) {
    AmbulanceState s;
    s.id = id;
    s.type = std::move(type);
    s.t_f = t;
    s.loc_f = station;
    s.t_b = t;
    s.loc_b = station;
    s.station_b = station_index;
    s.home_base = station;
    s.home_station = station_index;
    s.trips = {station};
    s.times = {t};
    return s;
  }
};

enum class Availability { AtStation, EnRouteToStation, Busy };

constexpr std::string_view to_string(Availability a) {
  switch (a) {
    case Availability::AtStation: return "at_station";
    case Availability::EnRouteToStation: return "en_route_to_station";
    case Availability::Busy: return "busy";
  }
  return "busy";
}

inline Availability availability(const AmbulanceState& s, Timestamp now) {
  if (s.t_b <= now) return Availability::AtStation;
  if (now < s.t_f) return Availability::Busy;
  return Availability::EnRouteToStation;
}

struct TripViolation {
  std::size_t index = 0;  // offending segment (or node for time checks)
  std::string message;
};

namespace detail {

inline bool allowed_after(TripType prev, TripType next) {
  using T = TripType;
  switch (prev) {
    case T::AtStation: return next == T::ToScene;
    case T::ToScene: return next == T::OnScene;
    case T::OnScene:
      return next == T::ToHospital || next == T::ToCleaning || next == T::ToStation ||
             next == T::AtStation || next == T::ToScene;
    case T::ToHospital: return next == T::AtHospital;
    case T::AtHospital:
      return next == T::ToCleaning || next == T::ToStation || next == T::AtStation ||
             next == T::ToScene;
    case T::ToCleaning: return next == T::Cleaning;
    case T::Cleaning: return next == T::ToStation || next == T::AtStation || next == T::ToScene;
    case T::ToStation: return next == T::AtStation || next == T::ToScene;
  }
  return false;
}

}  // namespace detail

/// Validates array lengths, time order and the trip-type automaton. The
/// returned list holds at most the first violation found; empty means ok.
inline std::vector<TripViolation> validate_trip_sequence(const AmbulanceState& s) {
  std::vector<TripViolation> out;
  if (s.trips.empty() && s.times.empty() && s.types.empty()) return out;
  if (s.times.size() != s.trips.size()) {
    out.push_back({0, "times and trips differ in length"});
    return out;
  }
  if (s.types.size() + 1 != s.trips.size()) {
    out.push_back({0, "types must have one entry fewer than trips"});
    return out;
  }
  for (std::size_t i = 1; i < s.times.size(); ++i) {
    if (!(s.times[i] >= s.times[i - 1])) {
      out.push_back({i, "times decrease"});
      return out;
    }
  }
  for (std::size_t i = 0; i < s.types.size(); ++i) {
    const int c = code(s.types[i]);
    if (c < 1 || c > 8) {
      out.push_back({i, "unknown trip type"});
      return out;
    }
    if (i == 0) {
      if (s.types[0] != TripType::AtStation && s.types[0] != TripType::ToScene &&
          s.types[0] != TripType::ToStation) {
        out.push_back({0, "history must start idle, en route to a scene or to a station"});
        return out;
      }
    } else if (!detail::allowed_after(s.types[i - 1], s.types[i])) {
      out.push_back({i, "type " + std::to_string(code(s.types[i])) + " cannot follow type " +
                            std::to_string(code(s.types[i - 1]))});
      return out;
    }
  }
  return out;
}

}  // namespace ems
