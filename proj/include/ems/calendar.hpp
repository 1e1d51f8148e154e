#pragma once

#include <cmath>
#include <cstdint>

#include "ems/geo.hpp"

namespace ems {

// Calendar arithmetic on UTC epoch seconds shifted by a fixed offset.

inline std::int64_t local_day(Timestamp t, double utc_offset_s = 0) {
  return static_cast<std::int64_t>(std::floor((t + utc_offset_s) / 86400.0));
}

/// 0 = Monday; 1970-01-01 was a Thursday.
inline int weekday_of_day(std::int64_t day) { return static_cast<int>(((day + 3) % 7 + 7) % 7); }

inline Timestamp day_start_utc(std::int64_t day, double utc_offset_s = 0) {
  return static_cast<double>(day) * 86400.0 - utc_offset_s;
}

inline int weekday(Timestamp t, double utc_offset_s = 0) { return weekday_of_day(local_day(t, utc_offset_s)); }

inline double seconds_of_day(Timestamp t, double utc_offset_s = 0) {
  return t - day_start_utc(local_day(t, utc_offset_s), utc_offset_s);
}

}  // namespace ems
