#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ems/calendar.hpp"
#include "ems/domain.hpp"
#include "ems/error.hpp"
#include "ems/stats.hpp"

namespace ems {

// ---------------------------------------------------------------- space

/// Lat/lon box, closed on the min edges and open on the max edges.
struct BoundingBox {
  double min_lat = 0, min_lon = 0, max_lat = 0, max_lon = 0;

  bool contains(GeoPoint g) const {
    return g.lat >= min_lat && g.lat < max_lat && g.lon >= min_lon && g.lon < max_lon;
  }
  bool degenerate() const {
    return !(std::isfinite(min_lat) && std::isfinite(max_lat) && std::isfinite(min_lon) &&
             std::isfinite(max_lon)) ||
           !(min_lat < max_lat) || !(min_lon < max_lon) || min_lat < -90 || max_lat > 90;
  }
};

struct Zone {
  int id = 0;
  std::vector<GeoPoint> ring;  // open ring, first vertex not repeated
  BoundingBox box;
};

enum class PartitionKind { Rect, Custom };

struct SpacePartition {
  PartitionKind kind = PartitionKind::Rect;
  BoundingBox bbox;
  int nx = 1, ny = 1;
  std::vector<Zone> zones;

  int size() const { return static_cast<int>(zones.size()); }
};

inline constexpr int kOutside = -1;

namespace detail {

inline double rect_edge(double lo, double hi, int k, int n) {
  return k == n ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n);
}

// cell index along one axis, consistent with rect_edge at the boundaries
inline int rect_cell(double v, double lo, double hi, int n) {
  int k = static_cast<int>(std::floor((v - lo) / (hi - lo) * n));
  k = std::clamp(k, 0, n - 1);
  while (k + 1 < n && v >= rect_edge(lo, hi, k + 1, n)) ++k;
  while (k > 0 && v < rect_edge(lo, hi, k, n)) --k;
  return k;
}

inline bool in_polygon(const std::vector<GeoPoint>& ring, GeoPoint p) {
  bool inside = false;
  for (std::size_t a = 0, b = ring.size() - 1; a < ring.size(); b = a++) {
    const GeoPoint u = ring[a], v = ring[b];
    if ((u.lat > p.lat) != (v.lat > p.lat)) {
      const double x = (v.lon - u.lon) * (p.lat - u.lat) / (v.lat - u.lat) + u.lon;
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

inline BoundingBox ring_box(const std::vector<GeoPoint>& ring) {
  BoundingBox b{90, 180, -90, -180};
  for (const auto& p : ring) {
    b.min_lat = std::min(b.min_lat, p.lat);
    b.max_lat = std::max(b.max_lat, p.lat);
    b.min_lon = std::min(b.min_lon, p.lon);
    b.max_lon = std::max(b.max_lon, p.lon);
  }
  return b;
}

}  // namespace detail

/// nx by ny equal lat/lon rectangles, row-major ids (row = latitude band).
inline SpacePartition build_rect_partition(const BoundingBox& bbox, int nx, int ny) {
  if (bbox.degenerate()) throw Error(Errc::InvalidRegion, "degenerate bounding box");
  if (nx < 1 || ny < 1) throw Error(Errc::InvalidRegion, "grid needs at least one cell per axis");
  SpacePartition sp;
  sp.kind = PartitionKind::Rect;
  sp.bbox = bbox;
  sp.nx = nx;
  sp.ny = ny;
  for (int j = 0; j < ny; ++j) {
    const double la0 = detail::rect_edge(bbox.min_lat, bbox.max_lat, j, ny);
    const double la1 = detail::rect_edge(bbox.min_lat, bbox.max_lat, j + 1, ny);
    for (int i = 0; i < nx; ++i) {
      const double lo0 = detail::rect_edge(bbox.min_lon, bbox.max_lon, i, nx);
      const double lo1 = detail::rect_edge(bbox.min_lon, bbox.max_lon, i + 1, nx);
      Zone z;
      z.id = j * nx + i;
      z.ring = {{la0, lo0}, {la0, lo1}, {la1, lo1}, {la1, lo0}};
      z.box = {la0, lo0, la1, lo1};
      sp.zones.push_back(std::move(z));
    }
  }
  return sp;
}

/// Polygons given directly; ids must be dense 0..n-1.
inline SpacePartition build_custom_partition(std::vector<Zone> zones) {
  if (zones.empty()) throw Error(Errc::InvalidRegion, "custom partition has no zones");
  std::sort(zones.begin(), zones.end(), [](const Zone& a, const Zone& b) { return a.id < b.id; });
  SpacePartition sp;
  sp.kind = PartitionKind::Custom;
  sp.bbox = {90, 180, -90, -180};
  for (std::size_t k = 0; k < zones.size(); ++k) {
    auto& z = zones[k];
    if (z.id != static_cast<int>(k)) throw Error(Errc::ValidationError, "zone ids must be dense from 0");
    if (!z.ring.empty() && z.ring.front() == z.ring.back()) z.ring.pop_back();
    if (z.ring.size() < 3) throw Error(Errc::InvalidRegion, "zone " + std::to_string(z.id) + " has fewer than 3 vertices");
    z.box = detail::ring_box(z.ring);
    if (z.box.degenerate()) throw Error(Errc::InvalidRegion, "zone " + std::to_string(z.id) + " is degenerate");
    sp.bbox.min_lat = std::min(sp.bbox.min_lat, z.box.min_lat);
    sp.bbox.max_lat = std::max(sp.bbox.max_lat, z.box.max_lat);
    sp.bbox.min_lon = std::min(sp.bbox.min_lon, z.box.min_lon);
    sp.bbox.max_lon = std::max(sp.bbox.max_lon, z.box.max_lon);
  }
  sp.zones = std::move(zones);
  return sp;
}

/// Reads `<zone_id>; lat,lon lat,lon ...` lines. Blank lines and `#` comments are skipped.
inline SpacePartition load_partition(std::istream& in) {
  std::vector<Zone> zones;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto semi = line.find(';');
    auto fail = [&](const std::string& why) {
      return Error(Errc::ParseError, "line " + std::to_string(lineno) + ": " + why);
    };
    if (semi == std::string::npos) throw fail("missing ';' after zone id");
    Zone z;
    try {
      std::size_t used = 0;
      z.id = std::stoi(line.substr(0, semi), &used);
    } catch (const std::exception&) {
      throw fail("bad zone id");
    }
    std::istringstream rest(line.substr(semi + 1));
    std::string tok;
    while (rest >> tok) {
      const auto comma = tok.find(',');
      if (comma == std::string::npos) throw fail("vertex '" + tok + "' is not lat,lon");
      try {
        z.ring.push_back({std::stod(tok.substr(0, comma)), std::stod(tok.substr(comma + 1))});
      } catch (const std::exception&) {
        throw fail("vertex '" + tok + "' is not numeric");
      }
    }
    zones.push_back(std::move(z));
  }
  return build_custom_partition(std::move(zones));
}

inline SpacePartition load_partition_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open " + path);
  return load_partition(in);
}

/// Zone containing g, or kOutside.
inline int locate(const SpacePartition& sp, GeoPoint g) {
  if (sp.kind == PartitionKind::Rect) {
    if (!sp.bbox.contains(g)) return kOutside;
    const int i = detail::rect_cell(g.lon, sp.bbox.min_lon, sp.bbox.max_lon, sp.nx);
    const int j = detail::rect_cell(g.lat, sp.bbox.min_lat, sp.bbox.max_lat, sp.ny);
    return j * sp.nx + i;
  }
  for (const auto& z : sp.zones) {
    if (g.lat < z.box.min_lat || g.lat > z.box.max_lat || g.lon < z.box.min_lon || g.lon > z.box.max_lon)
      continue;
    if (detail::in_polygon(z.ring, g)) return z.id;
  }
  return kOutside;
}

// ----------------------------------------------------------------- time

/// Weekly window; bit d of `days` is set for day d (0 = Monday).
struct TimeWindow {
  std::uint8_t days = 0x7f;
  int start_min = 0;
  int end_min = 30;

  double hours() const { return (end_min - start_min) / 60.0; }
  bool on(int weekday) const { return (days >> weekday) & 1; }
};

struct TimePartition {
  std::vector<TimeWindow> windows;
  double utc_offset_s = 0;  // local time = UTC + offset

  int size() const { return static_cast<int>(windows.size()); }
  double duration_h(int t) const { return windows.at(static_cast<std::size_t>(t)).hours(); }
};

inline void validate(const TimePartition& tp) {
  if (tp.windows.empty()) throw Error(Errc::ValidationError, "time partition has no windows");
  for (const auto& w : tp.windows) {
    if (w.start_min < 0 || w.end_min > 1440 || w.start_min >= w.end_min || w.days == 0 || w.days > 0x7f)
      throw Error(Errc::ValidationError, "time window must lie inside one day with positive length");
  }
  for (int d = 0; d < 7; ++d) {
    std::vector<std::pair<int, int>> spans;
    for (const auto& w : tp.windows)
      if (w.on(d)) spans.emplace_back(w.start_min, w.end_min);
    std::sort(spans.begin(), spans.end());
    for (std::size_t k = 1; k < spans.size(); ++k)
      if (spans[k].first < spans[k - 1].second) throw Error(Errc::ValidationError, "time windows overlap");
  }
}

/// Slots of `minutes` covering each day. With by_weekday the slots are
/// repeated per weekday, otherwise one slot spans all seven days.
inline TimePartition make_daily_windows(int minutes, bool by_weekday = false, double utc_offset_s = 0) {
  if (minutes <= 0 || 1440 % minutes != 0)
    throw Error(Errc::ValidationError, "window length must divide a day");
  TimePartition tp;
  tp.utc_offset_s = utc_offset_s;
  const int slots = 1440 / minutes;
  if (by_weekday) {
    for (int d = 0; d < 7; ++d)
      for (int s = 0; s < slots; ++s)
        tp.windows.push_back({static_cast<std::uint8_t>(1u << d), s * minutes, (s + 1) * minutes});
  } else {
    for (int s = 0; s < slots; ++s) tp.windows.push_back({0x7f, s * minutes, (s + 1) * minutes});
  }
  return tp;
}

namespace detail {

inline std::int64_t local_day(const TimePartition& tp, Timestamp t) { return ems::local_day(t, tp.utc_offset_s); }

inline Timestamp day_start_utc(const TimePartition& tp, std::int64_t day) {
  return ems::day_start_utc(day, tp.utc_offset_s);
}

}  // namespace detail

/// Window containing t, or -1.
inline int locate_time(const TimePartition& tp, Timestamp t) {
  const auto day = detail::local_day(tp, t);
  const int wd = weekday_of_day(day);
  const double sec = t - detail::day_start_utc(tp, day);
  for (int k = 0; k < tp.size(); ++k) {
    const auto& w = tp.windows[static_cast<std::size_t>(k)];
    if (w.on(wd) && sec >= w.start_min * 60.0 && sec < w.end_min * 60.0) return k;
  }
  return -1;
}

struct WindowOccurrence {
  int window = 0;
  Timestamp start = 0, end = 0;
};

/// Calendar occurrences lying entirely inside [from, to), ordered by start.
inline std::vector<WindowOccurrence> occurrences(const TimePartition& tp, Timestamp from, Timestamp to) {
  std::vector<WindowOccurrence> out;
  if (!(to > from)) return out;
  for (auto day = detail::local_day(tp, from), last = detail::local_day(tp, to); day <= last; ++day) {
    const int wd = weekday_of_day(day);
    const Timestamp base = detail::day_start_utc(tp, day);
    for (int k = 0; k < tp.size(); ++k) {
      const auto& w = tp.windows[static_cast<std::size_t>(k)];
      if (!w.on(wd)) continue;
      const WindowOccurrence o{k, base + w.start_min * 60.0, base + w.end_min * 60.0};
      if (o.start >= from && o.end <= to) out.push_back(o);
    }
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.start < b.start; });
  return out;
}

// ---------------------------------------------------------- observations

/// Counts indexed (c, i, t); c follows the order of `types`.
struct ObservationCube {
  int C = 0, I = 0, T = 0;
  std::vector<int> types;
  std::vector<double> N, M;
  std::size_t rejected = 0;

  std::size_t idx(int c, int i, int t) const {
    return (static_cast<std::size_t>(c) * I + static_cast<std::size_t>(i)) * T + static_cast<std::size_t>(t);
  }
  std::size_t cells() const { return static_cast<std::size_t>(C) * I * T; }

  static ObservationCube zeros(std::vector<int> types, int I, int T) {
    ObservationCube o;
    o.C = static_cast<int>(types.size());
    o.I = I;
    o.T = T;
    o.types = std::move(types);
    o.N.assign(o.cells(), 0.0);
    o.M.assign(o.cells(), 0.0);
    return o;
  }
};

/// N counts the calendar occurrences of each window inside [from, to);
/// calls outside the span, the partition, any window or `types` are tallied in `rejected`.
inline ObservationCube aggregate(const std::vector<EmergencyCall>& calls, const SpacePartition& sp,
                                 const TimePartition& tp, const std::vector<int>& types, Timestamp from,
                                 Timestamp to) {
  validate(tp);
  if (types.empty()) throw Error(Errc::ValidationError, "no call types to aggregate");
  auto obs = ObservationCube::zeros(types, sp.size(), tp.size());
  std::vector<double> per_window(static_cast<std::size_t>(tp.size()), 0.0);
  for (const auto& o : occurrences(tp, from, to)) per_window[static_cast<std::size_t>(o.window)] += 1;
  for (int c = 0; c < obs.C; ++c)
    for (int i = 0; i < obs.I; ++i)
      for (int t = 0; t < obs.T; ++t) obs.N[obs.idx(c, i, t)] = per_window[static_cast<std::size_t>(t)];
  std::map<int, int> type_index;
  for (int c = 0; c < obs.C; ++c) type_index.emplace(types[static_cast<std::size_t>(c)], c);
  for (const auto& call : calls) {
    const auto ct = type_index.find(call.type_id);
    const int zone = locate(sp, call.loc);
    const int t = locate_time(tp, call.t_c);
    bool counted = ct != type_index.end() && zone != kOutside && t >= 0 && call.t_c >= from && call.t_c < to;
    if (counted) {
      // the window occurrence itself must lie inside the span
      const auto day = detail::local_day(tp, call.t_c);
      const auto& w = tp.windows[static_cast<std::size_t>(t)];
      const Timestamp s = detail::day_start_utc(tp, day) + w.start_min * 60.0;
      const Timestamp e = detail::day_start_utc(tp, day) + w.end_min * 60.0;
      counted = s >= from && e <= to;
    }
    if (counted) obs.M[obs.idx(ct->second, zone, t)] += 1;
    else ++obs.rejected;
  }
  return obs;
}

// ------------------------------------------------------------ estimation

/// Rates per hour indexed like the observation cube.
struct IntensityModel {
  int C = 0, I = 0, T = 0;
  std::vector<int> types;
  std::vector<double> lambda;
  std::vector<bool> flagged;  // no observation behind the value

  std::size_t idx(int c, int i, int t) const {
    return (static_cast<std::size_t>(c) * I + static_cast<std::size_t>(i)) * T + static_cast<std::size_t>(t);
  }
  double at(int c, int i, int t) const { return lambda[idx(c, i, t)]; }
};

namespace detail {

inline void check_dims(const ObservationCube& obs, const TimePartition& tp) {
  if (obs.T != tp.size()) throw Error(Errc::ValidationError, "cube and time partition disagree on window count");
  if (obs.N.size() != obs.cells() || obs.M.size() != obs.cells())
    throw Error(Errc::ValidationError, "cube arrays have the wrong size");
}

inline IntensityModel empty_model(const ObservationCube& obs) {
  IntensityModel m;
  m.C = obs.C;
  m.I = obs.I;
  m.T = obs.T;
  m.types = obs.types;
  m.lambda.assign(obs.cells(), 0.0);
  m.flagged.assign(obs.cells(), false);
  return m;
}

}  // namespace detail

/// Poisson negative log-likelihood of per-hour rates, constants dropped.
inline double neg_log_likelihood(const ObservationCube& obs, const TimePartition& tp,
                                 const std::vector<double>& lambda) {
  detail::check_dims(obs, tp);
  double f = 0;
  for (int c = 0; c < obs.C; ++c)
    for (int i = 0; i < obs.I; ++i)
      for (int t = 0; t < obs.T; ++t) {
        const auto k = obs.idx(c, i, t);
        const double l = lambda[k];
        if (obs.M[k] > 0) {
          if (!(l > 0)) return std::numeric_limits<double>::infinity();
          f -= obs.M[k] * std::log(l);
        }
        f += obs.N[k] * l * tp.duration_h(t);
      }
  return f;
}

/// Closed-form MLE M / (N D_t); cells with N = 0 are set to 0 and flagged.
inline IntensityModel fit_no_covariates(const ObservationCube& obs, const TimePartition& tp) {
  detail::check_dims(obs, tp);
  auto m = detail::empty_model(obs);
  for (int c = 0; c < obs.C; ++c)
    for (int i = 0; i < obs.I; ++i)
      for (int t = 0; t < obs.T; ++t) {
        const auto k = obs.idx(c, i, t);
        if (obs.N[k] > 0) m.lambda[k] = obs.M[k] / (obs.N[k] * tp.duration_h(t));
        else m.flagged[k] = true;
      }
  return m;
}

struct SolverOptions {
  int max_iter = 10000;
  double rel_tol = 1e-12;
  double pg_tol = 1e-12;
};

struct SolverResult {
  std::vector<double> x;
  double objective = 0;
  double start_objective = 0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double inf_norm(const std::vector<double>& a) {
  double s = 0;
  for (double v : a) s = std::max(s, std::abs(v));
  return s;
}

/// Projected gradient with Barzilai-Borwein steps and Armijo backtracking.
inline SolverResult projected_gradient(
    std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
    const std::function<std::vector<double>(const std::vector<double>&)>& grad,
    const std::function<std::vector<double>(const std::vector<double>&)>& proj, const SolverOptions& opt) {
  const std::size_t n = x.size();
  x = proj(x);
  double fx = f(x);
  SolverResult r;
  r.start_objective = fx;
  if (!std::isfinite(fx)) throw Error(Errc::Infeasible, "objective undefined at the starting point");
  auto g = grad(x);
  double step = 1.0 / std::max(1.0, inf_norm(g));
  std::vector<double> trial(n), d(n), xn(n);
  for (int it = 1; it <= opt.max_iter; ++it) {
    r.iterations = it;
    for (std::size_t k = 0; k < n; ++k) trial[k] = x[k] - g[k];
    auto pg = proj(trial);
    for (std::size_t k = 0; k < n; ++k) pg[k] -= x[k];
    if (inf_norm(pg) <= opt.pg_tol * (1.0 + inf_norm(x))) {
      r.converged = true;
      break;
    }
    for (std::size_t k = 0; k < n; ++k) trial[k] = x[k] - step * g[k];
    const auto p = proj(trial);
    for (std::size_t k = 0; k < n; ++k) d[k] = p[k] - x[k];
    const double slope = dot(g, d);
    double t = 1.0, fn = 0;
    for (;;) {
      for (std::size_t k = 0; k < n; ++k) xn[k] = x[k] + t * d[k];
      fn = f(xn);
      if (std::isfinite(fn) && fn <= fx + 1e-4 * t * slope) break;
      t *= 0.5;
      if (t < 1e-20) break;
    }
    if (t < 1e-20 || slope >= 0) {
      r.converged = true;  // no descent left at working precision
      break;
    }
    const auto gn = grad(xn);
    double ss = 0, sy = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = xn[k] - x[k], y = gn[k] - g[k];
      ss += s * s;
      sy += s * y;
    }
    step = sy > 0 ? std::clamp(ss / sy, 1e-12, 1e12) : std::min(1e12, step * 10);
    const double decrease = fx - fn;
    x = xn;
    g = gn;
    fx = fn;
    if (decrease <= opt.rel_tol * std::max(std::abs(fx), 1e-300)) {
      r.converged = true;
      break;
    }
  }
  r.x = std::move(x);
  r.objective = fx;
  return r;
}

}  // namespace detail

/// Quadratic similarity penalties with fixed weights. A time group G with
/// weight W adds W/2 N_t N_t' (l_t - l_t')^2 for every ordered pair in G;
/// a zone pair (i, j, w) adds w/2 N_i N_j (l_i - l_j)^2 for every c and t.
struct Smoothing {
  struct ZonePair {
    int i = 0, j = 0;
    double w = 0;
  };
  std::vector<std::vector<int>> time_groups;
  std::vector<double> group_weights;
  std::vector<ZonePair> zone_pairs;
};

namespace detail {

inline double smoothing_value(const ObservationCube& obs, const Smoothing& sm, const std::vector<double>& l,
                              std::vector<double>* grad) {
  double f = 0;
  auto pair = [&](std::size_t a, std::size_t b, double w) {
    const double nn = w * obs.N[a] * obs.N[b], diff = l[a] - l[b];
    f += 0.5 * nn * diff * diff;
    if (grad) {
      (*grad)[a] += nn * diff;
      (*grad)[b] -= nn * diff;
    }
  };
  for (int c = 0; c < obs.C; ++c) {
    for (int i = 0; i < obs.I; ++i)
      for (std::size_t g = 0; g < sm.time_groups.size(); ++g)
        for (int t : sm.time_groups[g])
          for (int u : sm.time_groups[g]) pair(obs.idx(c, i, t), obs.idx(c, i, u), sm.group_weights[g]);
    for (const auto& zp : sm.zone_pairs)
      for (int t = 0; t < obs.T; ++t) pair(obs.idx(c, zp.i, t), obs.idx(c, zp.j, t), zp.w);
  }
  return f;
}

}  // namespace detail

/// Regularized MLE over rates >= 0, solved by projected gradient from the closed form.
inline IntensityModel fit_smoothed(const ObservationCube& obs, const TimePartition& tp, const Smoothing& sm,
                                   const SolverOptions& opt = {}, SolverResult* info = nullptr) {
  detail::check_dims(obs, tp);
  if (sm.group_weights.size() != sm.time_groups.size())
    throw Error(Errc::ValidationError, "one weight per time group required");
  for (const auto& g : sm.time_groups)
    for (int t : g)
      if (t < 0 || t >= obs.T) throw Error(Errc::ValidationError, "time group refers to an unknown window");
  for (double w : sm.group_weights)
    if (!(w >= 0)) throw Error(Errc::ValidationError, "similarity weights must be nonnegative");
  for (const auto& zp : sm.zone_pairs)
    if (zp.i < 0 || zp.j < 0 || zp.i >= obs.I || zp.j >= obs.I || !(zp.w >= 0))
      throw Error(Errc::ValidationError, "bad zone pair");

  auto model = fit_no_covariates(obs, tp);
  std::vector<double> floor(obs.cells(), 0.0);
  for (std::size_t k = 0; k < floor.size(); ++k)
    if (obs.M[k] > 0) floor[k] = 1e-12;
  auto f = [&](const std::vector<double>& l) {
    return neg_log_likelihood(obs, tp, l) + detail::smoothing_value(obs, sm, l, nullptr);
  };
  auto grad = [&](const std::vector<double>& l) {
    std::vector<double> g(l.size(), 0.0);
    for (int c = 0; c < obs.C; ++c)
      for (int i = 0; i < obs.I; ++i)
        for (int t = 0; t < obs.T; ++t) {
          const auto k = obs.idx(c, i, t);
          g[k] = obs.N[k] * tp.duration_h(t) - (obs.M[k] > 0 ? obs.M[k] / l[k] : 0.0);
        }
    detail::smoothing_value(obs, sm, l, &g);
    return g;
  };
  auto proj = [&](std::vector<double> l) {
    for (std::size_t k = 0; k < l.size(); ++k) l[k] = std::max(l[k], floor[k]);
    return l;
  };
  auto r = detail::projected_gradient(model.lambda, f, grad, proj, opt);
  model.lambda = r.x;
  for (std::size_t k = 0; k < model.lambda.size(); ++k)
    if (obs.N[k] == 0) model.lambda[k] = 0;  // unconstrained by data
  if (info) *info = std::move(r);
  return model;
}

/// Covariates indexed (cell, k) with cells ordered like the observation cube.
struct CovariateCube {
  int K = 0;
  std::vector<double> values;

  double at(std::size_t cell, int k) const { return values[cell * static_cast<std::size_t>(K) + static_cast<std::size_t>(k)]; }
};

struct CovariateOptions {
  double epsilon = 1e-6;
  std::vector<double> lower, upper;  // per-coefficient bounds, empty = unbounded
  std::vector<double> beta0;         // starting point, projected before use
  SolverOptions solver;
  int projection_sweeps = 2000;
};

struct CovariateFit {
  std::vector<double> beta;
  double objective = 0;
  double start_objective = 0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

struct Halfspace {
  std::vector<double> a;
  double b;  // a.x >= b
  double aa;
};

// Dykstra's alternating projection onto the halfspaces and the box.
inline std::vector<double> dykstra(const std::vector<double>& z, const std::vector<Halfspace>& hs,
                                   const std::vector<double>& lo, const std::vector<double>& hi, int sweeps) {
  const std::size_t n = z.size();
  auto feasible = [&](const std::vector<double>& x) {
    for (std::size_t k = 0; k < n; ++k)
      if (x[k] < lo[k] || x[k] > hi[k]) return false;
    for (const auto& h : hs)
      if (dot(h.a, x) < h.b) return false;
    return true;
  };
  if (feasible(z)) return z;
  std::vector<double> x = z;
  std::vector<std::vector<double>> inc(hs.size() + 1, std::vector<double>(n, 0.0));
  std::vector<double> y(n), prev(n);
  for (int s = 0; s < sweeps; ++s) {
    prev = x;
    for (std::size_t m = 0; m < hs.size(); ++m) {
      for (std::size_t k = 0; k < n; ++k) y[k] = x[k] + inc[m][k];
      const double v = dot(hs[m].a, y);
      x = y;
      if (v < hs[m].b) {
        const double s2 = (hs[m].b - v) / hs[m].aa;
        for (std::size_t k = 0; k < n; ++k) x[k] += s2 * hs[m].a[k];
      }
      for (std::size_t k = 0; k < n; ++k) inc[m][k] = y[k] - x[k];
    }
    auto& ib = inc.back();
    for (std::size_t k = 0; k < n; ++k) {
      y[k] = x[k] + ib[k];
      x[k] = std::clamp(y[k], lo[k], hi[k]);
      ib[k] = y[k] - x[k];
    }
    double change = 0;
    for (std::size_t k = 0; k < n; ++k) change = std::max(change, std::abs(x[k] - prev[k]));
    if (change <= 1e-15 * (1.0 + inf_norm(x))) break;
  }
  return x;
}

}  // namespace detail

/// Poisson negative log-likelihood of the linear model beta.x = expected count per window.
inline double covariate_objective(const ObservationCube& obs, const CovariateCube& x,
                                  const std::vector<double>& beta) {
  double f = 0;
  for (std::size_t cell = 0; cell < obs.cells(); ++cell) {
    if (obs.N[cell] <= 0) continue;
    double mu = 0;
    for (int k = 0; k < x.K; ++k) mu += beta[static_cast<std::size_t>(k)] * x.at(cell, k);
    if (obs.M[cell] > 0) {
      if (!(mu > 0)) return std::numeric_limits<double>::infinity();
      f -= obs.M[cell] * std::log(mu);
    }
    f += obs.N[cell] * mu;
  }
  return f;
}

inline std::vector<double> covariate_gradient(const ObservationCube& obs, const CovariateCube& x,
                                              const std::vector<double>& beta) {
  std::vector<double> g(static_cast<std::size_t>(x.K), 0.0);
  for (std::size_t cell = 0; cell < obs.cells(); ++cell) {
    if (obs.N[cell] <= 0) continue;
    double mu = 0;
    for (int k = 0; k < x.K; ++k) mu += beta[static_cast<std::size_t>(k)] * x.at(cell, k);
    const double w = obs.N[cell] - (obs.M[cell] > 0 ? obs.M[cell] / mu : 0.0);
    for (int k = 0; k < x.K; ++k) g[static_cast<std::size_t>(k)] += w * x.at(cell, k);
  }
  return g;
}

/// Constrained MLE of beta subject to beta.x >= epsilon on every observed cell
/// and optional box bounds. Throws Infeasible when no such beta exists; a run
/// that hits the iteration cap returns the last iterate with converged = false.
inline CovariateFit fit_covariates(const ObservationCube& obs, const CovariateCube& x,
                                   const CovariateOptions& opt = {}) {
  if (x.K < 1) throw Error(Errc::ValidationError, "at least one covariate required");
  if (x.values.size() != obs.cells() * static_cast<std::size_t>(x.K))
    throw Error(Errc::ValidationError, "covariate cube has the wrong size");
  for (double v : x.values)
    if (!std::isfinite(v)) throw Error(Errc::ValidationError, "covariates must be finite");
  const auto K = static_cast<std::size_t>(x.K);
  std::vector<double> lo = opt.lower.empty() ? std::vector<double>(K, -std::numeric_limits<double>::infinity()) : opt.lower;
  std::vector<double> hi = opt.upper.empty() ? std::vector<double>(K, std::numeric_limits<double>::infinity()) : opt.upper;
  if (lo.size() != K || hi.size() != K) throw Error(Errc::ValidationError, "bounds need one entry per covariate");
  for (std::size_t k = 0; k < K; ++k)
    if (lo[k] > hi[k]) throw Error(Errc::Infeasible, "empty coefficient bounds");

  // one halfspace per distinct observed covariate row
  std::vector<detail::Halfspace> hs;
  std::map<std::vector<double>, bool> seen;
  double sum_m = 0, sum_nx = 0;
  for (std::size_t cell = 0; cell < obs.cells(); ++cell) {
    if (obs.N[cell] <= 0) continue;
    std::vector<double> a(K);
    for (std::size_t k = 0; k < K; ++k) a[k] = x.at(cell, static_cast<int>(k));
    const double aa = detail::dot(a, a);
    if (aa == 0) throw Error(Errc::Infeasible, "an observed cell has all covariates zero");
    sum_m += obs.M[cell];
    for (double v : a) sum_nx += obs.N[cell] * v;
    if (seen.emplace(a, true).second) hs.push_back({std::move(a), opt.epsilon, aa});
  }
  if (hs.empty()) throw Error(Errc::ValidationError, "no observed cells");

  std::vector<double> start = opt.beta0;
  if (start.empty()) start.assign(K, sum_nx > 0 && sum_m > 0 ? sum_m / sum_nx : 1.0);
  if (start.size() != K) throw Error(Errc::ValidationError, "beta0 needs one entry per covariate");
  auto proj = [&](const std::vector<double>& z) { return detail::dykstra(z, hs, lo, hi, opt.projection_sweeps); };
  start = proj(start);
  for (const auto& h : hs)
    if (detail::dot(h.a, start) < h.b * (1 - 1e-6)) throw Error(Errc::Infeasible, "constraints admit no coefficient vector");
  for (std::size_t k = 0; k < K; ++k)
    if (start[k] < lo[k] - 1e-9 || start[k] > hi[k] + 1e-9) throw Error(Errc::Infeasible, "constraints admit no coefficient vector");

  auto f = [&](const std::vector<double>& b) { return covariate_objective(obs, x, b); };
  auto g = [&](const std::vector<double>& b) { return covariate_gradient(obs, x, b); };
  const auto r = detail::projected_gradient(start, f, g, proj, opt.solver);
  return {r.x, r.objective, r.start_objective, r.iterations, r.converged};
}

/// Per-hour rates implied by a covariate fit; negative values are clamped to 0 and flagged.
inline IntensityModel to_intensity(const CovariateFit& fit, const ObservationCube& obs, const CovariateCube& x,
                                   const TimePartition& tp) {
  detail::check_dims(obs, tp);
  auto m = detail::empty_model(obs);
  for (int c = 0; c < obs.C; ++c)
    for (int i = 0; i < obs.I; ++i)
      for (int t = 0; t < obs.T; ++t) {
        const auto cell = obs.idx(c, i, t);
        double mu = 0;
        for (int k = 0; k < x.K; ++k) mu += fit.beta[static_cast<std::size_t>(k)] * x.at(cell, k);
        if (mu < 0) {
          mu = 0;
          m.flagged[cell] = true;
        }
        m.lambda[cell] = mu / tp.duration_h(t);
      }
  return m;
}

// ------------------------------------------------------------ generation

struct GenerationOptions {
  std::map<int, CallType> call_types;                       // priority lookup by type id
  std::array<double, 4> class_probs{0.25, 0.25, 0.25, 0.25};  // C1..C4
  int threads = 1;
};

/// Uniform point inside a zone: direct for rectangles, rejection otherwise.
template <class Rng>
GeoPoint sample_in_zone(const SpacePartition& sp, const Zone& z, Rng& rng) {
  std::uniform_real_distribution<double> ula(z.box.min_lat, z.box.max_lat), ulo(z.box.min_lon, z.box.max_lon);
  for (int attempt = 0; attempt < 100000; ++attempt) {
    const GeoPoint p{ula(rng), ulo(rng)};
    if (locate(sp, p) == z.id) return p;
  }
  throw Error(Errc::InvalidRegion, "could not sample inside zone " + std::to_string(z.id));
}

inline std::mt19937_64 path_rng(std::uint64_t seed, std::uint64_t path) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(path), static_cast<std::uint32_t>(path >> 32), 0x9e3779b9u};
  return std::mt19937_64(seq);
}

/// One Poisson(lambda D_t) count per cell and window occurrence in [from, to);
/// call ids run 1..n per path in time order.
inline std::vector<std::vector<EmergencyCall>> generate_sample_paths(const IntensityModel& m, const SpacePartition& sp,
                                                                     const TimePartition& tp, Timestamp from,
                                                                     Timestamp to, int n_paths, std::uint64_t seed,
                                                                     const GenerationOptions& opt = {}) {
  if (m.T != tp.size() || m.I != sp.size()) throw Error(Errc::ValidationError, "model does not match the partitions");
  for (double l : m.lambda)
    if (!(l >= 0) || !std::isfinite(l)) throw Error(Errc::ValidationError, "intensities must be finite and nonnegative");
  if (n_paths < 0) throw Error(Errc::ValidationError, "negative path count");
  const auto occ = occurrences(tp, from, to);
  std::vector<std::vector<EmergencyCall>> paths(static_cast<std::size_t>(n_paths));
  auto one = [&](std::size_t p) {
    auto rng = path_rng(seed, p);
    std::discrete_distribution<int> cls(opt.class_probs.begin(), opt.class_probs.end());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto& calls = paths[p];
    for (const auto& o : occ) {
      const double hours = tp.duration_h(o.window);
      for (int c = 0; c < m.C; ++c)
        for (int i = 0; i < m.I; ++i) {
          const double mean = m.at(c, i, o.window) * hours;
          if (mean <= 0) continue;
          std::poisson_distribution<int> pois(mean);
          const int n = pois(rng);
          for (int k = 0; k < n; ++k) {
            EmergencyCall call;
            call.t_c = o.start + u(rng) * (o.end - o.start);
            call.loc = sample_in_zone(sp, sp.zones[static_cast<std::size_t>(i)], rng);
            call.type_id = m.types.empty() ? c : m.types[static_cast<std::size_t>(c)];
            const auto ct = opt.call_types.find(call.type_id);
            call.priority = ct == opt.call_types.end() ? Priority::Low : ct->second.priority;
            call.service_class = static_cast<ServiceClass>(cls(rng) + 1);
            calls.push_back(call);
          }
        }
    }
    std::stable_sort(calls.begin(), calls.end(), [](const auto& a, const auto& b) { return a.t_c < b.t_c; });
    for (std::size_t k = 0; k < calls.size(); ++k) calls[k].id = static_cast<CallId>(k + 1);
  };
  const int threads = std::max(1, std::min(opt.threads, n_paths));
  if (threads == 1) {
    for (std::size_t p = 0; p < paths.size(); ++p) one(p);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w)
      pool.emplace_back([&] {
        for (std::size_t p; (p = next++) < paths.size();) one(p);
      });
    for (auto& th : pool) th.join();
  }
  return paths;
}

/// Number of calls per bin of `bin_s` seconds starting at `from`.
inline std::vector<double> count_in_bins(const std::vector<EmergencyCall>& calls, Timestamp from, Timestamp to,
                                         double bin_s) {
  if (!(bin_s > 0)) throw Error(Errc::InvalidStep, "bin width must be positive");
  const auto bins = static_cast<std::size_t>(std::ceil((to - from) / bin_s));
  std::vector<double> out(bins, 0.0);
  for (const auto& c : calls) {
    if (c.t_c < from || c.t_c >= to) continue;
    const auto b = static_cast<std::size_t>(std::floor((c.t_c - from) / bin_s));
    if (b < bins) out[b] += 1;
  }
  return out;
}

struct PeriodSummary {
  double mean = 0, q_low = 0, q_high = 0;
};

/// counts[path][period] -> per-period mean and lower nearest-rank quantiles.
inline std::vector<PeriodSummary> path_summary(const std::vector<std::vector<double>>& counts, double q_low = 0.05,
                                               double q_high = 0.95) {
  if (counts.empty()) throw Error(Errc::EmptySelection, "no paths to summarize");
  const std::size_t periods = counts.front().size();
  for (const auto& c : counts)
    if (c.size() != periods) throw Error(Errc::ValidationError, "paths have different period counts");
  std::vector<PeriodSummary> out(periods);
  std::vector<double> col(counts.size());
  for (std::size_t t = 0; t < periods; ++t) {
    for (std::size_t p = 0; p < counts.size(); ++p) col[p] = counts[p][t];
    std::sort(col.begin(), col.end());
    out[t].mean = std::accumulate(col.begin(), col.end(), 0.0) / static_cast<double>(col.size());
    out[t].q_low = col[nearest_rank_index(q_low, col.size())];
    out[t].q_high = col[nearest_rank_index(q_high, col.size())];
  }
  return out;
}

}  // namespace ems
