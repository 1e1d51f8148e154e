#pragma once

// Fitted intensity models on disk, and fitting/sampling from historical calls.
//
// Model file, one record per line:
//   space rect <nx> <ny> <min_lat> <min_lon> <max_lat> <max_lon>
//   space custom <zones file>
//   time <window_minutes> <by_weekday 0|1> <utc_offset_s>
//   type <type_id> <priority>
//   cell <type_id> <zone> <window> <lambda per hour> <flagged 0|1>

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ems/forecast.hpp"
#include "ems/io.hpp"

namespace ems {

struct ForecastBundle {
  IntensityModel model;
  SpacePartition space;
  TimePartition time;
  std::map<int, CallType> call_types;  // priority per type id
  std::string zones_file;              // source of a custom partition
  int window_minutes = 30;
  bool by_weekday = false;
};

struct FitSpec {
  int nx = 10, ny = 10;
  std::optional<BoundingBox> region;  // default: bounding box of the calls
  std::string zones_file;             // custom partition instead of the grid
  int window_minutes = 30;
  bool by_weekday = false;
  double utc_offset_s = 0;
  std::optional<Timestamp> from, to;  // default: whole local days covering the calls
  double time_weight = 0;             // similarity weight across the windows of a day
  double space_weight = 0;            // similarity weight between adjacent grid cells
};

struct FitReport {
  std::size_t calls = 0, rejected = 0;
  Timestamp from = 0, to = 0;
  bool converged = true;
  int iterations = 0;
};

namespace detail {

inline BoundingBox calls_box(const std::vector<EmergencyCall>& calls) {
  BoundingBox b{90, 180, -90, -180};
  for (const auto& c : calls) {
    b.min_lat = std::min(b.min_lat, c.loc.lat);
    b.max_lat = std::max(b.max_lat, c.loc.lat);
    b.min_lon = std::min(b.min_lon, c.loc.lon);
    b.max_lon = std::max(b.max_lon, c.loc.lon);
  }
  // the box is open on its max edges
  b.max_lat = std::nextafter(b.max_lat, 91.0);
  b.max_lon = std::nextafter(b.max_lon, 181.0);
  if (!(b.min_lat < b.max_lat)) b.max_lat = b.min_lat + 1e-6;
  if (!(b.min_lon < b.max_lon)) b.max_lon = b.min_lon + 1e-6;
  return b;
}

inline Smoothing smoothing_for(const FitSpec& spec, const ForecastBundle& b) {
  Smoothing sm;
  if (spec.time_weight > 0) {
    // windows sharing a weekday mask form one group
    std::map<int, std::vector<int>> groups;
    for (int t = 0; t < b.time.size(); ++t) groups[b.time.windows[static_cast<std::size_t>(t)].days].push_back(t);
    for (auto& [mask, g] : groups) {
      sm.time_groups.push_back(g);
      sm.group_weights.push_back(spec.time_weight);
    }
  }
  if (spec.space_weight > 0 && b.space.kind == PartitionKind::Rect) {
    for (int j = 0; j < b.space.ny; ++j)
      for (int i = 0; i < b.space.nx; ++i) {
        const int id = j * b.space.nx + i;
        if (i + 1 < b.space.nx) sm.zone_pairs.push_back({id, id + 1, spec.space_weight});
        if (j + 1 < b.space.ny) sm.zone_pairs.push_back({id, id + b.space.nx, spec.space_weight});
      }
  }
  return sm;
}

}  // namespace detail

/// Aggregates the calls on the requested partitions and fits the rates.
inline ForecastBundle fit_history(const std::vector<EmergencyCall>& calls, const FitSpec& spec,
                                  FitReport* report = nullptr) {
  if (calls.empty()) throw Error(Errc::EmptySelection, "no historical calls");
  ForecastBundle b;
  b.window_minutes = spec.window_minutes;
  b.by_weekday = spec.by_weekday;
  if (!spec.zones_file.empty()) {
    b.space = load_partition_file(spec.zones_file);
    b.zones_file = spec.zones_file;
  } else {
    b.space = build_rect_partition(spec.region ? *spec.region : detail::calls_box(calls), spec.nx, spec.ny);
  }
  b.time = make_daily_windows(spec.window_minutes, spec.by_weekday, spec.utc_offset_s);
  Timestamp lo = kInf, hi = -kInf;
  for (const auto& c : calls) {
    lo = std::min(lo, c.t_c);
    hi = std::max(hi, c.t_c);
    if (!b.call_types.count(c.type_id)) b.call_types[c.type_id] = CallType{c.type_id, "", c.priority, 1.0, 0};
  }
  const Timestamp from = spec.from.value_or(ems::day_start_utc(ems::local_day(lo, spec.utc_offset_s), spec.utc_offset_s));
  const Timestamp to = spec.to.value_or(ems::day_start_utc(ems::local_day(hi, spec.utc_offset_s) + 1, spec.utc_offset_s));
  std::vector<int> ids;
  for (const auto& [id, t] : b.call_types) ids.push_back(id);
  const auto obs = aggregate(calls, b.space, b.time, ids, from, to);
  FitReport rep;
  rep.calls = calls.size();
  rep.rejected = obs.rejected;
  rep.from = from;
  rep.to = to;
  const auto sm = detail::smoothing_for(spec, b);
  if (sm.time_groups.empty() && sm.zone_pairs.empty()) {
    b.model = fit_no_covariates(obs, b.time);
  } else {
    SolverResult info;
    b.model = fit_smoothed(obs, b.time, sm, {}, &info);
    rep.converged = info.converged;
    rep.iterations = info.iterations;
  }
  if (report) *report = rep;
  return b;
}

/// Sample paths over [from, to); call types keep their historical priority.
inline std::vector<std::vector<EmergencyCall>> generate_from(const ForecastBundle& b, Timestamp from, Timestamp to,
                                                             int n_paths, std::uint64_t seed,
                                                             const std::array<double, 4>& class_probs = {0.25, 0.25, 0.25, 0.25},
                                                             int threads = 1) {
  GenerationOptions opt;
  opt.call_types = b.call_types;
  opt.class_probs = class_probs;
  opt.threads = threads;
  return generate_sample_paths(b.model, b.space, b.time, from, to, n_paths, seed, opt);
}

inline void write_model(std::ostream& out, const ForecastBundle& b) {
  if (b.space.kind == PartitionKind::Rect) {
    const auto& x = b.space.bbox;
    out << fmt::format("space rect {} {} {} {} {} {}\n", b.space.nx, b.space.ny, x.min_lat, x.min_lon, x.max_lat,
                       x.max_lon);
  } else {
    if (b.zones_file.empty() || b.zones_file.find_first_of(" \t") != std::string::npos)
      throw Error(Errc::IoError, "custom partitions need a zones file path without spaces");
    out << fmt::format("space custom {}\n", b.zones_file);
  }
  out << fmt::format("time {} {} {}\n", b.window_minutes, b.by_weekday ? 1 : 0, b.time.utc_offset_s);
  for (const auto& [id, t] : b.call_types) out << fmt::format("type {} {}\n", id, static_cast<int>(t.priority));
  const auto& m = b.model;
  for (int c = 0; c < m.C; ++c)
    for (int i = 0; i < m.I; ++i)
      for (int t = 0; t < m.T; ++t) {
        const auto k = m.idx(c, i, t);
        out << fmt::format("cell {} {} {} {} {}\n", m.types[static_cast<std::size_t>(c)], b.space.zones[static_cast<std::size_t>(i)].id, t,
                           m.lambda[k], m.flagged.empty() ? 0 : static_cast<int>(m.flagged[k]));
      }
}

inline ForecastBundle read_model(std::istream& in) {
  ForecastBundle b;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  bool have_space = false, have_time = false;
  std::map<int, int> zone_index, type_index;
  while (r.next(tok)) {
    const auto& kind = tok[0];
    if (kind == "space") {
      if (tok.size() == 8 && tok[1] == "rect") {
        const BoundingBox box{r.number(tok[4]), r.number(tok[5]), r.number(tok[6]), r.number(tok[7])};
        b.space = build_rect_partition(box, static_cast<int>(r.integer(tok[2])), static_cast<int>(r.integer(tok[3])));
      } else if (tok.size() == 3 && tok[1] == "custom") {
        b.zones_file = tok[2];
        b.space = load_partition_file(tok[2]);
      } else {
        r.fail("bad space record");
      }
      have_space = true;
    } else if (kind == "time") {
      if (tok.size() != 4) r.fail("bad time record");
      b.window_minutes = static_cast<int>(r.integer(tok[1]));
      b.by_weekday = r.integer(tok[2]) != 0;
      b.time = make_daily_windows(b.window_minutes, b.by_weekday, r.number(tok[3]));
      have_time = true;
    } else if (kind == "type") {
      if (tok.size() != 3) r.fail("bad type record");
      const int id = static_cast<int>(r.integer(tok[1]));
      const auto p = r.integer(tok[2]);
      if (p < 0 || p > 2) r.fail("priority out of range");
      b.call_types[id] = CallType{id, "", static_cast<Priority>(p), 1.0, 0};
    } else if (kind == "cell") {
      if (!have_space || !have_time || b.call_types.empty()) r.fail("cell before space, time and type records");
      if (b.model.lambda.empty()) {
        auto& m = b.model;
        m.C = static_cast<int>(b.call_types.size());
        m.I = b.space.size();
        m.T = b.time.size();
        for (const auto& [id, t] : b.call_types) {
          type_index[id] = static_cast<int>(m.types.size());
          m.types.push_back(id);
        }
        for (int i = 0; i < m.I; ++i) zone_index[b.space.zones[static_cast<std::size_t>(i)].id] = i;
        m.lambda.assign(static_cast<std::size_t>(m.C) * m.I * m.T, -1.0);
        m.flagged.assign(m.lambda.size(), false);
      }
      if (tok.size() != 6) r.fail("bad cell record");
      const auto ct = type_index.find(static_cast<int>(r.integer(tok[1])));
      const auto zi = zone_index.find(static_cast<int>(r.integer(tok[2])));
      const auto t = r.integer(tok[3]);
      if (ct == type_index.end() || zi == zone_index.end() || t < 0 || t >= b.model.T) r.fail("cell out of range");
      const double lambda = r.number(tok[4]);
      if (!(lambda >= 0) || !std::isfinite(lambda)) r.fail("rate must be finite and nonnegative");
      const auto k = b.model.idx(ct->second, zi->second, static_cast<int>(t));
      b.model.lambda[k] = lambda;
      b.model.flagged[k] = r.integer(tok[5]) != 0;
    } else {
      r.fail("unknown record '" + kind + "'");
    }
  }
  if (b.model.lambda.empty()) throw Error(Errc::ParseError, "model has no cells");
  for (double l : b.model.lambda)
    if (l < 0) throw Error(Errc::ParseError, "model misses cells");
  return b;
}

inline void write_model_file(const std::filesystem::path& p, const ForecastBundle& b) {
  detail::write_file(p, b, [](std::ostream& o, const auto& v) { write_model(o, v); });
}

inline ForecastBundle read_model_file(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  return read_model(in);
}

/// Expected calls per zone over the window occurrences in [from, to) whose
/// window lies inside [start_min, end_min), for types whose priority is in `priorities`.
inline std::vector<double> expected_by_zone(const ForecastBundle& b, Timestamp from, Timestamp to, int start_min = 0,
                                            int end_min = 1440, std::uint8_t priorities = 0x7) {
  const auto& m = b.model;
  std::vector<double> out(static_cast<std::size_t>(m.I), 0.0);
  for (const auto& o : occurrences(b.time, from, to)) {
    const auto& w = b.time.windows[static_cast<std::size_t>(o.window)];
    if (w.start_min < start_min || w.end_min > end_min) continue;
    for (int c = 0; c < m.C; ++c) {
      const auto ct = b.call_types.find(m.types[static_cast<std::size_t>(c)]);
      const int p = ct == b.call_types.end() ? 0 : static_cast<int>(ct->second.priority);
      if (!((priorities >> p) & 1)) continue;
      for (int i = 0; i < m.I; ++i) out[static_cast<std::size_t>(i)] += m.at(c, i, o.window) * w.hours();
    }
  }
  return out;
}

}  // namespace ems
