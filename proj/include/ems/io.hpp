#pragma once

// Plain-text formats: calls, EMS data templates, trajectories, response
// times and raw trip histories. Numbers are written in shortest round-trip
// form, fields are single-space delimited and every writer has a reader.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ems/domain.hpp"
#include "ems/error.hpp"
#include "ems/sim.hpp"

namespace ems {

inline std::string format_number(double v) { return fmt::format("{}", v); }

namespace detail {

// Splits non-empty, non-comment lines into whitespace tokens.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      raw_ = line;
      tokens.clear();
      std::istringstream ss(line);
      for (std::string t; ss >> t;) tokens.push_back(t);
      return true;
    }
    return false;
  }

  int line() const { return line_no_; }
  const std::string& raw() const { return raw_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw Error(Errc::ParseError, fmt::format("line {}: {}", line_no_, what));
  }

  double number(const std::string& tok) const {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      fail("expected a number, got '" + tok + "'");
    }
    if (used != tok.size()) fail("expected a number, got '" + tok + "'");
    return v;
  }

  std::int64_t integer(const std::string& tok) const {
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      fail("expected an integer, got '" + tok + "'");
    }
    if (used != tok.size()) fail("expected an integer, got '" + tok + "'");
    return v;
  }

  GeoPoint point(const std::string& lat, const std::string& lon) const {
    const GeoPoint p{number(lat), number(lon)};
    if (!is_valid(p)) fail("coordinates out of range");
    return p;
  }

 private:
  std::istream& in_;
  int line_no_ = 0;
  std::string raw_;
};

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(Errc::IoError, "cannot open " + p.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write " + p.string());
  return out;
}

inline void check_written(std::ostream& out, const std::filesystem::path& p) {
  out.flush();
  if (!out) throw Error(Errc::IoError, "write failed for " + p.string());
}

template <class T, class Writer>
void write_file(const std::filesystem::path& p, const T& value, Writer w) {
  auto out = open_out(p);
  w(out, value);
  check_written(out, p);
}

}  // namespace detail

// ---------------------------------------------------------------- calls

/// `scenario_id call_id epoch lat lon type_id priority service_class`, sorted
/// by scenario then time; equal times keep their input order.
inline void write_calls(std::ostream& out, const std::vector<std::vector<EmergencyCall>>& scenarios) {
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    std::vector<const EmergencyCall*> order;
    for (const auto& c : scenarios[s]) order.push_back(&c);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->t_c < b->t_c; });
    for (const auto* c : order)
      out << fmt::format("{} {} {} {} {} {} {} {}\n", s, c->id, c->t_c, c->loc.lat, c->loc.lon, c->type_id,
                         static_cast<int>(c->priority), to_string(c->service_class));
  }
}

inline std::vector<std::vector<EmergencyCall>> read_calls(std::istream& in) {
  std::vector<std::vector<EmergencyCall>> out;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  while (r.next(tok)) {
    if (tok.size() != 8) r.fail("expected 8 fields");
    const auto s = r.integer(tok[0]);
    if (s < 0) r.fail("negative scenario id");
    EmergencyCall c;
    c.id = r.integer(tok[1]);
    c.t_c = r.number(tok[2]);
    c.loc = r.point(tok[3], tok[4]);
    c.type_id = static_cast<int>(r.integer(tok[5]));
    try {
      c.priority = parse_priority(tok[6]);
      c.service_class = parse_service_class(tok[7]);
    } catch (const Error& e) {
      r.fail(e.what());
    }
    if (static_cast<std::size_t>(s) >= out.size()) out.resize(static_cast<std::size_t>(s) + 1);
    out[static_cast<std::size_t>(s)].push_back(c);
  }
  return out;
}

inline void write_calls_file(const std::filesystem::path& p, const std::vector<std::vector<EmergencyCall>>& s) {
  detail::write_file(p, s, [](std::ostream& o, const auto& v) { write_calls(o, v); });
}

inline std::vector<std::vector<EmergencyCall>> read_calls_file(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  return read_calls(in);
}

// ------------------------------------------------------------ templates

/// Station, hospital or cleaning-station row: `<id> <lat> <lon> [name]`.
struct Site {
  int id = 0;
  GeoPoint loc;
  std::string name;
};

inline void write_sites(std::ostream& out, const std::vector<Site>& sites) {
  for (const auto& s : sites) {
    out << fmt::format("{} {} {}", s.id, s.loc.lat, s.loc.lon);
    if (!s.name.empty()) out << ' ' << s.name;
    out << '\n';
  }
}

inline std::vector<Site> read_sites(std::istream& in) {
  std::vector<Site> out;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  while (r.next(tok)) {
    if (tok.size() < 3) r.fail("expected <id> <lat> <lon> [name]");
    Site s;
    s.id = static_cast<int>(r.integer(tok[0]));
    s.loc = r.point(tok[1], tok[2]);
    for (std::size_t k = 3; k < tok.size(); ++k) s.name += (k > 3 ? " " : "") + tok[k];
    for (const auto& o : out)
      if (o.id == s.id) r.fail("duplicate id " + std::to_string(s.id));
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Site> read_sites_file(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  return read_sites(in);
}

inline std::vector<GeoPoint> locations(const std::vector<Site>& sites) {
  std::vector<GeoPoint> out;
  for (const auto& s : sites) out.push_back(s.loc);
  return out;
}

/// Ambulance row: `<id> <lat> <lon> <type_id> <type_label> <rank> [home_station_id]`.
/// The ambulance starts at the station nearest to (lat, lon).
struct AmbulanceRow {
  int id = 0;
  GeoPoint loc;
  AmbulanceType type;
  int home_station = -1;  // station id, -1 = initial station
};

inline void write_ambulances(std::ostream& out, const std::vector<AmbulanceRow>& rows) {
  for (const auto& a : rows) {
    out << fmt::format("{} {} {} {} {} {}", a.id, a.loc.lat, a.loc.lon, a.type.id, a.type.label, a.type.rank);
    if (a.home_station >= 0) out << ' ' << a.home_station;
    out << '\n';
  }
}

inline std::vector<AmbulanceRow> read_ambulances(std::istream& in) {
  std::vector<AmbulanceRow> out;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  while (r.next(tok)) {
    if (tok.size() != 6 && tok.size() != 7) r.fail("expected <id> <lat> <lon> <type_id> <label> <rank> [home]");
    AmbulanceRow a;
    a.id = static_cast<int>(r.integer(tok[0]));
    a.loc = r.point(tok[1], tok[2]);
    a.type.id = static_cast<int>(r.integer(tok[3]));
    a.type.label = tok[4];
    a.type.rank = static_cast<int>(r.integer(tok[5]));
    if (tok.size() == 7) {
      a.home_station = static_cast<int>(r.integer(tok[6]));
      if (a.home_station < 0) r.fail("negative home station id");
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline std::vector<AmbulanceRow> read_ambulances_file(const std::filesystem::path& p) {
  auto in = detail::open_in(p);
  return read_ambulances(in);
}

// --------------------------------------------------------- trajectories

struct TrajectoryCall {
  CallId id = -1;
  GeoPoint loc;
  Priority priority = Priority::Low;
};

struct TrajectoryAmbulance {
  int id = 0;
  TripType type = TripType::AtStation;
  GeoPoint loc;
  std::int64_t dest = -1;  // call id, hospital, cleaning or station index per ride type
};

/// One line of a trajectory file:
/// `epoch n_calls [id lat lon priority]... n_amb [id type lat lon dest]...`.
struct TrajectoryLine {
  Timestamp time = 0;
  std::vector<TrajectoryCall> calls;
  std::vector<TrajectoryAmbulance> ambulances;
};

/// Every node time, call time and the window ends, clipped to the window.
inline std::vector<Timestamp> event_times(const SimOutput& out) {
  std::vector<Timestamp> t{out.start, out.end};
  for (const auto& s : out.fleet) t.insert(t.end(), s.times.begin(), s.times.end());
  for (const auto& r : out.records) t.push_back(r.t_c);
  t.erase(std::remove_if(t.begin(), t.end(), [&](Timestamp x) { return !(x >= out.start && x <= out.end); }),
          t.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());
  return t;
}

inline std::vector<TrajectoryLine> trajectory_lines(const SimOutput& out) {
  std::vector<TrajectoryLine> lines;
  for (Timestamp t : event_times(out)) {
    const Snapshot snap = snapshot(out, t);
    TrajectoryLine l;
    l.time = t;
    for (const auto& c : snap.calls) l.calls.push_back({c.call, c.loc, c.priority});
    for (const auto& a : snap.ambulances) l.ambulances.push_back({a.amb, a.type, a.position, a.target});
    lines.push_back(std::move(l));
  }
  return lines;
}

inline void write_trajectory_lines(std::ostream& out, const std::vector<TrajectoryLine>& lines) {
  for (const auto& l : lines) {
    out << fmt::format("{} {}", l.time, l.calls.size());
    for (const auto& c : l.calls)
      out << fmt::format(" {} {} {} {}", c.id, c.loc.lat, c.loc.lon, static_cast<int>(c.priority));
    out << fmt::format(" {}", l.ambulances.size());
    for (const auto& a : l.ambulances)
      out << fmt::format(" {} {} {} {} {}", a.id, code(a.type), a.loc.lat, a.loc.lon, a.dest);
    out << '\n';
  }
}

inline std::vector<TrajectoryLine> read_trajectory_lines(std::istream& in) {
  std::vector<TrajectoryLine> out;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  while (r.next(tok)) {
    std::size_t k = 0;
    auto take = [&]() -> const std::string& {
      if (k >= tok.size()) r.fail("line ends early");
      return tok[k++];
    };
    TrajectoryLine l;
    l.time = r.number(take());
    const auto nc = r.integer(take());
    if (nc < 0) r.fail("negative call count");
    for (std::int64_t j = 0; j < nc; ++j) {
      TrajectoryCall c;
      c.id = r.integer(take());
      const auto& lat = take();
      c.loc = r.point(lat, take());
      const auto p = r.integer(take());
      if (p < 0 || p > 2) r.fail("priority out of range");
      c.priority = static_cast<Priority>(p);
      l.calls.push_back(c);
    }
    const auto na = r.integer(take());
    if (na < 0) r.fail("negative ambulance count");
    for (std::int64_t j = 0; j < na; ++j) {
      TrajectoryAmbulance a;
      a.id = static_cast<int>(r.integer(take()));
      try {
        a.type = trip_type_from_code(static_cast<int>(r.integer(take())));
      } catch (const Error& e) {
        r.fail(e.what());
      }
      const auto& lat = take();
      a.loc = r.point(lat, take());
      a.dest = r.integer(take());
      l.ambulances.push_back(a);
    }
    if (k != tok.size()) r.fail("trailing fields");
    out.push_back(std::move(l));
  }
  return out;
}

// ------------------------------------------------------- response times

/// `call_id epoch response_time allocation_cost amb`; unserved calls carry
/// `inf inf -1`.
struct ResponseRow {
  CallId call = -1;
  Timestamp t_c = 0;
  Duration response = kInf;
  double cost = kInf;
  int amb = -1;
};

inline std::vector<ResponseRow> response_rows(const SimOutput& out) {
  std::vector<ResponseRow> rows;
  for (const auto& r : out.records) {
    if (r.served) rows.push_back({r.call, r.t_c, r.waiting_on_scene, r.allocation_cost, r.amb});
    else rows.push_back({r.call, r.t_c, kInf, kInf, -1});
  }
  return rows;
}

inline void write_response_rows(std::ostream& out, const std::vector<ResponseRow>& rows) {
  for (const auto& r : rows) out << fmt::format("{} {} {} {} {}\n", r.call, r.t_c, r.response, r.cost, r.amb);
}

inline std::vector<ResponseRow> read_response_rows(std::istream& in) {
  std::vector<ResponseRow> out;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  while (r.next(tok)) {
    if (tok.size() != 5) r.fail("expected 5 fields");
    out.push_back({r.integer(tok[0]), r.number(tok[1]), r.number(tok[2]), r.number(tok[3]),
                   static_cast<int>(r.integer(tok[4]))});
  }
  return out;
}

// -------------------------------------------------------- trip histories

/// One node per line: `amb epoch lat lon type target`, where type and target
/// describe the segment leaving the node; the last node of each ambulance
/// has type 0 and target -1.
inline void write_histories(std::ostream& out, const std::vector<AmbulanceState>& fleet) {
  for (const auto& s : fleet)
    for (std::size_t k = 0; k < s.trips.size(); ++k) {
      const bool seg = k < s.types.size();
      out << fmt::format("{} {} {} {} {} {}\n", s.id, s.times[k], s.trips[k].lat, s.trips[k].lon,
                         seg ? code(s.types[k]) : 0, seg && k < s.targets.size() ? s.targets[k] : -1);
    }
}

inline std::vector<AmbulanceState> read_histories(std::istream& in) {
  std::vector<AmbulanceState> out;
  std::vector<bool> closed;
  detail::LineReader r(in);
  std::vector<std::string> tok;
  while (r.next(tok)) {
    if (tok.size() != 6) r.fail("expected 6 fields");
    const int id = static_cast<int>(r.integer(tok[0]));
    if (out.empty() || out.back().id != id) {
      if (!out.empty() && !closed.back()) r.fail("history of ambulance " + std::to_string(out.back().id) + " is cut");
      for (const auto& s : out)
        if (s.id == id) r.fail("ambulance " + std::to_string(id) + " appears twice");
      out.emplace_back();
      out.back().id = id;
      closed.push_back(false);
    }
    auto& s = out.back();
    if (closed.back()) r.fail("node after the last segment of ambulance " + std::to_string(id));
    s.times.push_back(r.number(tok[1]));
    s.trips.push_back(r.point(tok[2], tok[3]));
    const auto type = r.integer(tok[4]);
    if (type == 0) {
      closed.back() = true;
      continue;
    }
    try {
      s.types.push_back(trip_type_from_code(static_cast<int>(type)));
    } catch (const Error& e) {
      r.fail(e.what());
    }
    s.targets.push_back(r.integer(tok[5]));
  }
  if (!out.empty() && !closed.back()) throw Error(Errc::ParseError, "last history is cut");
  for (auto& s : out) {
    s.t_f = s.times.back();
    s.loc_f = s.trips.back();
  }
  return out;
}

// ------------------------------------------------------------ run files

inline std::string trajectory_file_name(int scenario, const std::string& h) {
  return fmt::format("output_scenarios_{}_{}", scenario, h);
}
inline std::string response_file_name(int scenario, const std::string& h) {
  return fmt::format("response_times_{}_{}", scenario, h);
}
inline std::string history_file_name(int scenario, const std::string& h) {
  return fmt::format("trips_{}_{}", scenario, h);
}
inline std::string trace_file_name(int scenario, const std::string& h, int amb) {
  return fmt::format("trace_{}_{}_{}", scenario, h, amb);
}

inline std::filesystem::path write_trajectories(const SimOutput& out, const std::filesystem::path& folder) {
  const auto p = folder / trajectory_file_name(out.scenario, out.policy);
  detail::write_file(p, trajectory_lines(out), [](std::ostream& o, const auto& v) { write_trajectory_lines(o, v); });
  return p;
}

inline std::filesystem::path write_response_times(const SimOutput& out, const std::filesystem::path& folder) {
  const auto p = folder / response_file_name(out.scenario, out.policy);
  detail::write_file(p, response_rows(out), [](std::ostream& o, const auto& v) { write_response_rows(o, v); });
  return p;
}

inline std::filesystem::path write_history_file(const SimOutput& out, const std::filesystem::path& folder) {
  const auto p = folder / history_file_name(out.scenario, out.policy);
  detail::write_file(p, out.fleet, [](std::ostream& o, const auto& v) { write_histories(o, v); });
  return p;
}

}  // namespace ems
