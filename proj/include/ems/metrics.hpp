#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "ems/calendar.hpp"
#include "ems/error.hpp"
#include "ems/sim.hpp"
#include "ems/stats.hpp"

namespace ems {

enum class MetricKind { Raw, Penalized };

constexpr std::string_view to_string(MetricKind k) { return k == MetricKind::Raw ? "raw" : "penalized"; }

inline MetricKind parse_metric_kind(std::string_view s) {
  if (s == "raw") return MetricKind::Raw;
  if (s == "penalized") return MetricKind::Penalized;
  throw Error(Errc::InvalidFilter, "unknown metric kind '" + std::string(s) + "'");
}

/// Selection over served calls by local call time and priority.
struct MetricFilter {
  std::uint8_t days = 0x7f;        // bit d = weekday d, 0 = Monday
  int start_min = 0, end_min = 1440;  // intraday window, multiples of 30
  MetricKind kind = MetricKind::Raw;
  std::uint8_t priorities = 0x7;   // bit p = Priority p
  double utc_offset_s = 0;
  std::optional<std::array<double, 3>> theta;  // overrides the recorded weights

  void validate() const {
    if (days == 0 || days > 0x7f) throw Error(Errc::InvalidFilter, "day selection is empty");
    if (priorities == 0 || priorities > 0x7) throw Error(Errc::InvalidFilter, "priority selection is empty");
    if (start_min < 0 || end_min > 1440 || start_min >= end_min || start_min % 30 != 0 || end_min % 30 != 0)
      throw Error(Errc::InvalidFilter, "time range must be a nonempty span of 30-minute slots");
    if (theta)
      for (double v : *theta)
        if (!(v >= 0)) throw Error(Errc::InvalidFilter, "theta must be nonnegative");
  }

  bool accepts(const CallRecord& r) const {
    if (!r.served) return false;
    if (!((days >> weekday(r.t_c, utc_offset_s)) & 1)) return false;
    if (!((priorities >> static_cast<int>(r.priority)) & 1)) return false;
    const double sec = seconds_of_day(r.t_c, utc_offset_s);
    return sec >= start_min * 60.0 && sec < end_min * 60.0;
  }

  double value(const CallRecord& r) const {
    if (kind == MetricKind::Raw) return r.waiting_on_scene;
    if (theta) return (*theta)[static_cast<std::size_t>(r.priority)] * r.waiting_on_scene;
    return r.waiting_on_scene_penalized;
  }
};

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != ' ') {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
  }
  out.push_back(cur);
  return out;
}

inline int parse_small_int(const std::string& s, int lo, int hi, const char* what) {
  if (s.empty() || s.size() > 4 || !std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
    throw Error(Errc::InvalidFilter, fmt::format("bad {} '{}'", what, s));
  const int v = std::stoi(s);
  if (v < lo || v > hi) throw Error(Errc::InvalidFilter, fmt::format("{} {} out of range", what, v));
  return v;
}

// minutes from `HH:MM` or a plain minute count
inline int parse_minute(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) return parse_small_int(s, 0, 1440, "minute");
  const int h = parse_small_int(s.substr(0, colon), 0, 24, "hour");
  const int m = parse_small_int(s.substr(colon + 1), 0, 59, "minute");
  if (h * 60 + m > 1440) throw Error(Errc::InvalidFilter, "time past 24:00");
  return h * 60 + m;
}

}  // namespace detail

/// `all` or a comma list of weekday numbers (0 = Monday) or names (`mon`..`sun`).
inline std::uint8_t parse_day_mask(std::string_view s) {
  static constexpr std::array<std::string_view, 7> names{"mon", "tue", "wed", "thu", "fri", "sat", "sun"};
  if (s.empty() || s == "all") return 0x7f;
  std::uint8_t mask = 0;
  for (const auto& d : detail::split_list(s)) {
    const auto it = std::find(names.begin(), names.end(), std::string_view(d).substr(0, 3));
    const int day = it != names.end() && d.size() >= 3 ? static_cast<int>(it - names.begin())
                                                       : detail::parse_small_int(d, 0, 6, "weekday");
    mask |= static_cast<std::uint8_t>(1u << day);
  }
  return mask;
}

/// `all` or a comma list of priority numbers or names.
inline std::uint8_t parse_priority_mask(std::string_view s) {
  if (s.empty() || s == "all") return 0x7;
  std::uint8_t mask = 0;
  for (const auto& p : detail::split_list(s)) {
    try {
      mask |= static_cast<std::uint8_t>(1u << static_cast<int>(parse_priority(p)));
    } catch (const Error&) {
      throw Error(Errc::InvalidFilter, "unknown priority '" + p + "'");
    }
  }
  return mask;
}

/// `start-end` in minutes or `HH:MM-HH:MM`; empty selects the whole day.
inline std::pair<int, int> parse_minute_range(std::string_view s) {
  if (s.empty() || s == "all") return {0, 1440};
  const std::string str(s);
  const auto dash = str.find('-');
  if (dash == std::string::npos) throw Error(Errc::InvalidFilter, "time range needs start-end");
  return {detail::parse_minute(str.substr(0, dash)), detail::parse_minute(str.substr(dash + 1))};
}

/// Metric values of the records passing the filter, in record order.
inline std::vector<double> metric_values(const std::vector<CallRecord>& records, const MetricFilter& f) {
  f.validate();
  std::vector<double> out;
  for (const auto& r : records)
    if (f.accepts(r)) out.push_back(f.value(r));
  return out;
}

inline std::vector<double> metric_values(const std::vector<SimOutput>& outputs, const MetricFilter& f) {
  std::vector<double> out;
  for (const auto& o : outputs) {
    const auto v = metric_values(o.records, f);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

struct DistSummary {
  double min = 0, max = 0, mean = 0, q90 = 0;
  std::size_t n = 0;
};

inline DistSummary summarize_values(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::EmptySelection, "no records match the filter");
  std::sort(v.begin(), v.end());
  DistSummary s;
  s.n = v.size();
  s.min = v.front();
  s.max = v.back();
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  s.mean = std::clamp(s.mean, s.min, s.max);  // rounding can drift past the extremes
  s.q90 = v[nearest_rank_index(0.9, v.size())];
  return s;
}

inline DistSummary summarize(const std::vector<CallRecord>& records, const MetricFilter& f) {
  return summarize_values(metric_values(records, f));
}

struct EcdfPoint {
  double value = 0, fraction = 0;
};

/// Right-continuous step function, one point per distinct value.
inline std::vector<EcdfPoint> ecdf_values(std::vector<double> v) {
  if (v.empty()) throw Error(Errc::EmptySelection, "no records match the filter");
  std::sort(v.begin(), v.end());
  std::vector<EcdfPoint> out;
  const double n = static_cast<double>(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k + 1 < v.size() && v[k + 1] == v[k]) continue;
    out.push_back({v[k], static_cast<double>(k + 1) / n});
  }
  return out;
}

inline std::vector<EcdfPoint> ecdf(const std::vector<CallRecord>& records, const MetricFilter& f) {
  return ecdf_values(metric_values(records, f));
}

/// F(x) from ecdf points.
inline double ecdf_at(const std::vector<EcdfPoint>& pts, double x) {
  auto it = std::upper_bound(pts.begin(), pts.end(), x, [](double v, const EcdfPoint& p) { return v < p.value; });
  return it == pts.begin() ? 0.0 : std::prev(it)->fraction;
}

struct Histogram {
  std::vector<double> edges;  // bins + 1 entries
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max]; each bin is [lo, hi) except the last, which is closed.
inline Histogram histogram_values(const std::vector<double>& v, int bins) {
  if (bins < 1) throw Error(Errc::ValidationError, "histogram needs at least one bin");
  if (v.empty()) throw Error(Errc::EmptySelection, "no records match the filter");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it, width = (hi - lo) / bins;
  Histogram h;
  for (int k = 0; k <= bins; ++k) h.edges.push_back(k == bins ? hi : lo + width * k);
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  for (double x : v) {
    int k = width > 0 ? static_cast<int>(std::floor((x - lo) / width)) : 0;
    k = std::clamp(k, 0, bins - 1);
    while (k + 1 < bins && x >= h.edges[static_cast<std::size_t>(k) + 1]) ++k;
    while (k > 0 && x < h.edges[static_cast<std::size_t>(k)]) --k;
    ++h.counts[static_cast<std::size_t>(k)];
  }
  return h;
}

inline Histogram histogram(const std::vector<CallRecord>& records, const MetricFilter& f, int bins) {
  return histogram_values(metric_values(records, f), bins);
}

struct SummaryRow {
  std::string policy;
  MetricKind metric = MetricKind::Raw;
  DistSummary summary;
};

/// One row per policy, pooling scenarios; with per_scenario each (policy,
/// scenario) pair gets its own row labelled `<policy>#<scenario>`.
inline std::vector<SummaryRow> summary_table(const std::vector<SimOutput>& outputs, const MetricFilter& f,
                                             bool per_scenario = false) {
  std::vector<std::string> order;
  std::vector<std::vector<double>> values;
  for (const auto& o : outputs) {
    if (o.failed) continue;
    const std::string key = per_scenario ? o.policy + "#" + std::to_string(o.scenario) : o.policy;
    auto it = std::find(order.begin(), order.end(), key);
    if (it == order.end()) {
      order.push_back(key);
      values.emplace_back();
      it = order.end() - 1;
    }
    const auto v = metric_values(o.records, f);
    auto& dst = values[static_cast<std::size_t>(it - order.begin())];
    dst.insert(dst.end(), v.begin(), v.end());
  }
  std::vector<SummaryRow> rows;
  for (std::size_t k = 0; k < order.size(); ++k)
    if (!values[k].empty()) rows.push_back({order[k], f.kind, summarize_values(values[k])});
  if (rows.empty()) throw Error(Errc::EmptySelection, "no records match the filter");
  return rows;
}

inline void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "policy,metric,min,mean,q90,max,n\n";
  for (const auto& r : rows)
    out << fmt::format("{},{},{},{},{},{},{}\n", r.policy, to_string(r.metric), r.summary.min, r.summary.mean,
                       r.summary.q90, r.summary.max, r.summary.n);
}

}  // namespace ems
