#pragma once

// Run configuration: `key = value` lines with `#` comments. Values come from
// defaults, then EMS_SIM_OUTPUT (output folder only), then the file, then
// command-line overrides.

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ems/dispatch.hpp"
#include "ems/error.hpp"
#include "ems/forecast.hpp"

namespace ems {

/// Configuration failure tied to one key.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(Errc::ConfigError, key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

inline constexpr int kMaxHospitals = 9;
inline constexpr int kMaxBases = 29;

struct RunConfig {
  // counts; 0 means every entry of the corresponding file
  bool h_use_fixed_bases = false;
  int n_scenarios = 1;
  int n_hospitals = 0;
  int n_bases = 0;
  int n_ambulances = 0;
  std::string output_folder = "output";

  std::vector<std::string> policies{"CA", "BM", "NM", "GHP1", "GHP2"};
  double nm_window_s = 3600;
  std::uint64_t seed = 1;
  double speed_kmh = kDefaultSpeedKmh;
  std::array<double, 3> theta{1, 2, 4};
  double mismatch_penalty = kDefaultMismatchPenalty;
  std::map<std::pair<int, int>, double> m_matrix;
  Timestamp start = 1704067200;  // 2024-01-01 00:00 UTC
  double horizon_days = 7;
  bool clip_to_horizon = true;
  int threads = 1;

  std::string bases_file, hospitals_file, ambulances_file, cleaning_file;
  std::string graph_file;
  bool graph_undirected = false;

  std::string calls_file, history_file;
  double call_rate_per_hour = 6;
  std::optional<BoundingBox> region;
  std::array<double, 3> priority_probs{0.5, 0.3, 0.2};
  int grid_nx = 10, grid_ny = 10, window_minutes = 30;
  bool by_weekday = false;
  double utc_offset_s = 0;

  std::array<double, 4> class_probs{0.25, 0.25, 0.25, 0.25};
  double scene_median_s = 1200, scene_sigma = 0.4;
  double hospital_median_s = 1800, hospital_sigma = 0.4;
  double cleaning_median_s = 1200, cleaning_sigma = 0.3;

  std::map<std::string, std::string> sources;  // key -> "default" | "env" | "file" | "cli"
  std::vector<std::string> warnings;

  Timestamp end() const { return start + horizon_days * 86400.0; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, sep);) out.push_back(trim(part));
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "not a number: '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(x)) throw ConfigError(key, "not a finite number: '" + v + "'");
  return x;
}

inline long long to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &used);
  } catch (const std::exception&) {
    throw ConfigError(key, "not an integer: '" + v + "'");
  }
  if (used != v.size()) throw ConfigError(key, "not an integer: '" + v + "'");
  return x;
}

inline int to_count(const std::string& key, const std::string& v, int min = 0) {
  const auto x = to_int(key, v);
  if (x < min || x > 1000000) throw ConfigError(key, fmt::format("must be at least {}", min));
  return static_cast<int>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError(key, "not a boolean: '" + v + "'");
}

template <std::size_t N>
std::array<double, N> to_array(const std::string& key, const std::string& v) {
  const auto parts = split(v, ',');
  if (parts.size() != N) throw ConfigError(key, fmt::format("expected {} comma-separated numbers", N));
  std::array<double, N> out{};
  for (std::size_t k = 0; k < N; ++k) out[k] = to_double(key, parts[k]);
  return out;
}

inline double to_nonneg(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (x < 0) throw ConfigError(key, "must be nonnegative");
  return x;
}

inline double to_positive(const std::string& key, const std::string& v) {
  const double x = to_double(key, v);
  if (!(x > 0)) throw ConfigError(key, "must be positive");
  return x;
}

template <std::size_t N>
std::array<double, N> to_probs(const std::string& key, const std::string& v) {
  auto p = to_array<N>(key, v);
  double total = 0;
  for (double x : p) {
    if (x < 0) throw ConfigError(key, "probabilities must be nonnegative");
    total += x;
  }
  if (!(total > 0)) throw ConfigError(key, "probabilities sum to zero");
  return p;
}

/// Epoch seconds, `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM[:SS]` in UTC.
inline Timestamp to_timestamp(const std::string& key, const std::string& v) {
  if (v.find('-', 1) == std::string::npos) return to_double(key, v);
  int y = 0;
  unsigned mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char tail = 0;
  const int n = std::sscanf(v.c_str(), "%d-%u-%uT%u:%u:%u%c", &y, &mo, &d, &h, &mi, &s, &tail);
  if (!(n == 3 || n == 5 || n == 6)) throw ConfigError(key, "bad date '" + v + "'");
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{mo}, std::chrono::day{d}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) throw ConfigError(key, "bad date '" + v + "'");
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<double>(days) * 86400.0 + h * 3600.0 + mi * 60.0 + s;
}

/// `amb_type:call_type:value` entries separated by commas.
inline std::map<std::pair<int, int>, double> to_m_matrix(const std::string& key, const std::string& v) {
  std::map<std::pair<int, int>, double> out;
  if (v.empty()) return out;
  for (const auto& e : split(v, ',')) {
    const auto f = split(e, ':');
    if (f.size() != 3) throw ConfigError(key, "expected amb_type:call_type:value, got '" + e + "'");
    out[{static_cast<int>(to_int(key, f[0])), static_cast<int>(to_int(key, f[1]))}] = to_nonneg(key, f[2]);
  }
  return out;
}

}  // namespace detail

struct ConfigKey {
  std::string key;
  std::string default_value;  // empty = no value unless given
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  bool path = false;  // resolved against the config file's folder
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace detail;
  static const std::vector<ConfigKey> keys = {
      {"h_use_fixed_bases", "false", "ambulances always return to their home base",
       [](RunConfig& c, const std::string& v) { c.h_use_fixed_bases = to_bool("h_use_fixed_bases", v); }},
      {"n_scenarios", "1", "number of sample paths to simulate",
       [](RunConfig& c, const std::string& v) { c.n_scenarios = to_count("n_scenarios", v, 1); }},
      {"n_hospitals", "0", "hospitals used from hospitals_file, at most 9 (0 = all)",
       [](RunConfig& c, const std::string& v) { c.n_hospitals = to_count("n_hospitals", v); }},
      {"n_bases", "0", "bases used from bases_file, at most 29 (0 = all)",
       [](RunConfig& c, const std::string& v) { c.n_bases = to_count("n_bases", v); }},
      {"n_ambulances", "0", "fleet size (0 = every row of ambulances_file, else one per base)",
       [](RunConfig& c, const std::string& v) { c.n_ambulances = to_count("n_ambulances", v); }},
      {"output_folder", "output", "folder receiving the run files",
       [](RunConfig& c, const std::string& v) {
         if (v.empty()) throw ConfigError("output_folder", "empty path");
         c.output_folder = v;
       },
       true},
      {"policies", "CA,BM,NM,GHP1,GHP2", "comma-separated dispatch policies",
       [](RunConfig& c, const std::string& v) {
         c.policies.clear();
         for (const auto& p : split(v, ',')) {
           try {
             (void)PolicyId::parse(p);
           } catch (const Error& e) {
             throw ConfigError("policies", e.what());
           }
           c.policies.push_back(p);
         }
         if (c.policies.empty()) throw ConfigError("policies", "no policy given");
       }},
      {"nm_window_s", "3600", "lookahead of the NM policy in seconds",
       [](RunConfig& c, const std::string& v) { c.nm_window_s = to_positive("nm_window_s", v); }},
      {"seed", "1", "random seed",
       [](RunConfig& c, const std::string& v) {
         const auto x = to_int("seed", v);
         if (x < 0) throw ConfigError("seed", "must be nonnegative");
         c.seed = static_cast<std::uint64_t>(x);
       }},
      {"speed_kmh", "60", "ambulance speed",
       [](RunConfig& c, const std::string& v) { c.speed_kmh = to_positive("speed_kmh", v); }},
      {"theta", "1,2,4", "penalty weights for low, intermediate and high priority",
       [](RunConfig& c, const std::string& v) {
         c.theta = to_array<3>("theta", v);
         for (double x : c.theta)
           if (!(x > 0)) throw ConfigError("theta", "weights must be positive");
       }},
      {"mismatch_penalty", "10000", "cost added when an ambulance ranks below the call's requirement",
       [](RunConfig& c, const std::string& v) { c.mismatch_penalty = to_nonneg("mismatch_penalty", v); }},
      {"m_matrix", "", "explicit penalties amb_type:call_type:value,...",
       [](RunConfig& c, const std::string& v) { c.m_matrix = to_m_matrix("m_matrix", v); }},
      {"start", "1704067200", "simulation start, epoch seconds or YYYY-MM-DD[THH:MM[:SS]] UTC",
       [](RunConfig& c, const std::string& v) { c.start = to_timestamp("start", v); }},
      {"horizon_days", "7", "simulated span in days",
       [](RunConfig& c, const std::string& v) { c.horizon_days = to_positive("horizon_days", v); }},
      {"clip_to_horizon", "true", "cut trips at the end of the window",
       [](RunConfig& c, const std::string& v) { c.clip_to_horizon = to_bool("clip_to_horizon", v); }},
      {"threads", "1", "worker threads for the batch (0 = hardware)",
       [](RunConfig& c, const std::string& v) { c.threads = to_count("threads", v); }},
      {"bases_file", "", "stations template (required)",
       [](RunConfig& c, const std::string& v) { c.bases_file = v; }, true},
      {"hospitals_file", "", "hospitals template (required)",
       [](RunConfig& c, const std::string& v) { c.hospitals_file = v; }, true},
      {"ambulances_file", "", "ambulances template",
       [](RunConfig& c, const std::string& v) { c.ambulances_file = v; }, true},
      {"cleaning_file", "", "cleaning stations template (default: the bases)",
       [](RunConfig& c, const std::string& v) { c.cleaning_file = v; }, true},
      {"graph_file", "", "street graph; great-circle travel when absent",
       [](RunConfig& c, const std::string& v) { c.graph_file = v; }, true},
      {"graph_undirected", "false", "read every graph edge in both directions",
       [](RunConfig& c, const std::string& v) { c.graph_undirected = to_bool("graph_undirected", v); }},
      {"calls_file", "", "scenarios in calls.txt format",
       [](RunConfig& c, const std::string& v) { c.calls_file = v; }, true},
      {"history_file", "", "historical calls (calls.txt format) to fit and sample from",
       [](RunConfig& c, const std::string& v) { c.history_file = v; }, true},
      {"call_rate_per_hour", "6", "homogeneous call rate when no calls or history are given",
       [](RunConfig& c, const std::string& v) { c.call_rate_per_hour = to_nonneg("call_rate_per_hour", v); }},
      {"region", "", "min_lat,min_lon,max_lat,max_lon of the call region (default: around the bases)",
       [](RunConfig& c, const std::string& v) {
         if (v.empty()) {
           c.region.reset();
           return;
         }
         const auto a = to_array<4>("region", v);
         const BoundingBox b{a[0], a[1], a[2], a[3]};
         if (b.degenerate()) throw ConfigError("region", "empty or invalid box");
         c.region = b;
       }},
      {"priority_probs", "0.5,0.3,0.2", "priority mix of homogeneous calls",
       [](RunConfig& c, const std::string& v) { c.priority_probs = to_probs<3>("priority_probs", v); }},
      {"grid_nx", "10", "longitude cells of the fitted grid",
       [](RunConfig& c, const std::string& v) { c.grid_nx = to_count("grid_nx", v, 1); }},
      {"grid_ny", "10", "latitude cells of the fitted grid",
       [](RunConfig& c, const std::string& v) { c.grid_ny = to_count("grid_ny", v, 1); }},
      {"window_minutes", "30", "length of the time windows, dividing a day",
       [](RunConfig& c, const std::string& v) {
         c.window_minutes = to_count("window_minutes", v, 1);
         if (1440 % c.window_minutes != 0) throw ConfigError("window_minutes", "must divide 1440");
       }},
      {"by_weekday", "false", "separate time windows per weekday",
       [](RunConfig& c, const std::string& v) { c.by_weekday = to_bool("by_weekday", v); }},
      {"utc_offset_s", "0", "local time minus UTC, seconds",
       [](RunConfig& c, const std::string& v) { c.utc_offset_s = to_double("utc_offset_s", v); }},
      {"class_probs", "0.25,0.25,0.25,0.25", "service class mix C1..C4 of generated calls",
       [](RunConfig& c, const std::string& v) { c.class_probs = to_probs<4>("class_probs", v); }},
      {"scene_median_s", "1200", "median time on scene",
       [](RunConfig& c, const std::string& v) { c.scene_median_s = to_nonneg("scene_median_s", v); }},
      {"scene_sigma", "0.4", "log-scale spread of the time on scene",
       [](RunConfig& c, const std::string& v) { c.scene_sigma = to_nonneg("scene_sigma", v); }},
      {"hospital_median_s", "1800", "median time at hospital",
       [](RunConfig& c, const std::string& v) { c.hospital_median_s = to_nonneg("hospital_median_s", v); }},
      {"hospital_sigma", "0.4", "log-scale spread of the time at hospital",
       [](RunConfig& c, const std::string& v) { c.hospital_sigma = to_nonneg("hospital_sigma", v); }},
      {"cleaning_median_s", "1200", "median cleaning time",
       [](RunConfig& c, const std::string& v) { c.cleaning_median_s = to_nonneg("cleaning_median_s", v); }},
      {"cleaning_sigma", "0.3", "log-scale spread of the cleaning time",
       [](RunConfig& c, const std::string& v) { c.cleaning_sigma = to_nonneg("cleaning_sigma", v); }},
  };
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& key) {
  for (const auto& k : config_keys())
    if (k.key == key) return &k;
  return nullptr;
}

/// `key = value` pairs of a config stream, in file order. Later duplicates win.
inline std::vector<std::pair<std::string, std::string>> read_config_pairs(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigError, fmt::format("line {}: expected key = value", no));
    const auto key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw Error(Errc::ConfigError, fmt::format("line {}: empty key", no));
    out.emplace_back(key, detail::trim(line.substr(eq + 1)));
  }
  return out;
}

/// Merges defaults, `env_output`, the file and `cli` (highest precedence).
/// Relative paths in the file resolve against `base_dir`; paths given on the
/// command line are used as given.
inline RunConfig parse_config(std::istream& file, const std::map<std::string, std::string>& cli = {},
                              const std::optional<std::string>& env_output = std::nullopt,
                              const std::filesystem::path& base_dir = {}) {
  RunConfig cfg;
  for (const auto& k : config_keys()) {
    if (!k.default_value.empty()) k.set(cfg, k.default_value);
    cfg.sources[k.key] = "default";
  }
  if (env_output && !env_output->empty()) {
    cfg.output_folder = *env_output;
    cfg.sources["output_folder"] = "env";
  }
  std::set<std::string> given;
  for (const auto& [key, value] : read_config_pairs(file)) {
    const auto* spec = find_config_key(key);
    if (!spec) {
      cfg.warnings.push_back("unknown key '" + key + "' ignored");
      continue;
    }
    if (cli.count(key)) continue;
    std::string v = value;
    if (spec->path && !v.empty() && !base_dir.empty() && std::filesystem::path(v).is_relative())
      v = (base_dir / v).lexically_normal().string();
    spec->set(cfg, v);
    cfg.sources[key] = "file";
    given.insert(key);
  }
  for (const auto& [key, value] : cli) {
    const auto* spec = find_config_key(key);
    if (!spec) throw ConfigError(key, "unknown key");
    spec->set(cfg, value);
    cfg.sources[key] = "cli";
    given.insert(key);
  }
  for (const char* required : {"bases_file", "hospitals_file"}) {
    if (!given.count(required)) throw ConfigError(required, "missing required key");
  }
  if (cfg.n_hospitals > kMaxHospitals)
    throw ConfigError("n_hospitals", fmt::format("at most {} hospitals", kMaxHospitals));
  if (cfg.n_bases > kMaxBases) throw ConfigError("n_bases", fmt::format("at most {} bases", kMaxBases));
  if (!cfg.calls_file.empty() && !cfg.history_file.empty())
    throw ConfigError("calls_file", "calls_file and history_file are exclusive");
  return cfg;
}

inline RunConfig parse_config_file(const std::filesystem::path& path, const std::map<std::string, std::string>& cli = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("f", "cannot open config file " + path.string());
  std::optional<std::string> env;
  if (const char* e = std::getenv("EMS_SIM_OUTPUT")) env = e;
  return parse_config(in, cli, env, path.parent_path());
}

/// `key = value` lines for every key, in table order.
inline std::string describe_defaults() {
  std::string out;
  for (const auto& k : config_keys())
    out += fmt::format("{} = {}  # {}\n", k.key, k.default_value, k.help);
  return out;
}

}  // namespace ems
