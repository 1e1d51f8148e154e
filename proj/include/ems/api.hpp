#pragma once

// HTTP/JSON service over run folders, forecasts and a historical dataset.
// `Service::handle` maps a request to a JSON response without any socket;
// `bind` attaches it to an httplib server.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "ems/config.hpp"
#include "ems/forecast_io.hpp"
#include "ems/metrics.hpp"
#include "ems/run.hpp"
#include "ems/trace.hpp"

namespace ems::api {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Request {
  std::string method = "GET";
  std::string path;
  std::map<std::string, std::string> query;
  std::map<std::string, std::string> headers;  // lower-case names
  std::string body;
};

struct Response {
  int status = 200;
  json body = json::object();
};

enum class RunStatus { Queued, Running, Done, Failed };

constexpr std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Queued: return "queued";
    case RunStatus::Running: return "running";
    case RunStatus::Done: return "done";
    case RunStatus::Failed: return "failed";
  }
  return "queued";
}

struct RunHandle {
  std::string id;
  RunStatus status = RunStatus::Queued;
  json config = json::object();  // the posted keys, as strings
  std::string error;
  std::vector<std::string> warnings;
};

struct ServiceOptions {
  fs::path root = "runs";      // one folder per run
  fs::path data_dir;           // base of relative paths in posted configs
  unsigned workers = 0;        // 0 = twice the hardware threads
  std::size_t max_pending = 64;
  std::size_t max_frames = 20000;
  int max_paths = 5000;
};

namespace detail {

inline Response error(int status, std::string_view code, const std::string& message, const std::string& key = "") {
  Response r;
  r.status = status;
  r.body = {{"error", {{"code", code}, {"message", message}}}};
  if (!key.empty()) r.body["error"]["key"] = key;
  return r;
}

inline Response from_error(const Error& e) {
  int status = 400;
  if (e.code() == Errc::EmptySelection) status = 422;
  if (e.code() == Errc::IoError) status = 500;
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) return error(status, to_string(e.code()), e.what(), ce->key());
  return error(status, to_string(e.code()), e.what());
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string json_scalar(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return fmt::format("{}", v.get<double>());
  throw ConfigError(key, "unsupported value type");
}

inline std::string json_value(const std::string& key, const json& v) {
  if (!v.is_array()) return json_scalar(key, v);
  std::string out;
  for (const auto& e : v) out += (out.empty() ? "" : ",") + json_scalar(key, e);
  return out;
}

class Query {
 public:
  explicit Query(const std::map<std::string, std::string>& q) : q_(q) {}

  std::optional<std::string> str(const std::string& k) const {
    const auto it = q_.find(k);
    if (it == q_.end() || it->second.empty()) return std::nullopt;
    return it->second;
  }

  double number(const std::string& k, double fallback) const {
    const auto v = str(k);
    return v ? ems::detail::to_double(k, *v) : fallback;
  }

  Timestamp time(const std::string& k, Timestamp fallback) const {
    const auto v = str(k);
    return v ? ems::detail::to_timestamp(k, *v) : fallback;
  }

  int integer(const std::string& k, int fallback, int lo, int hi) const {
    const auto v = str(k);
    if (!v) return fallback;
    const auto x = ems::detail::to_int(k, *v);
    if (x < lo || x > hi) throw ConfigError(k, fmt::format("must lie in [{}, {}]", lo, hi));
    return static_cast<int>(x);
  }

 private:
  const std::map<std::string, std::string>& q_;
};

struct LoadedRun {
  RunManifest manifest;
  std::vector<SimOutput> outputs;
  std::shared_ptr<const StreetGraph> graph;
};

// Calls of a dataset passing the common data filters.
struct CallFilter {
  Timestamp from = -kInf, to = kInf;
  int start_min = 0, end_min = 1440;
  std::optional<std::set<int>> types;
  std::uint8_t priorities = 0x7;
  double utc_offset_s = 0;

  bool accepts(const EmergencyCall& c) const {
    if (c.t_c < from || c.t_c >= to) return false;
    const double sec = seconds_of_day(c.t_c, utc_offset_s);
    if (sec < start_min * 60.0 || sec >= end_min * 60.0) return false;
    if (types && !types->count(c.type_id)) return false;
    return (priorities >> static_cast<int>(c.priority)) & 1;
  }
};

inline json ring_json(const Zone& z) {
  json ring = json::array();
  for (const auto& p : z.ring) ring.push_back({p.lat, p.lon});
  return ring;
}

inline std::string date_key(std::int64_t day) {
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                     static_cast<unsigned>(ymd.day()));
}

}  // namespace detail

class Service {
 public:
  explicit Service(ServiceOptions opt = {}) : opt_(std::move(opt)) {
    std::error_code ec;
    fs::create_directories(opt_.root, ec);
    if (ec) throw Error(Errc::IoError, "cannot create " + opt_.root.string());
    restore();
    unsigned n = opt_.workers ? opt_.workers : 2 * std::max(1u, std::thread::hardware_concurrency());
    for (unsigned k = 0; k < n; ++k) workers_.emplace_back([this] { work(); });
  }

  ~Service() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& w : workers_) w.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void set_dataset(std::vector<EmergencyCall> calls, double utc_offset_s = 0) {
    std::lock_guard lock(mu_);
    dataset_ = std::make_shared<const std::vector<EmergencyCall>>(std::move(calls));
    dataset_offset_ = utc_offset_s;
  }

  void set_forecast(ForecastBundle b) {
    std::lock_guard lock(mu_);
    forecast_ = std::make_shared<const ForecastBundle>(std::move(b));
  }

  std::optional<RunHandle> run(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = runs_.find(id);
    if (it == runs_.end()) return std::nullopt;
    return it->second;
  }

  /// Blocks until the run leaves the queue or the timeout passes.
  bool wait(const std::string& id, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return done_cv_.wait_for(lock, timeout, [&] {
      const auto it = runs_.find(id);
      return it == runs_.end() || it->second.status == RunStatus::Done || it->second.status == RunStatus::Failed;
    });
  }

  Response handle(const Request& req) {
    try {
      return route(req);
    } catch (const Error& e) {
      return detail::from_error(e);
    } catch (const json::exception& e) {
      return detail::error(400, "ParseError", e.what());
    } catch (const std::exception& e) {
      return detail::error(500, "Internal", e.what());
    }
  }

 private:
  Response route(const Request& req) {
    static const std::regex run_re("^/runs/([A-Za-z0-9_-]+)(/frames|/metrics)?$");
    static const std::regex data_re("^/data/(lineplot|heatmap|histogram|piechart)$");
    std::smatch m;
    const std::string& path = req.path;
    if (req.method == "GET" && path == "/health") return {200, {{"status", "ok"}}};
    if (path == "/runs") {
      if (req.method == "POST") return post_run(req);
      if (req.method == "GET") return list_runs();
      return detail::error(405, "MethodNotAllowed", "use GET or POST");
    }
    if (req.method != "GET") return detail::error(405, "MethodNotAllowed", "use GET");
    if (std::regex_match(path, m, run_re)) {
      const std::string id = m[1], tail = m[2];
      if (tail.empty()) return get_run(id);
      const auto loaded = ready(id);
      if (!loaded.second) return loaded.first;
      if (tail == "/frames") return frames(id, *loaded.second, req.query);
      return metrics(*loaded.second, req.query);
    }
    if (path == "/forecast/heatmap") return forecast_heatmap(req.query);
    if (path == "/forecast/lineplot") return forecast_lineplot(req.query);
    if (std::regex_match(path, m, data_re)) return data(m[1], req.query);
    return detail::error(404, "NotFound", "no route for " + path);
  }

  // ---------------------------------------------------------------- runs

  json handle_json(const RunHandle& h) const {
    json j = {{"id", h.id}, {"status", to_string(h.status)}, {"config", h.config}};
    if (!h.error.empty()) j["error"] = h.error;
    j["warnings"] = h.warnings;
    return j;
  }

  Response list_runs() const {
    std::lock_guard lock(mu_);
    json arr = json::array();
    for (const auto& [id, h] : runs_) arr.push_back(handle_json(h));
    return {200, {{"runs", arr}}};
  }

  Response get_run(const std::string& id) const {
    std::lock_guard lock(mu_);
    const auto it = runs_.find(id);
    if (it == runs_.end()) return detail::error(404, "NotFound", "unknown run " + id);
    return {200, handle_json(it->second)};
  }

  Response post_run(const Request& req) {
    const json body = req.body.empty() ? json::object() : json::parse(req.body);
    if (!body.is_object()) return detail::error(400, "ParseError", "body must be a JSON object");
    std::string key;
    if (const auto it = req.headers.find("idempotency-key"); it != req.headers.end()) key = it->second;
    std::map<std::string, std::string> values;
    for (const auto& [k, v] : body.items()) {
      if (k == "idempotency_key") {
        if (key.empty()) key = detail::json_scalar(k, v);
        continue;
      }
      if (k == "output_folder") continue;  // the server owns run folders
      values[k] = detail::json_value(k, v);
    }
    for (auto& [k, v] : values) {
      const auto* spec = find_config_key(k);
      if (spec && spec->path && !v.empty() && fs::path(v).is_relative() && !opt_.data_dir.empty())
        v = (opt_.data_dir / v).lexically_normal().string();
    }
    std::istringstream none;
    RunConfig cfg = parse_config(none, values);
    for (const auto& k : config_keys())
      if (k.path && k.key != "output_folder" && values.count(k.key) && !values[k.key].empty() &&
          !fs::exists(values[k.key]))
        throw ConfigError(k.key, "file not found: " + values[k.key]);
    const json echo(values);
    const std::uint64_t hash = detail::fnv1a(echo.dump());

    std::lock_guard lock(mu_);
    if (!key.empty()) {
      if (const auto it = by_key_.find(key); it != by_key_.end()) return {202, handle_json(runs_.at(it->second))};
    }
    for (const auto& [id, h] : runs_)
      if (h.status != RunStatus::Failed && h.config == echo) {
        if (!key.empty()) by_key_[key] = id;
        return {202, handle_json(h)};
      }
    if (queue_.size() >= opt_.max_pending) return detail::error(503, "Capacity", "too many pending runs");
    std::string id = fmt::format("{:016x}", hash);
    for (int n = 2; runs_.count(id) || fs::exists(opt_.root / id); ++n) id = fmt::format("{:016x}-{}", hash, n);
    const fs::path folder = opt_.root / id;
    fs::create_directories(folder);
    {
      std::ofstream out(folder / "request.json");
      out << json{{"config", echo}, {"idempotency_key", key}}.dump(2) << '\n';
    }
    cfg.output_folder = folder.string();
    RunHandle h;
    h.id = id;
    h.config = echo;
    h.warnings = cfg.warnings;
    runs_[id] = h;
    if (!key.empty()) by_key_[key] = id;
    queue_.push_back({id, std::move(cfg)});
    cv_.notify_one();
    return {202, handle_json(h)};
  }

  void work() {
    for (;;) {
      std::pair<std::string, RunConfig> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
        if (stop_) return;
        job = std::move(queue_.front());
        queue_.pop_front();
        runs_[job.first].status = RunStatus::Running;
      }
      RunStatus status = RunStatus::Done;
      std::string err;
      std::vector<std::string> warnings;
      try {
        warnings = run_simulation(job.second).warnings;
      } catch (const std::exception& e) {
        status = RunStatus::Failed;
        err = e.what();
        std::ofstream(opt_.root / job.first / "error.txt") << err << '\n';
      }
      {
        std::lock_guard lock(mu_);
        auto& h = runs_[job.first];
        h.status = status;
        h.error = err;
        h.warnings.insert(h.warnings.end(), warnings.begin(), warnings.end());
      }
      done_cv_.notify_all();
    }
  }

  // Registers the run folders left by an earlier server.
  void restore() {
    for (const auto& entry : fs::directory_iterator(opt_.root)) {
      const auto req_file = entry.path() / "request.json";
      if (!entry.is_directory() || !fs::exists(req_file)) continue;
      RunHandle h;
      h.id = entry.path().filename().string();
      std::ifstream in(req_file);
      json saved;
      try {
        saved = json::parse(in);
      } catch (const json::exception&) {
        continue;
      }
      h.config = saved.value("config", json::object());
      if (fs::exists(entry.path() / kManifestFile)) {
        h.status = RunStatus::Done;
      } else {
        h.status = RunStatus::Failed;
        std::ifstream e(entry.path() / "error.txt");
        std::getline(e, h.error);
        if (h.error.empty()) h.error = "interrupted";
      }
      const std::string key = saved.value("idempotency_key", "");
      if (!key.empty()) by_key_[key] = h.id;
      runs_[h.id] = h;
    }
  }

  std::pair<Response, std::shared_ptr<const detail::LoadedRun>> ready(const std::string& id) {
    std::unique_lock lock(mu_);
    const auto it = runs_.find(id);
    if (it == runs_.end()) return {detail::error(404, "NotFound", "unknown run " + id), nullptr};
    if (it->second.status != RunStatus::Done)
      return {detail::error(409, "NotDone", fmt::format("run {} is {}", id, to_string(it->second.status))), nullptr};
    if (const auto c = loaded_.find(id); c != loaded_.end()) return {{}, c->second};
    lock.unlock();
    auto run = std::make_shared<detail::LoadedRun>();
    run->outputs = load_run(opt_.root / id, &run->manifest);
    if (!run->manifest.graph_file.empty())
      run->graph = std::make_shared<const StreetGraph>(
          load_graph_file(run->manifest.graph_file, {run->manifest.graph_undirected}));
    lock.lock();
    loaded_[id] = run;
    return {{}, run};
  }

  // -------------------------------------------------------------- frames

  Response frames(const std::string& id, const detail::LoadedRun& run, const std::map<std::string, std::string>& query) {
    const detail::Query q(query);
    const double t_step = q.number("t_step", 5.0);
    if (!(t_step > 0) || !std::isfinite(t_step)) return detail::error(400, "InvalidStep", "t_step must be positive");
    const auto& m = run.manifest;
    const Timestamp from = q.time("from", m.start), to = q.time("to", m.end);
    if (from > to) return detail::error(400, "OutOfRange", "from is after to");
    const int scenario = q.integer("scenario", 0, 0, 1 << 30);
    const std::string policy = q.str("policy").value_or(m.policies.empty() ? "" : m.policies.front());
    const auto out_it = std::find_if(run.outputs.begin(), run.outputs.end(),
                                     [&](const SimOutput& o) { return o.scenario == scenario && o.policy == policy; });
    if (out_it == run.outputs.end())
      return detail::error(404, "NotFound", fmt::format("no output for scenario {} and policy {}", scenario, policy));
    const SimOutput& out = *out_it;
    const Timestamp lo = std::max(from, out.start), hi = std::min(to, out.end);
    std::vector<Timestamp> grid;
    if (lo <= hi) {
      const auto k0 = static_cast<long long>(std::ceil(lo / t_step)), k1 = static_cast<long long>(std::floor(hi / t_step));
      if (k1 >= k0 && static_cast<std::size_t>(k1 - k0 + 1) > opt_.max_frames)
        return detail::error(400, "OutOfRange", fmt::format("more than {} frames requested", opt_.max_frames));
      for (long long k = k0; k <= k1; ++k) grid.push_back(static_cast<double>(k) * t_step);
    }
    const Router router(out.speed_kmh, run.graph);
    struct Track {
      AmbulanceState expanded;
      DiscretizedRide ride;
    };
    std::vector<Track> tracks;
    for (const auto& s : out.fleet) {
      Track t{expand_on_streets(s, router), {}};
      t.ride = discretize(t.expanded, t_step, out.speed_kmh);
      tracks.push_back(std::move(t));
    }
    json frames = json::array();
    for (Timestamp tau : grid) {
      const Snapshot snap = snapshot(out, tau);
      json ambs = json::array();
      for (std::size_t a = 0; a < tracks.size(); ++a) {
        const auto& tr = tracks[a];
        GeoPoint pos = snap.ambulances[a].position;
        TripType type = snap.ambulances[a].type;
        const auto hit = std::lower_bound(tr.ride.times.begin(), tr.ride.times.end(), tau);
        if (hit != tr.ride.times.end() && *hit == tau) {
          const auto k = static_cast<std::size_t>(hit - tr.ride.times.begin());
          pos = tr.ride.rides[k];
          type = tr.ride.types[k];
        }
        // segment holding tau, a shared node belonging to the earlier segment
        const auto& e = tr.expanded;
        std::int64_t target = snap.ambulances[a].target;
        json path = json::array();
        if (!e.types.empty()) {
          auto up = std::lower_bound(e.times.begin(), e.times.end(), tau);
          std::size_t j = up == e.times.begin() ? 0 : static_cast<std::size_t>(up - e.times.begin()) - 1;
          j = std::min(j, e.types.size() - 1);
          target = e.targets[j];
          if (is_moving(type)) {
            path.push_back({pos.lat, pos.lon});
            for (std::size_t k = j; k < e.types.size() && e.types[k] == e.types[j] && e.targets[k] == e.targets[j]; ++k)
              path.push_back({e.trips[k + 1].lat, e.trips[k + 1].lon});
          }
        }
        ambs.push_back({{"id", tr.expanded.id}, {"type", code(type)}, {"lat", pos.lat}, {"lon", pos.lon},
                        {"target", target}, {"path", path}});
      }
      json calls = json::array();
      for (const auto& c : snap.calls)
        calls.push_back({{"id", c.call}, {"lat", c.loc.lat}, {"lon", c.loc.lon}, {"priority", to_string(c.priority)},
                         {"phase", to_string(c.phase)}, {"amb", c.amb}});
      frames.push_back({{"time", tau}, {"ambulances", ambs}, {"calls", calls}});
    }
    return {200,
            {{"run", id}, {"scenario", scenario}, {"policy", policy}, {"t_step", t_step}, {"from", from}, {"to", to},
             {"frames", frames}}};
  }

  // ------------------------------------------------------------- metrics

  static MetricFilter metric_filter(const std::map<std::string, std::string>& query, double utc_offset_s) {
    const detail::Query q(query);
    MetricFilter f;
    f.days = parse_day_mask(q.str("days").value_or(""));
    std::tie(f.start_min, f.end_min) = parse_minute_range(q.str("window").value_or(""));
    f.kind = parse_metric_kind(q.str("kind").value_or("raw"));
    f.priorities = parse_priority_mask(q.str("priority").value_or(""));
    f.utc_offset_s = utc_offset_s;
    if (const auto th = q.str("theta")) f.theta = ems::detail::to_array<3>("theta", *th);
    f.validate();
    return f;
  }

  Response metrics(const detail::LoadedRun& run, const std::map<std::string, std::string>& query) {
    const MetricFilter f = metric_filter(query, run.manifest.utc_offset_s);
    const int bins = detail::Query(query).integer("bins", 20, 1, 10000);
    const auto rows = summary_table(run.outputs, f);
    json policies = json::array();
    for (const auto& row : rows) {
      std::vector<SimOutput> mine;
      for (const auto& o : run.outputs)
        if (o.policy == row.policy) mine.push_back(o);
      const auto values = metric_values(mine, f);
      json ecdf = json::array();
      for (const auto& p : ecdf_values(values)) ecdf.push_back({p.value, p.fraction});
      const auto h = histogram_values(values, bins);
      const auto& s = row.summary;
      policies.push_back({{"policy", row.policy},
                          {"summary", {{"min", s.min}, {"mean", s.mean}, {"q90", s.q90}, {"max", s.max}, {"n", s.n}}},
                          {"ecdf", ecdf},
                          {"histogram", {{"edges", h.edges}, {"counts", h.counts}}}});
    }
    return {200,
            {{"kind", to_string(f.kind)},
             {"filter",
              {{"days", f.days}, {"start_min", f.start_min}, {"end_min", f.end_min}, {"priorities", f.priorities}}},
             {"policies", policies}}};
  }

  // ------------------------------------------------------------ forecast

  std::shared_ptr<const ForecastBundle> forecast() const {
    std::lock_guard lock(mu_);
    return forecast_;
  }

  Response forecast_heatmap(const std::map<std::string, std::string>& query) {
    const auto b = forecast();
    if (!b) return detail::error(404, "NotFound", "no forecast model loaded");
    const detail::Query q(query);
    const Timestamp from = q.time("from", 1704067200), to = q.time("to", from + 7 * 86400.0);
    if (from > to) return detail::error(400, "OutOfRange", "from is after to");
    const auto [start_min, end_min] = parse_minute_range(q.str("window").value_or(""));
    const auto values = expected_by_zone(*b, from, to, start_min, end_min, parse_priority_mask(q.str("priority").value_or("")));
    json zones = json::array();
    double total = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      total += values[i];
      zones.push_back({{"id", b->space.zones[i].id}, {"value", values[i]}, {"ring", detail::ring_json(b->space.zones[i])}});
    }
    return {200, {{"from", from}, {"to", to}, {"total", total}, {"zones", zones}}};
  }

  Response forecast_lineplot(const std::map<std::string, std::string>& query) {
    const auto b = forecast();
    if (!b) return detail::error(404, "NotFound", "no forecast model loaded");
    const detail::Query q(query);
    const Timestamp from = q.time("from", 1704067200), to = q.time("to", from + 7 * 86400.0);
    if (!(from < to)) return detail::error(400, "OutOfRange", "from must precede to");
    const double period = q.number("period_s", 3600);
    if (!(period > 0)) return detail::error(400, "InvalidStep", "period_s must be positive");
    const int n = q.integer("paths", 200, 1, opt_.max_paths);
    const int seed = q.integer("seed", 1, 0, 1 << 30);
    detail::CallFilter f;
    std::tie(f.start_min, f.end_min) = parse_minute_range(q.str("window").value_or(""));
    f.priorities = parse_priority_mask(q.str("priority").value_or(""));
    f.utc_offset_s = b->time.utc_offset_s;
    const auto paths = generate_from(*b, from, to, n, static_cast<std::uint64_t>(seed));
    std::vector<std::vector<double>> counts;
    for (const auto& p : paths) {
      std::vector<EmergencyCall> kept;
      for (const auto& c : p)
        if (f.accepts(c)) kept.push_back(c);
      counts.push_back(count_in_bins(kept, from, to, period));
    }
    const auto summary = path_summary(counts, 0.05, 0.95);
    json periods = json::array();
    for (std::size_t k = 0; k < summary.size(); ++k)
      periods.push_back({{"start", from + static_cast<double>(k) * period},
                         {"mean", summary[k].mean},
                         {"q05", summary[k].q_low},
                         {"q95", summary[k].q_high}});
    return {200, {{"from", from}, {"to", to}, {"period_s", period}, {"paths", n}, {"periods", periods}}};
  }

  // ---------------------------------------------------------------- data

  Response data(const std::string& chart, const std::map<std::string, std::string>& query) {
    std::shared_ptr<const std::vector<EmergencyCall>> ds;
    double offset = 0;
    {
      std::lock_guard lock(mu_);
      ds = dataset_;
      offset = dataset_offset_;
    }
    if (!ds) return detail::error(404, "NotFound", "no dataset loaded");
    for (const char* k : {"age", "gender", "hospital", "district"})
      if (query.count(k)) return detail::error(400, "InvalidFilter", fmt::format("filter '{}' is not recorded in the dataset", k));
    const detail::Query q(query);
    detail::CallFilter f;
    f.utc_offset_s = offset;
    Timestamp lo = kInf, hi = -kInf;
    for (const auto& c : *ds) {
      lo = std::min(lo, c.t_c);
      hi = std::max(hi, c.t_c);
    }
    if (ds->empty()) lo = hi = 0;
    f.from = q.time("from", ems::day_start_utc(ems::local_day(lo, offset), offset));
    f.to = q.time("to", ems::day_start_utc(ems::local_day(hi, offset) + 1, offset));
    if (!(f.from < f.to)) return detail::error(400, "OutOfRange", "from must precede to");
    std::tie(f.start_min, f.end_min) = parse_minute_range(q.str("window").value_or(""));
    if (!(f.start_min < f.end_min)) return detail::error(400, "InvalidFilter", "empty time window");
    f.priorities = parse_priority_mask(q.str("priority").value_or(""));
    if (const auto t = q.str("type")) {
      f.types.emplace();
      for (const auto& s : ems::detail::split(*t, ',')) f.types->insert(static_cast<int>(ems::detail::to_int("type", s)));
    }
    std::vector<const EmergencyCall*> sel;
    for (const auto& c : *ds)
      if (f.accepts(c)) sel.push_back(&c);
    const double days = (f.to - f.from) / 86400.0;
    const double hours_per_day = (f.end_min - f.start_min) / 60.0;
    json j = {{"from", f.from}, {"to", f.to}, {"n", sel.size()}};

    auto category = [&](const EmergencyCall& c, const std::string& by) -> std::string {
      if (by == "weekday") return std::to_string(weekday(c.t_c, offset));
      if (by == "type") return std::to_string(c.type_id);
      if (by == "priority") return std::string(to_string(c.priority));
      throw Error(Errc::InvalidFilter, "unknown grouping '" + by + "'");
    };

    if (chart == "lineplot") {
      const std::string by = q.str("by").value_or("hour");
      std::map<std::string, double> counts;
      std::map<std::string, double> exposure;  // hours of observation behind each key
      if (by == "hour" || by == "slot") {
        const int width = by == "hour" ? 60 : 30;
        for (int s = 0; s < 1440 / width; ++s) {
          const int a = std::max(s * width, f.start_min), b = std::min((s + 1) * width, f.end_min);
          if (a < b) exposure[fmt::format("{:04d}", s)] = days * (b - a) / 60.0;
        }
        for (const auto* c : sel) counts[fmt::format("{:04d}", static_cast<int>(seconds_of_day(c->t_c, offset) / 60) / width)] += 1;
      } else if (by == "weekday") {
        for (const auto& o : occurrences(make_daily_windows(1440, true, offset), f.from, f.to))
          exposure[std::to_string(o.window)] += hours_per_day;
        for (const auto* c : sel) counts[std::to_string(weekday(c->t_c, offset))] += 1;
      } else if (by == "date") {
        for (auto d = ems::local_day(f.from, offset); ems::day_start_utc(d, offset) < f.to; ++d)
          exposure[detail::date_key(d)] = hours_per_day;
        for (const auto* c : sel) counts[detail::date_key(ems::local_day(c->t_c, offset))] += 1;
      } else {
        return detail::error(400, "InvalidFilter", "by must be hour, slot, weekday or date");
      }
      json series = json::array();
      for (const auto& [key, hours] : exposure) {
        const double n = counts.count(key) ? counts[key] : 0.0;
        series.push_back({{"key", key}, {"count", n}, {"rate_per_hour", hours > 0 ? n / hours : 0.0}});
      }
      j["by"] = by;
      j["series"] = series;
      return {200, j};
    }
    if (chart == "heatmap") {
      SpacePartition sp;
      if (const auto b = forecast()) {
        sp = b->space;
      } else {
        std::vector<EmergencyCall> pts;
        for (const auto* c : sel) pts.push_back(*c);
        if (pts.empty()) return detail::error(422, "EmptySelection", "no calls match the filter");
        sp = build_rect_partition(ems::detail::calls_box(pts), q.integer("nx", 10, 1, 1000), q.integer("ny", 10, 1, 1000));
      }
      std::vector<double> counts(static_cast<std::size_t>(sp.size()), 0.0);
      for (const auto* c : sel)
        if (const int z = locate(sp, c->loc); z != kOutside) counts[static_cast<std::size_t>(z)] += 1;
      const double hours = days * hours_per_day;
      json zones = json::array();
      for (std::size_t i = 0; i < counts.size(); ++i)
        zones.push_back({{"id", sp.zones[i].id}, {"count", counts[i]}, {"rate_per_hour", hours > 0 ? counts[i] / hours : 0.0},
                         {"ring", detail::ring_json(sp.zones[i])}});
      j["zones"] = zones;
      return {200, j};
    }
    const std::string by = q.str("by").value_or(chart == "histogram" ? "weekday" : "type");
    std::map<std::string, double> counts;
    for (const auto* c : sel) counts[category(*c, by)] += 1;
    j["by"] = by;
    json entries = json::array();
    if (chart == "histogram") {
      std::vector<std::pair<std::string, double>> ranked(counts.begin(), counts.end());
      std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
      for (const auto& [key, n] : ranked) entries.push_back({{"key", key}, {"count", n}, {"rate_per_day", n / days}});
    } else {
      if (sel.empty()) return detail::error(422, "EmptySelection", "no calls match the filter");
      for (const auto& [key, n] : counts)
        entries.push_back({{"key", key}, {"count", n}, {"fraction", n / static_cast<double>(sel.size())}});
    }
    j["entries"] = entries;
    return {200, j};
  }

  ServiceOptions opt_;
  mutable std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  bool stop_ = false;
  std::vector<std::thread> workers_;
  std::deque<std::pair<std::string, RunConfig>> queue_;
  std::map<std::string, RunHandle> runs_;
  std::map<std::string, std::string> by_key_;
  std::map<std::string, std::shared_ptr<const detail::LoadedRun>> loaded_;
  std::shared_ptr<const std::vector<EmergencyCall>> dataset_;
  double dataset_offset_ = 0;
  std::shared_ptr<const ForecastBundle> forecast_;
};

/// Routes every request of `srv` to `svc`, adding CORS headers for `origin`.
inline void bind(httplib::Server& srv, Service& svc, const std::string& origin = "*") {
  auto handler = [&svc, origin](const httplib::Request& hreq, httplib::Response& hres) {
    hres.set_header("Access-Control-Allow-Origin", origin);
    hres.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    hres.set_header("Access-Control-Allow-Headers", "Content-Type, Idempotency-Key");
    if (hreq.method == "OPTIONS") {
      hres.status = 204;
      return;
    }
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    req.body = hreq.body;
    for (const auto& [k, v] : hreq.params) req.query.emplace(k, v);
    for (const auto& [k, v] : hreq.headers) {
      std::string lower = k;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      req.headers.emplace(lower, v);
    }
    const Response res = svc.handle(req);
    hres.status = res.status;
    hres.set_content(res.body.dump(), "application/json");
  };
  srv.Get(".*", handler);
  srv.Post(".*", handler);
  srv.Options(".*", handler);
}

}  // namespace ems::api
