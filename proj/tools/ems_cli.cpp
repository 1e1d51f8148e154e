// emsim: simulate, fit, generate, metrics, trace and serve.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "ems/api.hpp"
#include "ems/config.hpp"
#include "ems/forecast_io.hpp"
#include "ems/io.hpp"
#include "ems/metrics.hpp"
#include "ems/run.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kFailure = 1;
constexpr int kConfigFailure = 2;

httplib::Server* g_server = nullptr;

std::vector<ems::EmergencyCall> flat_calls(const fs::path& file) {
  std::vector<ems::EmergencyCall> all;
  for (auto& s : ems::read_calls_file(file)) all.insert(all.end(), s.begin(), s.end());
  return all;
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& s : w) fmt::print(stderr, "warning: {}\n", s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ambulance dispatch simulator"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run every scenario under every policy");
  std::string cfg_file;
  sim->add_option("-f,--config", cfg_file, "configuration file");
  bool show_defaults = false;
  sim->add_flag("--defaults", show_defaults, "print the configuration keys with their defaults");
  std::map<std::string, std::string> overrides;
  for (const auto& k : ems::config_keys())
    sim->add_option_function<std::string>("--" + k.key, [&overrides, key = k.key](const std::string& v) { overrides[key] = v; },
                                          k.help);

  // fit
  auto* fit = app.add_subcommand("fit", "fit an intensity model to historical calls");
  std::string fit_calls, fit_out;
  ems::FitSpec spec;
  std::string fit_from, fit_to;
  fit->add_option("-c,--calls", fit_calls, "historical calls file")->required();
  fit->add_option("-o,--output", fit_out, "model file to write")->required();
  fit->add_option("--nx", spec.nx, "grid columns")->check(CLI::PositiveNumber);
  fit->add_option("--ny", spec.ny, "grid rows")->check(CLI::PositiveNumber);
  fit->add_option("--zones", spec.zones_file, "custom zone file instead of the grid");
  fit->add_option("--window-minutes", spec.window_minutes, "length of a time window");
  fit->add_flag("--by-weekday", spec.by_weekday, "separate windows per weekday");
  fit->add_option("--utc-offset", spec.utc_offset_s, "local time minus UTC in seconds");
  fit->add_option("--from", fit_from, "first instant of the training span");
  fit->add_option("--to", fit_to, "end of the training span");
  fit->add_option("--time-weight", spec.time_weight, "smoothing weight across windows");
  fit->add_option("--space-weight", spec.space_weight, "smoothing weight across neighbouring cells");

  // generate
  auto* gen = app.add_subcommand("generate", "sample call scenarios from a fitted model");
  std::string gen_model, gen_out, gen_from, gen_to;
  int gen_n = 1, gen_threads = 1;
  std::uint64_t gen_seed = 1;
  gen->add_option("-m,--model", gen_model, "model file")->required();
  gen->add_option("-o,--output", gen_out, "calls file to write")->required();
  gen->add_option("--from", gen_from, "start of the horizon")->required();
  gen->add_option("--to", gen_to, "end of the horizon")->required();
  gen->add_option("-n,--paths", gen_n, "number of scenarios")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "random seed");
  gen->add_option("--threads", gen_threads, "worker threads")->check(CLI::PositiveNumber);

  // metrics
  auto* met = app.add_subcommand("metrics", "summarize the response times of a run folder");
  std::string met_dir, met_days = "all", met_window, met_kind = "raw", met_prio = "all", met_theta, met_ecdf, met_hist;
  int met_bins = 20;
  bool per_scenario = false;
  met->add_option("-d,--run", met_dir, "run folder")->required();
  met->add_option("--days", met_days, "weekdays, e.g. mon,tue or 0,1");
  met->add_option("--window", met_window, "time of day as HH:MM-HH:MM");
  met->add_option("--kind", met_kind, "raw or penalized");
  met->add_option("--priority", met_prio, "priorities, e.g. high,intermediate");
  met->add_option("--theta", met_theta, "priority weights overriding the run's");
  met->add_flag("--per-scenario", per_scenario, "one row per policy and scenario");
  met->add_option("--ecdf", met_ecdf, "write the empirical CDF per policy to this file");
  met->add_option("--histogram", met_hist, "write the histogram per policy to this file");
  met->add_option("--bins", met_bins, "histogram bins")->check(CLI::PositiveNumber);

  // trace
  auto* tr = app.add_subcommand("trace", "write ambulance positions on a regular time grid");
  std::string tr_dir, tr_dest;
  double t_step = 0;
  tr->add_option("-d,--run", tr_dir, "run folder")->required();
  tr->add_option("--t-step", t_step, "grid step in seconds")->required();
  tr->add_option("-o,--output", tr_dest, "destination folder, default the run folder");

  // serve
  auto* srv = app.add_subcommand("serve", "serve the HTTP API");
  ems::api::ServiceOptions sopt;
  std::string host = "0.0.0.0", origin = "*", dataset, model, ui_dir;
  int port = 8080;
  double dataset_offset = 0;
  srv->add_option("--root", sopt.root, "folder holding one subfolder per run");
  srv->add_option("--data-dir", sopt.data_dir, "base of relative paths in posted configurations");
  srv->add_option("--workers", sopt.workers, "simulation workers, 0 = twice the cores");
  srv->add_option("--max-pending", sopt.max_pending, "queued runs before refusing new ones");
  srv->add_option("--host", host, "listen address");
  srv->add_option("--port", port, "listen port");
  srv->add_option("--cors-origin", origin, "value of Access-Control-Allow-Origin");
  srv->add_option("--dataset", dataset, "historical calls served under /data");
  srv->add_option("--dataset-utc-offset", dataset_offset, "local time minus UTC of the dataset");
  srv->add_option("--model", model, "fitted model served under /forecast");
  srv->add_option("--ui", ui_dir, "static files mounted at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kConfigFailure;
  }

  try {
    if (*sim) {
      if (show_defaults) {
        std::cout << ems::describe_defaults();
        return 0;
      }
      if (cfg_file.empty()) throw ems::ConfigError("f", "a configuration file is required (-f)");
      const auto cfg = ems::parse_config_file(cfg_file, overrides);
      print_warnings(cfg.warnings);
      const auto res = ems::run_simulation(cfg);
      print_warnings(res.warnings);
      std::ifstream summary(fs::path(cfg.output_folder) / ems::kSummaryFile);
      std::cout << summary.rdbuf();
      fmt::print(stderr, "wrote {} files to {}\n", res.files.size(), cfg.output_folder);
    } else if (*fit) {
      if (!fit_from.empty()) spec.from = ems::detail::to_timestamp("from", fit_from);
      if (!fit_to.empty()) spec.to = ems::detail::to_timestamp("to", fit_to);
      ems::FitReport rep;
      const auto bundle = ems::fit_history(flat_calls(fit_calls), spec, &rep);
      ems::write_model_file(fit_out, bundle);
      fmt::print(stderr, "fitted {} calls ({} outside the region), {} iterations{}\n", rep.calls, rep.rejected,
                 rep.iterations, rep.converged ? "" : ", not converged");
    } else if (*gen) {
      const auto bundle = ems::read_model_file(gen_model);
      const auto from = ems::detail::to_timestamp("from", gen_from), to = ems::detail::to_timestamp("to", gen_to);
      const auto paths = ems::generate_from(bundle, from, to, gen_n, gen_seed, {0.25, 0.25, 0.25, 0.25}, gen_threads);
      ems::write_calls_file(gen_out, paths);
    } else if (*met) {
      ems::RunManifest manifest;
      const auto outputs = ems::load_run(met_dir, &manifest);
      ems::MetricFilter f;
      f.days = ems::parse_day_mask(met_days);
      std::tie(f.start_min, f.end_min) = ems::parse_minute_range(met_window);
      f.kind = ems::parse_metric_kind(met_kind);
      f.priorities = ems::parse_priority_mask(met_prio);
      f.utc_offset_s = manifest.utc_offset_s;
      if (!met_theta.empty()) f.theta = ems::detail::to_array<3>("theta", met_theta);
      ems::write_summary_csv(std::cout, ems::summary_table(outputs, f, per_scenario));
      std::map<std::string, std::vector<ems::SimOutput>> by_policy;
      for (const auto& o : outputs) by_policy[o.policy].push_back(o);
      if (!met_ecdf.empty()) {
        std::ofstream out(met_ecdf);
        out << "policy,value,fraction\n";
        for (const auto& [p, outs] : by_policy)
          for (const auto& pt : ems::ecdf_values(ems::metric_values(outs, f)))
            out << fmt::format("{},{},{}\n", p, pt.value, pt.fraction);
      }
      if (!met_hist.empty()) {
        std::ofstream out(met_hist);
        out << "policy,lo,hi,count\n";
        for (const auto& [p, outs] : by_policy) {
          const auto h = ems::histogram_values(ems::metric_values(outs, f), met_bins);
          for (std::size_t k = 0; k < h.counts.size(); ++k)
            out << fmt::format("{},{},{},{}\n", p, h.edges[k], h.edges[k + 1], h.counts[k]);
        }
      }
    } else if (*tr) {
      const auto files = ems::trace_run(tr_dir, t_step, tr_dest);
      fmt::print(stderr, "wrote {} trace files\n", files.size());
    } else if (*srv) {
      ems::api::Service service(sopt);
      if (!dataset.empty()) service.set_dataset(flat_calls(dataset), dataset_offset);
      if (!model.empty()) service.set_forecast(ems::read_model_file(model));
      httplib::Server server;
      if (!ui_dir.empty() && !server.set_mount_point("/", ui_dir)) throw ems::ConfigError("ui", "no such folder " + ui_dir);
      ems::api::bind(server, service, origin);
      g_server = &server;
      std::signal(SIGINT, [](int) { g_server->stop(); });
      std::signal(SIGTERM, [](int) { g_server->stop(); });
      fmt::print(stderr, "listening on {}:{}\n", host, port);
      if (!server.listen(host, port)) throw ems::Error(ems::Errc::IoError, fmt::format("cannot listen on {}:{}", host, port));
    }
  } catch (const ems::ConfigError& e) {
    fmt::print(stderr, "{}\n", e.what());
    return kConfigFailure;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFailure;
  }
  return 0;
}
