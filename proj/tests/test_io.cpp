#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ems/config.hpp"
#include "ems/io.hpp"
#include "ems/run.hpp"

using namespace ems;
namespace fs = std::filesystem;

namespace {

constexpr double kDay = 1704067200.0;  // 2024-01-01 00:00 UTC

double hm(int h, int m) { return kDay + h * 3600.0 + m * 60.0; }

fs::path scratch(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto p = fs::temp_directory_path() / fmt::format("emsim_io_{}_{}_{}", info->test_suite_name(), info->name(), name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

EmergencyCall call(CallId id, double t, GeoPoint loc, Priority p = Priority::Low,
                   ServiceClass c = ServiceClass::C4, int type = 0) {
  EmergencyCall e;
  e.id = id;
  e.t_c = t;
  e.loc = loc;
  e.priority = p;
  e.service_class = c;
  e.type_id = type;
  return e;
}

std::vector<std::vector<EmergencyCall>> random_scenarios(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lat(-23.1, -22.7), lon(-43.6, -43.1), t(kDay, kDay + 86400);
  std::uniform_int_distribution<int> n(0, 12), pr(0, 2), cls(1, 4), type(0, 5);
  std::vector<std::vector<EmergencyCall>> out(1 + seed % 4);
  CallId id = 1;
  for (auto& s : out) {
    const int k = n(rng);
    for (int i = 0; i < k; ++i)
      s.push_back(call(id++, t(rng), {lat(rng), lon(rng)}, static_cast<Priority>(pr(rng)),
                       static_cast<ServiceClass>(cls(rng)), type(rng)));
  }
  return out;
}

template <class W, class R>
void expect_stable(const std::string& first, W write, R read) {
  std::istringstream in(first);
  std::ostringstream again;
  write(again, read(in));
  EXPECT_EQ(again.str(), first);
}

SimConfig single_call_config() {
  const GeoPoint b{-22.900, -43.200}, c{-22.930, -43.200}, h{-22.900, -43.260};
  auto g = std::make_shared<StreetGraph>();
  g->add_node(1, b);
  g->add_node(2, c);
  g->add_node(3, h);
  g->add_edge(1, 2, 10.0);
  g->add_edge(2, 3, 14.0);
  g->add_edge(3, 1, 20.0);
  SimConfig cfg;
  cfg.start = hm(4, 32);
  cfg.end = hm(5, 45);
  cfg.stations = {b};
  cfg.hospitals = {h};
  cfg.cleaning_stations = {b};
  cfg.fleet = {FleetMember{AmbulanceType{}, 0, std::nullopt}};
  cfg.graph = g;
  return cfg;
}

EmergencyCall single_call_call() {
  auto c = call(1, hm(4, 36), {-22.930, -43.200}, Priority::Low, ServiceClass::C1);
  c.time_on_scene = 6 * 60.0;
  c.hospital = GeoPoint{-22.900, -43.260};
  c.hospital_index = 0;
  c.time_at_hospital = 19 * 60.0;
  c.cleaning_station = GeoPoint{-22.900, -43.200};
  c.cleaning_index = 0;
  c.cleaning_time = 0.0;
  return c;
}

SimOutput small_run(std::uint64_t seed, PolicyId policy) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lat(-23.0, -22.8), lon(-43.5, -43.2), t(kDay, kDay + 4 * 3600);
  SimConfig cfg;
  cfg.start = kDay;
  cfg.end = kDay + 6 * 3600;
  cfg.stations = {{lat(rng), lon(rng)}, {lat(rng), lon(rng)}};
  cfg.hospitals = {{lat(rng), lon(rng)}};
  cfg.fleet = {FleetMember{}, FleetMember{AmbulanceType{1, "ALS", 1}, 1, std::nullopt}};
  cfg.policy = policy;
  cfg.durations.on_scene = {600, 0.3};
  cfg.durations.at_hospital = {900, 0.3};
  cfg.durations.cleaning = {300, 0.3};
  std::vector<EmergencyCall> calls;
  for (int i = 0; i < 12; ++i)
    calls.push_back(call(100 + i, std::floor(t(rng)), {lat(rng), lon(rng)}, static_cast<Priority>(i % 3),
                         static_cast<ServiceClass>(1 + i % 4), i % 2));
  return run_batch(cfg, {calls}, {policy}, 1).front();
}

// Writes the templates of a two-base, two-hospital region and returns the folder.
fs::path region_templates(const std::string& name) {
  const auto dir = scratch(name);
  put(dir / "bases.txt", "# id lat lon name\n1 -22.90 -43.20 Centro\n2 -22.95 -43.35 Barra\n");
  put(dir / "hospitals.txt", "10 -22.91 -43.22 Souza Aguiar\n11 -22.97 -43.38\n");
  return dir;
}

}  // namespace

// ------------------------------------------------------------------ calls

TEST(Calls, EmptyScenarioSetGivesEmptyFile) {
  std::ostringstream out;
  write_calls(out, {});
  EXPECT_EQ(out.str(), "");
  std::istringstream in("");
  EXPECT_TRUE(read_calls(in).empty());
}

TEST(Calls, GoldenTwoByThree) {
  const std::vector<std::vector<EmergencyCall>> s{
      {call(3, kDay + 30, {-22.9, -43.2}, Priority::High, ServiceClass::C1, 7),
       call(1, kDay, {-22.95, -43.25}), call(2, kDay + 10.5, {-23, -43}, Priority::Intermediate, ServiceClass::C3, 2)},
      {call(4, kDay + 5, {1, 2}), call(5, kDay + 5, {3, 4}), call(6, kDay + 1, {5, 6})}};
  std::ostringstream out;
  write_calls(out, s);
  EXPECT_EQ(out.str(),
            "0 1 1704067200 -22.95 -43.25 0 0 C4\n"
            "0 2 1704067210.5 -23 -43 2 1 C3\n"
            "0 3 1704067230 -22.9 -43.2 7 2 C1\n"
            "1 6 1704067201 5 6 0 0 C4\n"
            "1 4 1704067205 1 2 0 0 C4\n"
            "1 5 1704067205 3 4 0 0 C4\n");
}

TEST(Calls, RoundTripIsIdentity) {
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const auto s = random_scenarios(seed);
    std::ostringstream out;
    write_calls(out, s);
    std::istringstream in(out.str());
    const auto back = read_calls(in);
    std::size_t total = 0, total_back = 0;
    for (const auto& x : s) total += x.size();
    for (const auto& x : back) total_back += x.size();
    ASSERT_EQ(total, total_back);
    for (std::size_t k = 0; k < back.size(); ++k)
      for (const auto& c : back[k]) {
        const auto it = std::find_if(s[k].begin(), s[k].end(), [&](const auto& o) { return o.id == c.id; });
        ASSERT_NE(it, s[k].end());
        EXPECT_EQ(it->t_c, c.t_c);
        EXPECT_EQ(it->loc, c.loc);
        EXPECT_EQ(it->type_id, c.type_id);
        EXPECT_EQ(it->priority, c.priority);
        EXPECT_EQ(it->service_class, c.service_class);
      }
    expect_stable(out.str(), [](std::ostream& o, const auto& v) { write_calls(o, v); },
                  [](std::istream& i) { return read_calls(i); });
  }
}

TEST(Calls, ParseErrors) {
  for (const char* bad : {"0 1 2 3\n", "0 1 t 0 0 0 0 C1\n", "0 1 5 95 0 0 0 C1\n", "0 1 5 0 0 0 7 C1\n",
                          "0 1 5 0 0 0 0 C9\n", "-1 1 5 0 0 0 0 C1\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(read_calls(in), Error) << bad;
  }
  std::istringstream in("0 1 5 0 0 0 0 C1\n0 2 6 0 0 0 0 C1 x\n");
  try {
    read_calls(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ParseError);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

// -------------------------------------------------------------- templates

TEST(Templates, SitesRoundTrip) {
  const std::string text = "1 -22.9 -43.2 Centro\n2 -22.95 -43.35\n7 0 0 Hospital Municipal\n";
  std::istringstream in("# header\n\n" + text);
  const auto s = read_sites(in);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[2].name, "Hospital Municipal");
  EXPECT_EQ(s[1].name, "");
  std::ostringstream out;
  write_sites(out, s);
  EXPECT_EQ(out.str(), text);
  std::istringstream dup("1 0 0\n1 1 1\n");
  EXPECT_THROW(read_sites(dup), Error);
}

TEST(Templates, AmbulancesRoundTrip) {
  const std::string text = "0 -22.9 -43.2 0 BLS 0\n1 -22.95 -43.35 1 ALS 1 2\n";
  std::istringstream in(text);
  const auto a = read_ambulances(in);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[1].type.label, "ALS");
  EXPECT_EQ(a[1].type.rank, 1);
  EXPECT_EQ(a[1].home_station, 2);
  EXPECT_EQ(a[0].home_station, -1);
  std::ostringstream out;
  write_ambulances(out, a);
  EXPECT_EQ(out.str(), text);
}

// ------------------------------------------------------------ trajectories

TEST(Trajectories, ZeroCallRunIsIdle) {
  SimConfig cfg;
  cfg.start = kDay;
  cfg.end = kDay + 3600;
  cfg.stations = {{-22.9, -43.2}, {-22.8, -43.1}};
  cfg.fleet = {FleetMember{}, FleetMember{AmbulanceType{}, 1, std::nullopt}};
  const auto out = run_materialized(cfg, {});
  const auto lines = trajectory_lines(out);
  ASSERT_FALSE(lines.empty());
  EXPECT_EQ(lines.front().time, cfg.start);
  EXPECT_EQ(lines.back().time, cfg.end);
  for (const auto& l : lines) {
    EXPECT_TRUE(l.calls.empty());
    ASSERT_EQ(l.ambulances.size(), 2u);
    for (const auto& a : l.ambulances) EXPECT_EQ(a.type, TripType::AtStation);
  }
  std::ostringstream text;
  write_trajectory_lines(text, lines);
  EXPECT_EQ(text.str().substr(0, text.str().find('\n')), "1704067200 0 2 0 1 -22.9 -43.2 0 1 1 -22.8 -43.1 1");
}

TEST(Trajectories, TableOneLineShowsOnScene) {
  const auto cfg = single_call_config();
  const auto c = single_call_call();
  const auto out = run_materialized(cfg, {c});
  const auto lines = trajectory_lines(out);
  const auto it = std::find_if(lines.begin(), lines.end(), [](const auto& l) { return l.time == hm(4, 46); });
  ASSERT_NE(it, lines.end());
  ASSERT_EQ(it->ambulances.size(), 1u);
  EXPECT_EQ(it->ambulances[0].type, TripType::OnScene);
  EXPECT_EQ(it->ambulances[0].loc, c.loc);
  EXPECT_EQ(it->ambulances[0].dest, c.id);
  ASSERT_EQ(it->calls.size(), 1u);
  EXPECT_EQ(it->calls[0].id, c.id);
  // the call line appears exactly at the call time
  const auto at_call = std::find_if(lines.begin(), lines.end(), [](const auto& l) { return l.time == hm(4, 36); });
  ASSERT_NE(at_call, lines.end());
  EXPECT_EQ(at_call->ambulances[0].type, TripType::ToScene);
  // before the call nothing is active
  EXPECT_TRUE(lines.front().calls.empty());
}

TEST(Trajectories, WriteReadWriteIsStable) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& p : PolicyId::all()) {
      const auto out = small_run(seed, p);
      ASSERT_FALSE(out.failed) << out.error;
      std::ostringstream text;
      write_trajectory_lines(text, trajectory_lines(out));
      expect_stable(text.str(), [](std::ostream& o, const auto& v) { write_trajectory_lines(o, v); },
                    [](std::istream& i) { return read_trajectory_lines(i); });
      std::istringstream in(text.str());
      const auto back = read_trajectory_lines(in);
      ASSERT_EQ(back.size(), event_times(out).size());
      for (std::size_t k = 1; k < back.size(); ++k) EXPECT_LT(back[k - 1].time, back[k].time);
    }
  }
}

TEST(Trajectories, ParseErrors) {
  for (const char* bad : {"5 1 7 0 0\n", "5 0 1 0 9 0 0 1\n", "5 0 1 0 1 0 0 1 extra\n", "5 -1 0\n"}) {
    std::istringstream in(bad);
    EXPECT_THROW(read_trajectory_lines(in), Error) << bad;
  }
}

// --------------------------------------------------------- response times

TEST(Responses, OneServedCallFiveFields) {
  const auto out = run_materialized(single_call_config(), {single_call_call()});
  std::ostringstream text;
  write_response_rows(text, response_rows(out));
  EXPECT_EQ(text.str(), "1 1704083760 600 600 0\n");
}

TEST(Responses, AllocationCostMatchesRecomputation) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (const auto& p : PolicyId::all()) {
      const auto out = small_run(seed, p);
      const auto rows = response_rows(out);
      ASSERT_EQ(rows.size(), out.records.size());
      CostModel cost;
      for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& r = out.records[k];
        ASSERT_TRUE(r.served);
        const auto& call = out.calls[k];
        const double expected = allocation_cost(out.fleet[static_cast<std::size_t>(r.amb)].type, call,
                                                r.arrival_scene - call.t_c, cost);
        EXPECT_NEAR(rows[k].cost, expected, 1e-6 * std::max(1.0, expected));
        EXPECT_EQ(rows[k].call, call.id);
        EXPECT_EQ(rows[k].amb, r.amb);
      }
    }
}

TEST(Responses, UnservedCallUsesSentinel) {
  SimOutput out;
  CallRecord r;
  r.call = 9;
  r.t_c = kDay;
  out.records = {r};
  std::ostringstream text;
  write_response_rows(text, response_rows(out));
  EXPECT_EQ(text.str(), "9 1704067200 inf inf -1\n");
  expect_stable(text.str(), [](std::ostream& o, const auto& v) { write_response_rows(o, v); },
                [](std::istream& i) { return read_response_rows(i); });
}

// ------------------------------------------------------------- histories

TEST(Histories, RoundTripRestoresArrays) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto out = small_run(seed, PolicyId::parse("BM"));
    std::ostringstream text;
    write_histories(text, out.fleet);
    std::istringstream in(text.str());
    const auto back = read_histories(in);
    ASSERT_EQ(back.size(), out.fleet.size());
    for (std::size_t a = 0; a < back.size(); ++a) {
      EXPECT_EQ(back[a].id, out.fleet[a].id);
      EXPECT_EQ(back[a].times, out.fleet[a].times);
      EXPECT_EQ(back[a].trips, out.fleet[a].trips);
      EXPECT_EQ(back[a].types, out.fleet[a].types);
      EXPECT_EQ(back[a].targets, out.fleet[a].targets);
    }
    expect_stable(text.str(), [](std::ostream& o, const auto& v) { write_histories(o, v); },
                  [](std::istream& i) { return read_histories(i); });
  }
  std::istringstream cut("0 5 0 0 2 1\n");
  EXPECT_THROW(read_histories(cut), Error);
}

// ----------------------------------------------------------------- config

TEST(Config, CommandLineWins) {
  std::istringstream file("bases_file = b.txt\nhospitals_file = h.txt\nn_ambulances = 10\n");
  const auto cfg = parse_config(file, {{"n_ambulances", "5"}});
  EXPECT_EQ(cfg.n_ambulances, 5);
  EXPECT_EQ(cfg.sources.at("n_ambulances"), "cli");
}

TEST(Config, TooManyHospitals) {
  std::istringstream file("bases_file = b\nhospitals_file = h\nn_hospitals = 12\n");
  try {
    parse_config(file);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "n_hospitals");
    EXPECT_EQ(e.code(), Errc::ConfigError);
  }
  std::istringstream ok("bases_file = b\nhospitals_file = h\nn_hospitals = 9\nn_bases = 29\n");
  EXPECT_NO_THROW(parse_config(ok));
  std::istringstream bases("bases_file = b\nhospitals_file = h\nn_bases = 30\n");
  EXPECT_THROW(parse_config(bases), ConfigError);
}

TEST(Config, MinimalFileFillsDefaults) {
  std::istringstream file("# minimal\nbases_file = b.txt\nhospitals_file = h.txt\n");
  const auto cfg = parse_config(file);
  const RunConfig d;
  EXPECT_FALSE(cfg.h_use_fixed_bases);
  EXPECT_EQ(cfg.n_scenarios, 1);
  EXPECT_EQ(cfg.n_hospitals, 0);
  EXPECT_EQ(cfg.n_bases, 0);
  EXPECT_EQ(cfg.n_ambulances, 0);
  EXPECT_EQ(cfg.output_folder, "output");
  EXPECT_EQ(cfg.policies, d.policies);
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.speed_kmh, 60);
  EXPECT_EQ(cfg.theta, (std::array<double, 3>{1, 2, 4}));
  EXPECT_EQ(cfg.start, 1704067200);
  EXPECT_EQ(cfg.horizon_days, 7);
  EXPECT_TRUE(cfg.warnings.empty());
  // the defaults table parses into the struct defaults
  for (const auto& k : config_keys()) {
    RunConfig c;
    if (!k.default_value.empty()) EXPECT_NO_THROW(k.set(c, k.default_value)) << k.key;
  }
}

TEST(Config, MissingRequiredKey) {
  std::istringstream file("hospitals_file = h\n");
  try {
    parse_config(file);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "bases_file");
  }
  std::istringstream empty("");
  EXPECT_NO_THROW(parse_config(empty, {{"bases_file", "b"}, {"hospitals_file", "h"}}));
}

TEST(Config, EnvironmentHasLowestPrecedence) {
  std::istringstream plain("bases_file = b\nhospitals_file = h\n");
  EXPECT_EQ(parse_config(plain, {}, std::string("/tmp/env")).output_folder, "/tmp/env");
  std::istringstream file("bases_file = b\nhospitals_file = h\noutput_folder = /tmp/file\n");
  EXPECT_EQ(parse_config(file, {}, std::string("/tmp/env")).output_folder, "/tmp/file");
  std::istringstream both("bases_file = b\nhospitals_file = h\noutput_folder = /tmp/file\n");
  EXPECT_EQ(parse_config(both, {{"output_folder", "/tmp/cli"}}, std::string("/tmp/env")).output_folder, "/tmp/cli");
}

TEST(Config, WarningsAndBadValues) {
  std::istringstream file("bases_file = b\nhospitals_file = h\ncolour = red  # comment\nseed = 4\n");
  const auto cfg = parse_config(file);
  ASSERT_EQ(cfg.warnings.size(), 1u);
  EXPECT_NE(cfg.warnings[0].find("colour"), std::string::npos);
  EXPECT_EQ(cfg.seed, 4u);
  const std::vector<std::pair<std::string, std::string>> bad{
      {"speed_kmh", "0"},       {"theta", "1,2"},       {"policies", "CA,XX"},    {"n_scenarios", "0"},
      {"class_probs", "0,0,0,0"}, {"window_minutes", "7"}, {"start", "2024-13-01"}, {"region", "1,1,0,0"},
      {"h_use_fixed_bases", "maybe"}, {"m_matrix", "1:2"}, {"seed", "x"}};
  for (const auto& [k, v] : bad) {
    std::istringstream in("bases_file = b\nhospitals_file = h\n" + k + " = " + v + "\n");
    try {
      parse_config(in);
      ADD_FAILURE() << k;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.key(), k);
    }
  }
  std::istringstream no_eq("bases_file b\n");
  EXPECT_THROW(parse_config(no_eq), Error);
  std::istringstream fine("bases_file = b\nhospitals_file = h\n");
  EXPECT_THROW(parse_config(fine, {{"nonsense", "1"}}), ConfigError);
}

TEST(Config, DatesAndMatrix) {
  std::istringstream file(
      "bases_file = b\nhospitals_file = h\nstart = 2024-01-02T06:30\nm_matrix = 0:1:500, 1:1:0\n");
  const auto cfg = parse_config(file);
  EXPECT_EQ(cfg.start, kDay + 86400 + 6.5 * 3600);
  EXPECT_EQ(cfg.m_matrix.at({0, 1}), 500);
  EXPECT_EQ(cfg.m_matrix.at({1, 1}), 0);
}

TEST(Config, RelativePathsFollowTheFile) {
  const auto dir = scratch("cfg");
  put(dir / "run.cfg", "bases_file = data/b.txt\nhospitals_file = /abs/h.txt\noutput_folder = out\n");
  const auto cfg = parse_config_file(dir / "run.cfg", {{"calls_file", "rel.txt"}});
  EXPECT_EQ(fs::path(cfg.bases_file), dir / "data/b.txt");
  EXPECT_EQ(cfg.hospitals_file, "/abs/h.txt");
  EXPECT_EQ(cfg.calls_file, "rel.txt");
  EXPECT_THROW(parse_config_file(dir / "missing.cfg"), ConfigError);
}

// --------------------------------------------------------------- pipeline

TEST(Pipeline, RateModelWritesEveryFile) {
  const auto dir = region_templates("rate");
  put(dir / "run.cfg",
      "bases_file = bases.txt\nhospitals_file = hospitals.txt\nn_ambulances = 3\nn_scenarios = 2\n"
      "horizon_days = 0.5\ncall_rate_per_hour = 3\noutput_folder = out\n");
  const auto cfg = parse_config_file(dir / "run.cfg");
  const auto res = run_simulation(cfg);
  ASSERT_EQ(res.outputs.size(), 10u);
  for (int s = 0; s < 2; ++s)
    for (const auto& h : {"CA", "BM", "NM", "GHP1", "GHP2"}) {
      EXPECT_TRUE(fs::exists(dir / "out" / trajectory_file_name(s, h))) << s << h;
      EXPECT_TRUE(fs::exists(dir / "out" / response_file_name(s, h))) << s << h;
      EXPECT_TRUE(fs::exists(dir / "out" / history_file_name(s, h))) << s << h;
    }
  EXPECT_TRUE(fs::exists(dir / "out" / "calls.txt"));
  EXPECT_EQ(slurp(dir / "out" / "summary.csv").rfind("policy,metric,min,mean,q90,max,n\n", 0), 0u);
  // the written calls are the simulated ones
  const auto calls = read_calls_file(dir / "out" / "calls.txt");
  ASSERT_EQ(calls.size(), 2u);
  EXPECT_EQ(calls[1].size(), res.outputs[5].calls.size());
  // every run file is stable under read then write
  for (const auto& f : res.files) {
    const auto name = f.filename().string();
    const auto text = slurp(f);
    if (name.rfind("output_scenarios_", 0) == 0)
      expect_stable(text, [](std::ostream& o, const auto& v) { write_trajectory_lines(o, v); },
                    [](std::istream& i) { return read_trajectory_lines(i); });
    else if (name.rfind("response_times_", 0) == 0)
      expect_stable(text, [](std::ostream& o, const auto& v) { write_response_rows(o, v); },
                    [](std::istream& i) { return read_response_rows(i); });
    else if (name.rfind("trips_", 0) == 0)
      expect_stable(text, [](std::ostream& o, const auto& v) { write_histories(o, v); },
                    [](std::istream& i) { return read_histories(i); });
    else if (name == "calls.txt")
      expect_stable(text, [](std::ostream& o, const auto& v) { write_calls(o, v); },
                    [](std::istream& i) { return read_calls(i); });
  }
}

TEST(Pipeline, LoadRunMatchesTheSimulation) {
  const auto dir = region_templates("load");
  put(dir / "run.cfg",
      "bases_file = bases.txt\nhospitals_file = hospitals.txt\nn_ambulances = 2\nhorizon_days = 0.25\n"
      "call_rate_per_hour = 4\noutput_folder = out\npolicies = CA,GHP1\nclip_to_horizon = false\n");
  const auto cfg = parse_config_file(dir / "run.cfg");
  const auto res = run_simulation(cfg);
  const auto loaded = load_run(dir / "out");
  ASSERT_EQ(loaded.size(), res.outputs.size());
  for (std::size_t k = 0; k < loaded.size(); ++k) {
    const auto& a = res.outputs[k];
    const auto& b = loaded[k];
    EXPECT_EQ(a.policy, b.policy);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t j = 0; j < a.records.size(); ++j) {
      EXPECT_EQ(a.records[j].waiting_on_scene, b.records[j].waiting_on_scene);
      EXPECT_EQ(a.records[j].waiting_on_scene_penalized, b.records[j].waiting_on_scene_penalized);
      EXPECT_EQ(a.records[j].priority, b.records[j].priority);
      EXPECT_EQ(a.records[j].arrival_scene, b.records[j].arrival_scene);
      EXPECT_EQ(a.records[j].depart_scene, b.records[j].depart_scene);
      EXPECT_EQ(a.records[j].service_end, b.records[j].service_end);
    }
    for (double t : event_times(a)) {
      const auto sa = snapshot(a, t), sb = snapshot(b, t);
      ASSERT_EQ(sa.calls.size(), sb.calls.size());
      for (std::size_t j = 0; j < sa.ambulances.size(); ++j) {
        EXPECT_EQ(sa.ambulances[j].position, sb.ambulances[j].position);
        EXPECT_EQ(sa.ambulances[j].type, sb.ambulances[j].type);
      }
    }
  }
}

TEST(Pipeline, CallsFileAndAmbulanceTemplate) {
  const auto dir = region_templates("callsfile");
  put(dir / "amb.txt", "0 -22.95 -43.35 1 ALS 1 1\n1 -22.9 -43.2 0 BLS 0\n2 -22.9 -43.2 0 BLS 0\n");
  std::vector<std::vector<EmergencyCall>> s{{call(1, kDay + 600, {-22.92, -43.25}, Priority::High, ServiceClass::C2)},
                                            {call(2, kDay + 60, {-22.96, -43.3})}};
  write_calls_file(dir / "calls_in.txt", s);
  put(dir / "run.cfg",
      "bases_file = bases.txt\nhospitals_file = hospitals.txt\nambulances_file = amb.txt\nn_ambulances = 2\n"
      "calls_file = calls_in.txt\nhorizon_days = 0.1\npolicies = BM\noutput_folder = out\nh_use_fixed_bases = 1\n");
  const auto cfg = parse_config_file(dir / "run.cfg");
  const auto plan = build_plan(cfg);
  ASSERT_EQ(plan.sim.fleet.size(), 2u);
  EXPECT_EQ(plan.sim.fleet[0].station, 1);
  EXPECT_EQ(plan.sim.fleet[0].home, 0);
  EXPECT_EQ(plan.sim.fleet[0].type.label, "ALS");
  EXPECT_EQ(plan.sim.fleet[1].station, 0);
  EXPECT_TRUE(plan.sim.use_home_base);
  ASSERT_EQ(plan.scenarios.size(), 2u);
  run_simulation(cfg);
  EXPECT_EQ(slurp(dir / "out" / "calls.txt"), slurp(dir / "calls_in.txt"));
  const auto one = parse_config_file(dir / "run.cfg", {{"n_scenarios", "1"}});
  EXPECT_EQ(build_plan(one).scenarios.size(), 1u);
  const auto three = parse_config_file(dir / "run.cfg", {{"n_scenarios", "3"}});
  EXPECT_THROW(build_plan(three), ConfigError);
  const auto big = parse_config_file(dir / "run.cfg", {{"n_ambulances", "4"}});
  EXPECT_THROW(build_plan(big), ConfigError);
  const auto hosp = parse_config_file(dir / "run.cfg", {{"n_hospitals", "3"}});
  EXPECT_THROW(build_plan(hosp), ConfigError);
}

TEST(Pipeline, HistoryFitGeneratesScenarios) {
  const auto dir = region_templates("history");
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> lat(-22.99, -22.9), lon(-43.4, -43.2), t(kDay - 14 * 86400, kDay);
  std::vector<std::vector<EmergencyCall>> hist(1);
  for (int i = 0; i < 400; ++i)
    hist[0].push_back(call(i + 1, std::floor(t(rng)), {lat(rng), lon(rng)}, static_cast<Priority>(i % 3),
                           ServiceClass::C4, i % 3));
  write_calls_file(dir / "history.txt", hist);
  put(dir / "run.cfg",
      "bases_file = bases.txt\nhospitals_file = hospitals.txt\nhistory_file = history.txt\ngrid_nx = 2\n"
      "grid_ny = 2\nwindow_minutes = 360\nn_scenarios = 3\nhorizon_days = 2\npolicies = CA\noutput_folder = out\n");
  const auto plan = build_plan(parse_config_file(dir / "run.cfg"));
  ASSERT_EQ(plan.scenarios.size(), 3u);
  std::size_t total = 0;
  for (const auto& s : plan.scenarios) {
    total += s.size();
    for (const auto& c : s) {
      EXPECT_GE(c.t_c, kDay);
      EXPECT_LT(c.t_c, kDay + 2 * 86400);
      EXPECT_EQ(static_cast<int>(c.priority), c.type_id);
    }
  }
  // 400 calls over 14 days gives about 57 calls in 2 days per scenario
  EXPECT_GT(total, 3u * 25);
  EXPECT_LT(total, 3u * 100);
}

TEST(Pipeline, TraceWritesOneFilePerAmbulance) {
  const auto dir = region_templates("trace");
  put(dir / "run.cfg",
      "bases_file = bases.txt\nhospitals_file = hospitals.txt\nn_ambulances = 2\nhorizon_days = 0.25\n"
      "call_rate_per_hour = 2\noutput_folder = out\npolicies = CA\n");
  const auto res = run_simulation(parse_config_file(dir / "run.cfg"));
  const auto files = trace_run(dir / "out", 5);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[1].filename(), trace_file_name(0, "CA", 1));
  for (std::size_t a = 0; a < files.size(); ++a) {
    std::ifstream in(files[a]);
    const auto ride = read_trace(in);
    const auto expected = discretize(res.outputs[0].fleet[a], 5, 60);
    EXPECT_EQ(ride.times, expected.times);
    EXPECT_EQ(ride.types, expected.types);
    EXPECT_EQ(ride.rides, expected.rides);
    for (double t : ride.times) EXPECT_EQ(std::fmod(t, 5.0), 0.0);
  }
  EXPECT_THROW(trace_run(dir / "out", 0), Error);
}
