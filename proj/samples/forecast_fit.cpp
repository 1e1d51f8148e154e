// Fits an intensity model to a synthetic call history with a busy evening and
// compares the expected counts per zone with the average of generated paths.
#include <cstdio>
#include <random>

#include "ems/forecast_io.hpp"

using namespace ems;

int main() {
  const Timestamp t0 = 1704067200;  // 2024-01-01 00:00 UTC
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lat(-23.0, -22.9), lon(-43.4, -43.2), hour(0, 24);
  std::vector<EmergencyCall> history;
  for (int d = 0; d < 28; ++d)
    for (int k = 0; k < 40; ++k) {
      double h = hour(rng);
      if (k % 2 == 0) h = 16 + std::fmod(h, 8.0);  // half of the calls between 16:00 and 24:00
      EmergencyCall c;
      c.id = static_cast<CallId>(history.size() + 1);
      c.t_c = std::floor(t0 + d * 86400.0 + h * 3600.0);
      c.loc = {lat(rng), lon(rng)};
      c.type_id = k % 3;
      c.priority = static_cast<Priority>(k % 3);
      history.push_back(c);
    }

  FitSpec spec;
  spec.nx = 3;
  spec.ny = 2;
  spec.window_minutes = 240;
  FitReport rep;
  const ForecastBundle model = fit_history(history, spec, &rep);
  std::printf("fitted %zu calls over %zu zones and %zu windows\n", rep.calls, model.space.zones.size(),
              model.time.windows.size());

  const Timestamp from = t0 + 28 * 86400.0, to = from + 7 * 86400.0;
  const auto expected = expected_by_zone(model, from, to);
  const int n = 200;
  const auto paths = generate_from(model, from, to, n, 1);
  std::vector<double> mean(expected.size(), 0.0);
  for (const auto& p : paths)
    for (const auto& c : p) mean[static_cast<std::size_t>(locate(model.space, c.loc))] += 1.0 / n;
  std::printf("zone  expected  generated\n");
  for (std::size_t i = 0; i < expected.size(); ++i) std::printf("%4d  %8.2f  %9.2f\n", model.space.zones[i].id, expected[i], mean[i]);

  const auto evening = expected_by_zone(model, from, to, 16 * 60, 24 * 60);
  double total = 0, busy = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    total += expected[i];
    busy += evening[i];
  }
  std::printf("share of the week between 16:00 and 24:00: %.2f (history: 0.67)\n", busy / total);
  return 0;
}
