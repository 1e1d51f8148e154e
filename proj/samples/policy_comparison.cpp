// Runs the sample configuration in memory and compares the five dispatch policies.
// Usage: sample_policy_comparison [config]
#include <filesystem>
#include <iostream>

#include "ems/config.hpp"
#include "ems/metrics.hpp"
#include "ems/run.hpp"

using namespace ems;

int main(int argc, char** argv) {
  const auto cfg_path =
      argc > 1 ? std::filesystem::path(argv[1]) : std::filesystem::path(__FILE__).parent_path() / "data" / "sample.cfg";
  try {
    const RunConfig cfg = parse_config_file(cfg_path);
    const RunPlan plan = build_plan(cfg);
    const auto outputs = run_batch(plan.sim, plan.scenarios, plan.policies, plan.threads);
    std::size_t calls = 0;
    for (const auto& s : plan.scenarios) calls += s.size();
    std::cout << plan.scenarios.size() << " scenarios, " << calls << " calls, " << plan.sim.fleet.size()
              << " ambulances\n\n";
    MetricFilter f;
    write_summary_csv(std::cout, summary_table(outputs, f));
    f.kind = MetricKind::Penalized;
    write_summary_csv(std::cout, summary_table(outputs, f));
    f.priorities = parse_priority_mask("high");
    std::cout << "\nhigh priority only\n";
    write_summary_csv(std::cout, summary_table(outputs, f));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
