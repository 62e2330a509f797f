#pragma once

#include <cstdint>
#include <string>

#include "gridmpc/integrator.hpp"

namespace gridmpc {

/// A stored contingency plus the control-instant grid used by every pipeline
/// stage. Times snap to the sample grid when events are scheduled.
struct ScenarioConfig {
  std::string name = "fault5";
  std::string case_ref = "9bus";
  int fault_bus = 5;
  double fault_g = 100.0;
  double fault_b = -100.0;
  double t_fault = 1.0;
  double t_clear = 1.1;
  int trip_from = 4;
  int trip_to = 5;
  double t_c = 3.0;
  double first_instant = 4.5;
  int n_c = 5;
  double t_end = 30.0;
  double load_factor = 1.0;
  std::uint64_t seed = 0;

  double instant_time(int k) const { return first_instant + k * t_c; }
};

/// Built-in scenarios: "fault5" (9-bus) and "fault15" (39-bus).
ScenarioConfig builtin_scenario(const std::string& name);

/// Loads a scenario from a key/value text file, or resolves a built-in name.
ScenarioConfig resolve_scenario(const std::string& name_or_path);

/// Fault-on, then fault-off plus line trip, snapped to the t_s grid with the
/// clearing never earlier than one sample after inception.
EventSchedule scenario_events(const ScenarioConfig& sc, const PowerSystemCase& c,
                              double t_s);

/// Index of the line (from, to) in either orientation.
int find_line(const PowerSystemCase& c, int from, int to);

}  // namespace gridmpc
