#include "gridmpc/scenario.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace gridmpc {

ScenarioConfig builtin_scenario(const std::string& name) {
  if (name == "fault5") {
    return ScenarioConfig{};  // defaults describe the 9-bus bus-5 fault
  }
  if (name == "fault15") {
    ScenarioConfig sc;
    sc.name = "fault15";
    sc.case_ref = "39bus";
    sc.fault_bus = 15;
    sc.trip_from = 15;
    sc.trip_to = 16;
    return sc;
  }
  throw ContractError("unknown built-in scenario '" + name + "'");
}

ScenarioConfig resolve_scenario(const std::string& name_or_path) {
  if (name_or_path == "fault5" || name_or_path == "fault15")
    return builtin_scenario(name_or_path);
  std::ifstream is(name_or_path);
  if (!is) throw IoError("unknown scenario '" + name_or_path + "'");
  ScenarioConfig sc;
  sc.name = name_or_path;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    auto num = [&](double& target) {
      if (!(ss >> target)) throw ParseError(name_or_path, line_no, "missing value");
    };
    if (key == "case") ss >> sc.case_ref;
    else if (key == "fault_bus") { double v; num(v); sc.fault_bus = (int)v; }
    else if (key == "fault_g") num(sc.fault_g);
    else if (key == "fault_b") num(sc.fault_b);
    else if (key == "t_fault") num(sc.t_fault);
    else if (key == "t_clear") num(sc.t_clear);
    else if (key == "trip_from") { double v; num(v); sc.trip_from = (int)v; }
    else if (key == "trip_to") { double v; num(v); sc.trip_to = (int)v; }
    else if (key == "t_c") num(sc.t_c);
    else if (key == "first_instant") num(sc.first_instant);
    else if (key == "n_c") { double v; num(v); sc.n_c = (int)v; }
    else if (key == "t_end") num(sc.t_end);
    else if (key == "load_factor") num(sc.load_factor);
    else if (key == "seed") { double v; num(v); sc.seed = (std::uint64_t)v; }
    else throw ParseError(name_or_path, line_no, "unknown key '" + key + "'");
  }
  if (sc.t_clear <= sc.t_fault)
    throw ContractError("scenario: clearing time must follow inception");
  return sc;
}

int find_line(const PowerSystemCase& c, int from, int to) {
  for (size_t i = 0; i < c.lines.size(); ++i) {
    if ((c.lines[i].from == from && c.lines[i].to == to) ||
        (c.lines[i].from == to && c.lines[i].to == from))
      return static_cast<int>(i);
  }
  throw ContractError("no line between buses " + std::to_string(from) + " and " +
                      std::to_string(to));
}

EventSchedule scenario_events(const ScenarioConfig& sc, const PowerSystemCase& c,
                              double t_s) {
  (void)t_s;  // events fire at their exact times (step splitting)
  if (sc.fault_bus < 0) return {};  // fault-free scenario
  const double t_on = sc.t_fault;
  const double t_off = sc.t_clear;
  EventSchedule ev;
  ev.items.emplace_back(t_on, FaultOn{sc.fault_bus, sc.fault_g, sc.fault_b});
  ev.items.emplace_back(t_off, FaultOff{sc.fault_bus});
  ev.items.emplace_back(t_off, LineTrip{find_line(c, sc.trip_from, sc.trip_to)});
  return ev;
}

}  // namespace gridmpc
