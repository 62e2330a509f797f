#include "gridmpc/case.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace gridmpc {

int PowerSystemCase::bus_index(int bus_id) const {
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].id == bus_id) return static_cast<int>(i);
  throw ContractError("unknown bus id " + std::to_string(bus_id));
}

std::vector<int> PowerSystemCase::lv_bus_indices() const {
  std::vector<int> out;
  for (size_t i = 0; i < buses.size(); ++i)
    if (buses[i].is_lv_side) out.push_back(static_cast<int>(i));
  return out;
}

void PowerSystemCase::validate() const {
  if (base_mva <= 0.0) throw ContractError("base_mva must be positive");
  if (buses.empty()) throw ContractError("case has no buses");
  std::set<int> ids;
  for (const auto& b : buses) {
    if (!ids.insert(b.id).second)
      throw ContractError("duplicate bus id " + std::to_string(b.id));
    if (b.v <= 0.0) throw ContractError("bus voltage seed must be positive");
  }
  for (const auto& l : lines) {
    bus_index(l.from);
    bus_index(l.to);
    if (l.x == 0.0) throw ContractError("line reactance x must be nonzero");
  }
  int n_ref = 0;
  std::set<int> gen_buses;
  for (const auto& g : generators) {
    bus_index(g.bus);
    if (g.h <= 0.0) throw ContractError("generator inertia H must be positive");
    if (g.xd_t <= 0.0) throw ContractError("generator xd' must be positive");
    if (!gen_buses.insert(g.bus).second)
      throw ContractError("multiple generators on bus " + std::to_string(g.bus));
    if (g.reference) ++n_ref;
  }
  if (!generators.empty() && n_ref != 1)
    throw ContractError("exactly one generator must be the angle reference");
  for (const auto& l : loads) {
    bus_index(l.bus);
    if (l.t_p <= 0.0 || l.t_q <= 0.0)
      throw ContractError("load recovery time constants must be positive");
    if (l.p0 < 0.0 || l.q0 < 0.0)
      throw ContractError("load base powers P0, Q0 must be nonnegative");
    if (l.v0 <= 0.0) throw ContractError("load reference voltage must be positive");
  }
  for (const auto& s : svcs) {
    bus_index(s.bus);
    if (s.b < 0.0 || s.b > s.b_max)
      throw ContractError("svc susceptance outside [0, b_max]");
  }
  for (const auto& t : ltcs) {
    bus_index(t.hv_bus);
    bus_index(t.lv_bus);
    if (t.x == 0.0) throw ContractError("ltc reactance must be nonzero");
    if (t.ratio < t.ratio_min - 1e-12 || t.ratio > t.ratio_max + 1e-12)
      throw ContractError("ltc ratio outside its tap limits");
    if (t.tap_step <= 0.0) throw ContractError("ltc tap step must be positive");
  }
  for (const auto& a : ls_actuators) {
    const int bi = bus_index(a.bus);
    (void)bi;
    const bool has_load = std::any_of(loads.begin(), loads.end(), [&](const ErLoad& l) {
      return l.bus == a.bus && l.p0 > 0.0;
    });
    if (!has_load)
      throw ContractError("ls actuator on bus " + std::to_string(a.bus) +
                          " without a sheddable load");
  }
  for (const auto& a : avc) {
    if (a.ltc < 0 || a.ltc >= static_cast<int>(ltcs.size()))
      throw ContractError("avc references unknown ltc index");
    if (a.deadband <= 0.0) throw ContractError("avc dead-band must be positive");
  }
}

std::vector<Channel> all_channels(const PowerSystemCase& c) {
  std::vector<Channel> ch;
  for (size_t i = 0; i < c.svcs.size(); ++i)
    ch.push_back({Channel::Family::kSvc, static_cast<int>(i)});
  for (size_t i = 0; i < c.ls_actuators.size(); ++i)
    ch.push_back({Channel::Family::kLs, static_cast<int>(i)});
  for (size_t i = 0; i < c.ltcs.size(); ++i)
    ch.push_back({Channel::Family::kLtc, static_cast<int>(i)});
  return ch;
}

std::string channel_label(const PowerSystemCase& c, const Channel& ch) {
  switch (ch.family) {
    case Channel::Family::kSvc:
      return "svc:" + std::to_string(c.svcs.at(ch.index).bus);
    case Channel::Family::kLs:
      return "ls:" + std::to_string(c.ls_actuators.at(ch.index).bus);
    case Channel::Family::kLtc:
      return "ltc:" + std::to_string(ch.index);
  }
  return "?";
}

PowerSystemCase apply_event(const PowerSystemCase& c, const Event& event,
                            bool* saturated) {
  if (saturated) *saturated = false;
  PowerSystemCase out = c;
  if (const auto* on = std::get_if<FaultOn>(&event)) {
    Bus& b = out.buses[out.bus_index(on->bus)];
    b.fault_g = on->g;
    b.fault_b = on->b;
  } else if (const auto* off = std::get_if<FaultOff>(&event)) {
    Bus& b = out.buses[out.bus_index(off->bus)];
    b.fault_g = 0.0;
    b.fault_b = 0.0;
  } else if (const auto* trip = std::get_if<LineTrip>(&event)) {
    if (trip->line < 0 || trip->line >= static_cast<int>(out.lines.size()))
      throw ContractError("line-trip references unknown line index");
    out.lines[trip->line].in_service = false;
  } else if (const auto* tap = std::get_if<TapStep>(&event)) {
    if (tap->ltc < 0 || tap->ltc >= static_cast<int>(out.ltcs.size()))
      throw ContractError("tap-step references unknown ltc index");
    LtcTransformer& t = out.ltcs[tap->ltc];
    double m = t.ratio + tap->steps * t.tap_step;
    if (m > t.ratio_max + 1e-12) {
      m = t.ratio_max;
      if (saturated) *saturated = true;
    } else if (m < t.ratio_min - 1e-12) {
      m = t.ratio_min;
      if (saturated) *saturated = true;
    }
    t.ratio = m;
  } else if (const auto* shed = std::get_if<LoadShed>(&event)) {
    const int bi = out.bus_index(shed->bus);
    (void)bi;
    ErLoad* load = nullptr;
    for (auto& l : out.loads)
      if (l.bus == shed->bus) load = &l;
    if (!load) throw ContractError("load-shed on a bus without a load");
    if (shed->dp < 0.0) throw ContractError("load-shed amount must be nonnegative");
    if (shed->dp > load->p0 + 1e-12)
      throw DomainError("load-shed exceeds the remaining load at bus " +
                        std::to_string(shed->bus));
    const double ratio = load->p0 > 0.0 ? load->q0 / load->p0 : 0.0;
    load->p0 = std::max(0.0, load->p0 - shed->dp);
    load->q0 = std::max(0.0, load->q0 - shed->dp * ratio);
    for (auto& a : out.ls_actuators)
      if (a.bus == shed->bus) a.shed_total += shed->dp;
  }
  return out;
}

PowerSystemCase scale_loads(const PowerSystemCase& c, double factor) {
  if (factor < 0.5 || factor > 1.5)
    throw DomainError("scale_loads factor outside the [0.5, 1.5] guard");
  PowerSystemCase out = c;
  for (auto& l : out.loads) {
    l.p0 *= factor;
    l.q0 *= factor;
  }
  return out;
}

}  // namespace gridmpc
