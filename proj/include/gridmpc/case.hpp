#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "gridmpc/common.hpp"

namespace gridmpc {

struct Bus {
  int id = 0;
  double v = 1.0;       // p.u. magnitude (power-flow seed / last solution)
  double theta = 0.0;   // rad
  double shunt_b = 0.0; // fixed shunt susceptance, p.u.
  bool is_lv_side = false;
  // Transient fault shunt, set/cleared by fault events.
  double fault_g = 0.0;
  double fault_b = 0.0;
};

struct Line {
  int from = 0;
  int to = 0;
  double r = 0.0;
  double x = 0.0;
  double b = 0.0;  // total charging susceptance
  bool in_service = true;
};

/// Classical machine: constant EMF behind transient reactance.
/// p_dispatch / v_setpoint feed the power flow; emf, pm, delta0 are filled in
/// by initialize_equilibrium.
struct Generator {
  int bus = 0;
  double h = 5.0;      // inertia, s
  double d = 0.0;      // damping, p.u.
  double xd_t = 0.1;   // transient reactance, p.u.
  double p_dispatch = 0.0;
  double v_setpoint = 1.0;
  bool reference = false;
  double emf = 0.0;
  double pm = 0.0;
  double delta0 = 0.0;
};

/// Exponential-recovery load. Consumed power: P = x_P/T_P + P0 (V/V0)^alpha_t.
struct ErLoad {
  int bus = 0;
  double p0 = 0.0;
  double q0 = 0.0;
  double t_p = 30.0;
  double t_q = 30.0;
  double alpha_s = 1.0;
  double alpha_t = 2.0;
  double beta_s = 1.0;
  double beta_t = 2.0;
  double v0 = 1.0;
};

/// Shunt compensator injecting b * V^2 of reactive power. b is the control.
struct SvcDevice {
  int bus = 0;
  double b = 0.0;         // current susceptance setting, p.u.
  double step_min = 0.0;  // per-control-step bounds on the increment
  double step_max = 0.2;
  double b_max = 1.0;     // cumulative susceptance limit
  // Legacy first-order dynamic parameters. The susceptance is injected
  // directly (zeroed dynamics), so these are documentation only.
  double k_r = 0.0;
  double t_r = 0.0;
};

struct LtcTransformer {
  int hv_bus = 0;
  int lv_bus = 0;
  double x = 0.08;          // series reactance, p.u.
  double ratio = 1.0;       // controllable ratio m; no-load V_lv = m * V_hv
  double tap_step = 0.01;   // p.u. ratio change per tap operation
  double ratio_min = 0.9;
  double ratio_max = 1.1;
  double t_mech = 5.0;      // mechanical delay, s
};

struct LsActuator {
  int bus = 0;            // must host an ErLoad
  double step_min = 0.0;  // per-control-step shed bounds, p.u.
  double step_max = 0.1;
  double shed_total = 0.0;  // cumulative shed so far, p.u.
};

/// Local AVC settings for one LTC's LV bus.
struct AvcSetting {
  int ltc = 0;  // index into ltcs
  double v_ref = 1.0;
  double deadband = 0.02;
};

struct PowerSystemCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<Generator> generators;
  std::vector<ErLoad> loads;
  std::vector<SvcDevice> svcs;
  std::vector<LtcTransformer> ltcs;
  std::vector<LsActuator> ls_actuators;
  std::vector<AvcSetting> avc;

  int n_buses() const { return static_cast<int>(buses.size()); }
  /// Position of a bus id in buses; throws ContractError for unknown ids.
  int bus_index(int bus_id) const;
  /// Indices of buses flagged as LV (distribution side behind an LTC).
  std::vector<int> lv_bus_indices() const;

  /// Checks all structural invariants; throws ContractError with the field
  /// name on violation.
  void validate() const;
};

/// Deviation from the case's stored device settings, the control vector the
/// DAE is differentiated against. All zeros = evaluate the case as stored.
struct ControlVector {
  Vec svc;  // susceptance offsets per SVC, p.u.
  Vec ls;   // additional shed per LS actuator, p.u.
  Vec ltc;  // tap-ratio offsets per LTC, p.u.

  static ControlVector zeros(const PowerSystemCase& c) {
    return {Vec::Zero(c.svcs.size()), Vec::Zero(c.ls_actuators.size()),
            Vec::Zero(c.ltcs.size())};
  }
};

/// One selected control channel for sensitivity work.
struct Channel {
  enum class Family { kSvc, kLs, kLtc };
  Family family = Family::kSvc;
  int index = 0;
};

std::vector<Channel> all_channels(const PowerSystemCase& c);
std::string channel_label(const PowerSystemCase& c, const Channel& ch);

// Discrete events.
struct FaultOn {
  int bus = 0;
  double g = 100.0;
  double b = -100.0;
};
struct FaultOff {
  int bus = 0;
};
struct LineTrip {
  int line = 0;  // index into lines
};
struct TapStep {
  int ltc = 0;
  int steps = 0;  // usually +/-1
};
struct LoadShed {
  int bus = 0;
  double dp = 0.0;  // p.u. reduction of P0 (Q0 follows proportionally)
};
using Event = std::variant<FaultOn, FaultOff, LineTrip, TapStep, LoadShed>;

/// Returns a copy with the event applied; the input case is untouched.
/// Tap steps saturate at the ratio limits; *saturated reports it when given.
PowerSystemCase apply_event(const PowerSystemCase& c, const Event& event,
                            bool* saturated = nullptr);

/// Scales every load's P0, Q0 by factor (guarded to [0.5, 1.5]). The caller
/// must re-run initialize_equilibrium afterwards.
PowerSystemCase scale_loads(const PowerSystemCase& c, double factor);

}  // namespace gridmpc
