#pragma once

#include <vector>

#include "gridmpc/qp.hpp"
#include "gridmpc/scenario.hpp"
#include "gridmpc/sensitivity.hpp"

namespace gridmpc {

struct MpcConfig {
  double t_c = 3.0;
  double t_s = 0.1;
  int horizon = 7;        // N, prediction horizon in control steps
  int control_steps = 5;  // N_c
  double r_weight = 1.0;  // per-bus deviation weight, scaled by t_s per sample
  double w_svc = 1.0;
  double w_ls = 100.0;    // shedding is the expensive last resort
  double v_ref = 1.0;
  // Terminal band enforced by the controller, tightened 0.005 p.u. inside
  // the reported [0.95, 1.05] operating band so linearization and surrogate
  // error cannot push the realized trajectory out of it.
  double v_min = 0.955;
  double v_max = 1.045;
  double qp_tol = 1e-8;

  int samples_per_interval() const;
  void validate() const;  // M integer, horizon > control_steps, weights sane
};

struct AvcConfig {
  double v_ref = 1.0;
  double deadband = 0.02;
  double t_mech = 5.0;

  /// Control instants until a tap decision takes effect: ceil(t_mech / t_c).
  int lookahead(double t_c) const;
};

/// Dead-band rule on the predicted LV voltage over the lookahead window
/// (2M samples): +1 when every sample sits at or below v_ref - db/2, -1 when
/// every sample sits at or above v_ref + db/2, else 0.
int ltc_decision(const Vec& v_lv_window, const AvcConfig& avc);

/// Whether the tap decision taken at the current instant contributes to the
/// predicted segment i: 0 when there is no decision, 0 before it takes
/// effect (i < delay), 1 afterwards.
int ltc_effect_indicator(bool k_is_decision_point, int i, int delay = 2);

/// Known LTC contribution to the prediction at the current instant.
struct LtcQpOffset {
  Vec ratio_delta;            // ratio change decided now, per LTC
  std::vector<bool> decided;  // per LTC: is this instant a decision point
  int delay = 2;

  static LtcQpOffset none(const PowerSystemCase& c, int delay = 2) {
    return {Vec::Zero(c.ltcs.size()),
            std::vector<bool>(c.ltcs.size(), false), delay};
  }
};

/// Assembles the receding-horizon QP at one control instant. The decision
/// vector stacks [svc..., ls...] increments over n_k instants; an increment
/// at instant j lifts every later segment through the cumulative-sum
/// prediction. horizon carries N*M samples; sens carries all channels in
/// [svc, ls, ltc] column order.
QpProblem build_qp(const SampleBlock& horizon, const SensitivityTensor& sens,
                   const LtcQpOffset& ltc, const PowerSystemCase& c,
                   const MpcConfig& cfg, int n_k);

/// solve_qp, then if infeasible re-solve with one slack relaxing rows
/// [relax_begin, relax_end) under a heavy penalty. Emergency control always
/// returns a command.
struct SlackSolve {
  QpSolution solution;
  double slack = 0.0;
  bool relaxed = false;
};
SlackSolve solve_qp_relaxing_rows(const QpProblem& p, int relax_begin,
                                  int relax_end, double tol);

struct OfflineStep {
  int instant = 0;
  double wall_seconds = 0.0;  // simulate + sensitivities + AVC + QP
  QpStatus status = QpStatus::kOptimal;
  double slack = 0.0;
};

struct OfflineResult {
  ControlSchedule schedule;
  SampleBlock trajectory;  // controlled closed-loop run over [0, t_end)
  std::vector<Simulator::TapEvent> tap_log;
  std::vector<OfflineStep> steps;
  PowerSystemCase completed_case;
};

/// The offline receding-horizon loop on the nominal model: per instant,
/// simulate the horizon baseline with archived Jacobians, propagate
/// sensitivities, let the AVCs decide taps (implemented after the mechanical
/// delay), solve the QP, commit the first move, advance the plant.
OfflineResult run_receding_horizon(const PowerSystemCase& c,
                                   const ScenarioConfig& scenario,
                                   const MpcConfig& cfg, const AvcConfig& avc);

}  // namespace gridmpc
