#include "gridmpc/mpc.hpp"

#include <chrono>
#include <cmath>

namespace gridmpc {

int MpcConfig::samples_per_interval() const {
  const long m = std::lround(t_c / t_s);
  if (m < 1 || std::abs(static_cast<double>(m) * t_s - t_c) > 1e-9)
    throw ContractError("MpcConfig: t_c must be an integer multiple of t_s");
  return static_cast<int>(m);
}

void MpcConfig::validate() const {
  samples_per_interval();
  if (control_steps < 1) throw ContractError("MpcConfig: control_steps must be >= 1");
  if (horizon <= control_steps)
    throw ContractError("MpcConfig: prediction horizon N must exceed N_c");
  if (r_weight <= 0.0) throw ContractError("MpcConfig: R must be positive definite");
  if (w_svc < 0.0 || w_ls < 0.0)
    throw ContractError("MpcConfig: control weights must be nonnegative");
  if (v_min >= v_max) throw ContractError("MpcConfig: empty terminal band");
}

int AvcConfig::lookahead(double t_c) const {
  return static_cast<int>(std::ceil(t_mech / t_c - 1e-12));
}

int ltc_decision(const Vec& v_lv_window, const AvcConfig& avc) {
  if (v_lv_window.size() == 0) throw ContractError("ltc_decision: empty window");
  const double lo = avc.v_ref - avc.deadband / 2.0;
  const double hi = avc.v_ref + avc.deadband / 2.0;
  if ((v_lv_window.array() <= lo).all()) return +1;
  if ((v_lv_window.array() >= hi).all()) return -1;
  return 0;
}

int ltc_effect_indicator(bool k_is_decision_point, int i, int delay) {
  if (!k_is_decision_point) return 0;
  if (i < delay) return 0;
  return 1;
}

QpProblem build_qp(const SampleBlock& horizon, const SensitivityTensor& sens,
                   const LtcQpOffset& ltc, const PowerSystemCase& c,
                   const MpcConfig& cfg, int n_k) {
  cfg.validate();
  const int m = cfg.samples_per_interval();
  const int n_samples = horizon.samples();
  if (n_samples != cfg.horizon * m)
    throw ContractError("build_qp: horizon block does not carry N*M samples");
  if (sens.samples() != n_samples)
    throw ContractError("build_qp: sensitivity grid does not match the horizon");
  if (n_k < 1 || n_k > cfg.control_steps)
    throw ContractError("build_qp: n_k out of range");
  const int n_svc = static_cast<int>(c.svcs.size());
  const int n_ls = static_cast<int>(c.ls_actuators.size());
  const int n_ltc = static_cast<int>(c.ltcs.size());
  const int n_u = n_svc + n_ls;
  if (sens.channels() != n_u + n_ltc)
    throw ContractError("build_qp: expected svc+ls+ltc sensitivity channels");
  if (ltc.ratio_delta.size() != n_ltc)
    throw ContractError("build_qp: ltc offset dimension mismatch");
  const int dim = n_u * n_k;
  const int nb = c.n_buses();
  const double r = cfg.r_weight * cfg.t_s;

  // Per-segment accumulators of S'RS and S'Rd with d = vbar + off - v_ref.
  std::vector<Mat> seg_a(cfg.horizon, Mat::Zero(n_u, n_u));
  std::vector<Vec> seg_b(cfg.horizon, Vec::Zero(n_u));
  Vec off_end = Vec::Zero(nb);
  Mat s_end;
  for (int t = 0; t < n_samples; ++t) {
    const int seg = t / m;
    const Mat& st = sens.s[t];
    Vec off = Vec::Zero(nb);
    for (int l = 0; l < n_ltc; ++l) {
      const int ind = ltc_effect_indicator(ltc.decided[l], seg, ltc.delay);
      if (ind != 0) off += st.col(n_u + l) * ltc.ratio_delta(l);
    }
    const Mat sc = st.leftCols(n_u);
    const Vec d = horizon.v.col(t).array() - cfg.v_ref + off.array();
    seg_a[seg] += sc.transpose() * sc;
    seg_b[seg] += sc.transpose() * d;
    if (t + 1 == n_samples) {
      off_end = off;
      s_end = sc;
    }
  }

  QpProblem p;
  p.H = Mat::Zero(dim, dim);
  p.c = Vec::Zero(dim);
  for (int seg = 0; seg < cfg.horizon; ++seg) {
    const int jmax = std::min(seg, n_k - 1);
    for (int a = 0; a <= jmax; ++a) {
      p.c.segment(a * n_u, n_u) += 2.0 * r * seg_b[seg];
      for (int b = 0; b <= jmax; ++b)
        p.H.block(a * n_u, b * n_u, n_u, n_u) += 2.0 * r * seg_a[seg];
    }
  }
  // Linear control costs, then a tiny ridge so H stays strictly convex even
  // when sensitivities vanish.
  for (int j = 0; j < n_k; ++j) {
    p.c.segment(j * n_u, n_svc).array() += cfg.w_svc;
    p.c.segment(j * n_u + n_svc, n_ls).array() += cfg.w_ls;
  }
  const double ridge = 1e-8 * std::max(1.0, p.H.cwiseAbs().maxCoeff());
  p.H += ridge * Mat::Identity(dim, dim);

  // Per-step device bounds.
  p.lb = Vec::Zero(dim);
  p.ub = Vec::Zero(dim);
  Vec headroom_svc(n_svc), headroom_ls(n_ls);
  for (int d = 0; d < n_svc; ++d)
    headroom_svc(d) = std::max(0.0, c.svcs[d].b_max - c.svcs[d].b);
  for (int d = 0; d < n_ls; ++d) {
    double p0 = 0.0;
    for (const auto& load : c.loads)
      if (load.bus == c.ls_actuators[d].bus) p0 = load.p0;
    headroom_ls(d) = std::max(0.0, p0);
  }
  for (int j = 0; j < n_k; ++j) {
    for (int d = 0; d < n_svc; ++d) {
      p.lb(j * n_u + d) = std::max(0.0, c.svcs[d].step_min);
      p.ub(j * n_u + d) = std::min(c.svcs[d].step_max, headroom_svc(d));
    }
    for (int d = 0; d < n_ls; ++d) {
      p.lb(j * n_u + n_svc + d) = std::max(0.0, c.ls_actuators[d].step_min);
      p.ub(j * n_u + n_svc + d) =
          std::min(c.ls_actuators[d].step_max, headroom_ls(d));
    }
  }

  // Cumulative caps over the move sequence, then the terminal voltage band
  // rows on the last horizon sample (relaxable, so they come last).
  std::vector<std::pair<Vec, double>> rows;
  if (n_k > 1) {
    for (int d = 0; d < n_svc; ++d) {
      Vec row = Vec::Zero(dim);
      for (int j = 0; j < n_k; ++j) row(j * n_u + d) = 1.0;
      rows.emplace_back(row, headroom_svc(d));
    }
    for (int d = 0; d < n_ls; ++d) {
      Vec row = Vec::Zero(dim);
      for (int j = 0; j < n_k; ++j) row(j * n_u + n_svc + d) = 1.0;
      rows.emplace_back(row, headroom_ls(d));
    }
  }
  Mat p_last(nb, dim);
  for (int j = 0; j < n_k; ++j) p_last.middleCols(j * n_u, n_u) = s_end;
  const Vec v_last = horizon.v.col(n_samples - 1) + off_end;
  for (int b = 0; b < nb; ++b)
    rows.emplace_back(p_last.row(b).transpose(), cfg.v_max - v_last(b));
  for (int b = 0; b < nb; ++b)
    rows.emplace_back(-p_last.row(b).transpose(), v_last(b) - cfg.v_min);

  p.A = Mat::Zero(static_cast<int>(rows.size()), dim);
  p.b = Vec::Zero(static_cast<int>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    p.A.row(static_cast<int>(i)) = rows[i].first.transpose();
    p.b(static_cast<int>(i)) = rows[i].second;
  }
  return p;
}

SlackSolve solve_qp_relaxing_rows(const QpProblem& p, int relax_begin, int relax_end,
                                  double tol) {
  SlackSolve out;
  out.solution = solve_qp(p, tol);
  if (out.solution.status != QpStatus::kInfeasible) return out;

  const int n = p.num_vars();
  const int m = p.num_ineq();
  const double scale = 1.0 + p.H.cwiseAbs().maxCoeff() + p.c.cwiseAbs().maxCoeff();
  QpProblem relaxed;
  relaxed.H = Mat::Zero(n + 1, n + 1);
  relaxed.H.topLeftCorner(n, n) = p.H;
  relaxed.H(n, n) = 1e6 * scale;
  relaxed.c = Vec::Zero(n + 1);
  relaxed.c.head(n) = p.c;
  relaxed.c(n) = 1e6 * scale;
  relaxed.A = Mat::Zero(m, n + 1);
  relaxed.A.leftCols(n) = p.A;
  for (int r = relax_begin; r < relax_end; ++r) relaxed.A(r, n) = -1.0;
  relaxed.b = p.b;
  relaxed.lb = Vec::Zero(n + 1);
  relaxed.lb.head(n) = p.lb;
  relaxed.ub = Vec::Constant(n + 1, std::numeric_limits<double>::infinity());
  relaxed.ub.head(n) = p.ub;

  const QpSolution rs = solve_qp(relaxed, tol);
  out.relaxed = true;
  out.slack = rs.z(n);
  out.solution = rs;
  out.solution.z = rs.z.head(n);
  out.solution.mult_ub = rs.mult_ub.head(n);
  out.solution.mult_lb = rs.mult_lb.head(n);
  return out;
}

OfflineResult run_receding_horizon(const PowerSystemCase& input,
                                   const ScenarioConfig& scenario,
                                   const MpcConfig& cfg, const AvcConfig& avc) {
  using clock = std::chrono::steady_clock;
  cfg.validate();
  const int m = cfg.samples_per_interval();
  const PowerSystemCase c = scenario.load_factor == 1.0
                                ? input
                                : scale_loads(input, scenario.load_factor);

  IntegratorConfig icfg;
  icfg.t_s = cfg.t_s;
  Simulator plant = Simulator::from_equilibrium(c, 0.0, icfg);
  plant.add_events(scenario_events(scenario, c, cfg.t_s));
  const int delay = avc.lookahead(cfg.t_c);

  OfflineResult result;
  result.schedule.case_name = c.name;
  result.schedule.first_time = scenario.first_instant;
  result.schedule.t_c = cfg.t_c;
  result.schedule.ltc_delay_instants = delay;

  // AVC settings per LTC (case file overrides the defaults).
  std::vector<AvcConfig> avcs(c.ltcs.size(), avc);
  for (const auto& setting : c.avc) {
    avcs[setting.ltc].v_ref = setting.v_ref;
    avcs[setting.ltc].deadband = setting.deadband;
  }

  result.trajectory = plant.advance(scenario.first_instant);
  std::vector<int> blocked_until(c.ltcs.size(), 0);

  const auto channels = all_channels(c);
  for (int k = 0; k < cfg.control_steps; ++k) {
    const int n_k = cfg.control_steps - k;

    // Taps decided at k - delay are implemented now, before anything else.
    ControlMove taps_now = ControlMove::zeros(plant.current_case());
    if (k - delay >= 0)
      taps_now.tap_steps = result.schedule.entries[k - delay].ltc_decision;
    if (!taps_now.is_zero()) plant.apply_control_move(taps_now);

    const auto t_begin = clock::now();

    Simulator branch = plant;
    branch.set_archive(true);
    // A tap decided at k-1 lands inside the horizon; it is committed, so it
    // belongs to the baseline as a scheduled event.
    if (k - delay + 1 >= 0 && k - delay + 1 < k) {
      const auto& dec = result.schedule.entries[k - delay + 1].ltc_decision;
      for (size_t t = 0; t < dec.size(); ++t)
        if (dec[t] != 0)
          branch.add_event(scenario.instant_time(k + 1),
                           TapStep{static_cast<int>(t), dec[t]});
    }
    const SampleBlock horizon = branch.advance(cfg.horizon * cfg.t_c);
    const SensitivityTensor sens =
        propagate_sensitivities(horizon, branch.current_case(), channels);

    // Local AVCs decide on the no-new-control prediction.
    ScheduleEntry entry;
    entry.ltc_decision.assign(c.ltcs.size(), 0);
    LtcQpOffset offset = LtcQpOffset::none(c, delay);
    for (size_t t = 0; t < c.ltcs.size(); ++t) {
      if (k < blocked_until[t]) continue;
      const int lv = c.bus_index(c.ltcs[t].lv_bus);
      Vec window(delay * m);
      for (int s = 0; s < delay * m; ++s) window(s) = horizon.v(lv, s);
      const int dn = ltc_decision(window, avcs[t]);
      if (dn != 0) {
        entry.ltc_decision[t] = dn;
        blocked_until[t] = k + delay;
        offset.ratio_delta(static_cast<int>(t)) =
            dn * plant.current_case().ltcs[t].tap_step;
        offset.decided[t] = true;
      }
    }

    const QpProblem qp =
        build_qp(horizon, sens, offset, plant.current_case(), cfg, n_k);
    const int n_terminal = 2 * c.n_buses();
    const SlackSolve solved = solve_qp_relaxing_rows(
        qp, qp.num_ineq() - n_terminal, qp.num_ineq(), cfg.qp_tol);

    const int n_u = static_cast<int>(c.svcs.size() + c.ls_actuators.size());
    // The relaxed solve can leave bound violations at the solver tolerance;
    // the committed move must respect the device limits exactly.
    const Vec first = solved.solution.z.head(n_u)
                          .cwiseMax(qp.lb.head(n_u))
                          .cwiseMin(qp.ub.head(n_u));
    entry.svc = first.head(c.svcs.size());
    entry.ls = first.tail(c.ls_actuators.size());

    const double wall =
        std::chrono::duration<double>(clock::now() - t_begin).count();
    result.steps.push_back({k, wall, solved.solution.status, solved.slack});
    result.schedule.entries.push_back(entry);

    ControlMove move = ControlMove::zeros(plant.current_case());
    move.svc_delta = entry.svc;
    move.ls_shed = entry.ls;
    plant.apply_control_move(move);
    result.trajectory.append(plant.advance(cfg.t_c));
  }

  // Ride out the rest of the scenario, implementing leftover tap decisions.
  double t = scenario.instant_time(cfg.control_steps);
  for (const auto& [instant, ltc, steps] :
       result.schedule.pending_taps_after_end()) {
    const double ti = result.schedule.instant_time(instant);
    if (ti < scenario.t_end) plant.add_event(ti, TapStep{ltc, steps});
  }
  if (scenario.t_end > t) result.trajectory.append(plant.advance(scenario.t_end - t));

  result.tap_log = plant.tap_log();
  result.completed_case = plant.current_case();
  result.schedule.validate_ltc_protocol();
  return result;
}

}  // namespace gridmpc
