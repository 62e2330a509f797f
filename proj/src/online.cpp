#include "gridmpc/online.hpp"

#include <chrono>
#include <cmath>

#include "gridmpc/sensitivity.hpp"

namespace gridmpc {

Mat predict_nominal(const MlpModel& f1, const MeasurementBuffer& buffer,
                    const Vec& u_nom) {
  const int nb = static_cast<int>(buffer.v.rows());
  const int m = static_cast<int>(buffer.v.cols());
  Vec input(nb * m + u_nom.size());
  input << flatten_bus_major(buffer.v), u_nom;
  const Vec out = mlp_forward(f1, input);
  Mat v(nb, m);
  for (int b = 0; b < nb; ++b)
    for (int s = 0; s < m; ++s) v(b, s) = out(b * m + s);
  return v;
}

SensitivityTensor predict_sensitivity(const MlpModel& f2, const Mat& v_nominal,
                                      const PowerSystemCase& c, const Vec& times) {
  const int nb = static_cast<int>(v_nominal.rows());
  const int m = static_cast<int>(v_nominal.cols());
  const auto channels = all_channels(c);
  const int nc = static_cast<int>(channels.size());
  const Vec out = mlp_forward(f2, flatten_bus_major(v_nominal));
  if (out.size() != nb * m * nc)
    throw ContractError("predict_sensitivity: model output does not hold all channels");
  SensitivityTensor tensor;
  tensor.times = times;
  for (const auto& ch : channels) tensor.labels.push_back(channel_label(c, ch));
  tensor.s.assign(m, Mat::Zero(nb, nc));
  for (int b = 0; b < nb; ++b)
    for (int s = 0; s < m; ++s)
      for (int ch = 0; ch < nc; ++ch)
        tensor.s[s](b, ch) = out((b * m + s) * nc + ch);
  return tensor;
}

Mat avc_predict(const MlpModel& f3, const Mat& v_lv_history) {
  const int n_lv = static_cast<int>(v_lv_history.rows());
  const int m = static_cast<int>(v_lv_history.cols());
  const Vec out = mlp_forward(f3, flatten_bus_major(v_lv_history));
  if (out.size() != n_lv * 2 * m)
    throw ContractError("avc_predict: model output is not an n_lv x 2M window");
  Mat v(n_lv, 2 * m);
  for (int b = 0; b < n_lv; ++b)
    for (int s = 0; s < 2 * m; ++s) v(b, s) = out(b * 2 * m + s);
  return v;
}

CorrectionSolve single_step_correction(const Mat& v_nominal,
                                       const SensitivityTensor& sens,
                                       const Vec& u_nom, const Vec& ltc_ratio_delta,
                                       const PowerSystemCase& c,
                                       const OnlineConfig& cfg) {
  const int nb = static_cast<int>(v_nominal.rows());
  const int m = static_cast<int>(v_nominal.cols());
  const int n_svc = static_cast<int>(c.svcs.size());
  const int n_ls = static_cast<int>(c.ls_actuators.size());
  const int n_ltc = static_cast<int>(c.ltcs.size());
  const int n_u = n_svc + n_ls;
  if (sens.samples() != m || sens.channels() != n_u + n_ltc)
    throw ContractError("single_step_correction: sensitivity grid mismatch");
  if (u_nom.size() != n_u || ltc_ratio_delta.size() != n_ltc)
    throw ContractError("single_step_correction: control dimensions mismatch");

  // R_delta and w_delta are the one-segment truncations of the offline
  // weights (same per-sample scaling).
  const double r = cfg.r_weight * (sens.times.size() > 1
                                       ? sens.times(1) - sens.times(0)
                                       : 1.0);
  QpProblem p;
  p.H = Mat::Zero(n_u, n_u);
  p.c = Vec::Zero(n_u);
  Mat s_end;
  Vec v_end;
  for (int t = 0; t < m; ++t) {
    const Mat sc = sens.s[t].leftCols(n_u);
    Vec off = Vec::Zero(nb);
    for (int l = 0; l < n_ltc; ++l)
      off += sens.s[t].col(n_u + l) * ltc_ratio_delta(l);
    const Vec d = v_nominal.col(t).array() - cfg.v_ref + off.array();
    p.H += 2.0 * r * sc.transpose() * sc;
    p.c += 2.0 * r * sc.transpose() * d;
    if (t + 1 == m) {
      s_end = sc;
      v_end = v_nominal.col(t) + off;
    }
  }
  p.c.head(n_svc).array() += cfg.w_svc;
  p.c.tail(n_ls).array() += cfg.w_ls;
  p.H += 1e-8 * std::max(1.0, p.H.cwiseAbs().maxCoeff()) * Mat::Identity(n_u, n_u);

  // Absolute bounds on the applied control: u_min <= u_nom + du <= u_max,
  // with the remaining cumulative headroom folded into the upper side.
  p.lb = Vec::Zero(n_u);
  p.ub = Vec::Zero(n_u);
  for (int d = 0; d < n_svc; ++d) {
    const double cap = std::min(c.svcs[d].step_max,
                                std::max(0.0, c.svcs[d].b_max - c.svcs[d].b));
    p.lb(d) = c.svcs[d].step_min - u_nom(d);
    p.ub(d) = cap - u_nom(d);
    if (p.ub(d) < p.lb(d)) p.lb(d) = p.ub(d);
  }
  for (int d = 0; d < n_ls; ++d) {
    double p0 = 0.0;
    for (const auto& load : c.loads)
      if (load.bus == c.ls_actuators[d].bus) p0 = load.p0;
    const double cap = std::min(c.ls_actuators[d].step_max, p0);
    p.lb(n_svc + d) = c.ls_actuators[d].step_min - u_nom(n_svc + d);
    p.ub(n_svc + d) = cap - u_nom(n_svc + d);
    if (p.ub(n_svc + d) < p.lb(n_svc + d)) p.lb(n_svc + d) = p.ub(n_svc + d);
  }

  p.A = Mat::Zero(2 * nb, n_u);
  p.b = Vec::Zero(2 * nb);
  p.A.topRows(nb) = s_end;
  p.b.head(nb) = (cfg.v_max - v_end.array()).matrix();
  p.A.bottomRows(nb) = -s_end;
  p.b.tail(nb) = (v_end.array() - cfg.v_min).matrix();

  const SlackSolve solved = solve_qp_relaxing_rows(p, 0, 2 * nb, cfg.qp_tol);
  CorrectionSolve out;
  out.du = solved.solution.z.cwiseMax(p.lb).cwiseMin(p.ub);
  out.slack = solved.slack;
  out.status = solved.solution.status;
  return out;
}

OnlineResult run_online_loop(const PowerSystemCase& input,
                             const ScenarioConfig& scenario,
                             const ControlSchedule& nominal, const MlpModel& f1,
                             const MlpModel& f2, const MlpModel& f3,
                             const MpcConfig& grid, const AvcConfig& avc,
                             const OnlineConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const int m = grid.samples_per_interval();
  const PowerSystemCase c = scenario.load_factor == 1.0
                                ? input
                                : scale_loads(input, scenario.load_factor);
  const auto lv = c.lv_bus_indices();
  const int delay = nominal.ltc_delay_instants;

  IntegratorConfig icfg;
  icfg.t_s = grid.t_s;
  Simulator plant = Simulator::from_equilibrium(c, 0.0, icfg);
  plant.add_events(scenario_events(scenario, c, grid.t_s));

  std::vector<AvcConfig> avcs(c.ltcs.size(), avc);
  for (const auto& setting : c.avc) {
    avcs[setting.ltc].v_ref = setting.v_ref;
    avcs[setting.ltc].deadband = setting.deadband;
  }

  OnlineResult result;
  const double pre = scenario.first_instant - grid.t_c;
  if (pre < 0.0)
    throw ContractError("online loop needs one interval of history before k = 0");
  if (pre > 0.0) result.trajectory = plant.advance(pre);
  SampleBlock last_seg = plant.advance(grid.t_c);
  result.trajectory.append(last_seg);

  auto fill_buffer = [&](const SampleBlock& seg) {
    MeasurementBuffer buf;
    buf.v = seg.v;
    buf.v_lv = Mat(lv.size(), seg.samples());
    for (size_t b = 0; b < lv.size(); ++b) buf.v_lv.row(b) = seg.v.row(lv[b]);
    return buf;
  };

  std::vector<std::vector<int>> real_decisions(nominal.num_instants(),
                                               std::vector<int>(c.ltcs.size(), 0));
  std::vector<int> blocked_until(c.ltcs.size(), 0);

  for (int k = 0; k < nominal.num_instants(); ++k) {
    const MeasurementBuffer buffer = fill_buffer(last_seg);
    const Vec u_nom = [&] {
      Vec u(c.svcs.size() + c.ls_actuators.size());
      u << nominal.entries[k].svc, nominal.entries[k].ls;
      return u;
    }();

    const auto t_begin = clock::now();
    const Mat vbar = predict_nominal(f1, buffer, u_nom);
    Vec times(m);
    for (int s = 0; s < m; ++s)
      times(s) = scenario.instant_time(k) + s * grid.t_s;
    const SensitivityTensor sens = predict_sensitivity(f2, vbar, c, times);
    const Mat vlv_hat = avc_predict(f3, buffer.v_lv);

    CorrectionRecord rec;
    rec.instant = k;
    rec.dn_ltc.assign(c.ltcs.size(), 0);
    for (size_t t = 0; t < c.ltcs.size(); ++t) {
      if (k < blocked_until[t]) continue;
      const int dn = ltc_decision(vlv_hat.row(t).transpose(), avcs[t]);
      if (dn != 0) {
        rec.dn_ltc[t] = dn;
        real_decisions[k][t] = dn;
        blocked_until[t] = k + delay;
      }
    }

    // Taps implemented now: the real decision from k - delay corrects the
    // nominal plan's tap at this instant through the LTC sensitivity column.
    std::vector<int> real_tap(c.ltcs.size(), 0), nominal_tap(c.ltcs.size(), 0);
    if (k - delay >= 0) {
      real_tap = real_decisions[k - delay];
      nominal_tap = nominal.entries[k - delay].ltc_decision;
    }
    Vec ltc_delta = Vec::Zero(c.ltcs.size());
    for (size_t t = 0; t < c.ltcs.size(); ++t)
      ltc_delta(t) = (real_tap[t] - nominal_tap[t]) * c.ltcs[t].tap_step;

    const CorrectionSolve solved = single_step_correction(
        vbar, sens, u_nom, ltc_delta, plant.current_case(), cfg);
    rec.solve_seconds =
        std::chrono::duration<double>(clock::now() - t_begin).count();
    rec.slack = solved.slack;
    rec.u_nom = u_nom;
    rec.du = solved.du;
    rec.u_real = u_nom + solved.du;

    ControlMove move = ControlMove::zeros(plant.current_case());
    move.svc_delta = rec.u_real.head(c.svcs.size());
    move.ls_shed = rec.u_real.tail(c.ls_actuators.size()).cwiseMax(0.0);
    move.tap_steps = real_tap;
    plant.apply_control_move(move);

    last_seg = plant.advance(grid.t_c);
    result.trajectory.append(last_seg);
    rec.prediction_rmse =
        std::sqrt((vbar - last_seg.v).squaredNorm() / (vbar.rows() * vbar.cols()));
    result.records.push_back(std::move(rec));
  }

  // Implement whatever real decisions are still pending, then ride out.
  double t = scenario.instant_time(nominal.num_instants());
  for (int k = std::max(0, nominal.num_instants() - delay);
       k < nominal.num_instants(); ++k) {
    for (size_t l = 0; l < c.ltcs.size(); ++l) {
      if (real_decisions[k][l] == 0) continue;
      const double ti = scenario.instant_time(k + delay);
      if (ti < scenario.t_end)
        plant.add_event(ti, TapStep{static_cast<int>(l), real_decisions[k][l]});
    }
  }
  if (scenario.t_end > t)
    result.trajectory.append(plant.advance(scenario.t_end - t));

  for (const auto& rec : result.records) {
    result.mean_step_seconds += rec.solve_seconds / result.records.size();
    result.max_step_seconds = std::max(result.max_step_seconds, rec.solve_seconds);
  }
  result.tap_log = plant.tap_log();
  result.final_case = plant.current_case();
  return result;
}

}  // namespace gridmpc
