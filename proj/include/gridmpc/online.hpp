#pragma once

#include "gridmpc/dataset.hpp"
#include "gridmpc/mlp.hpp"
#include "gridmpc/mpc.hpp"

namespace gridmpc {

/// Weights and bounds of the single-step correction QP (the truncated
/// one-interval version of the offline objective).
struct OnlineConfig {
  double r_weight = 1.0;
  double w_svc = 1.0;
  double w_ls = 100.0;
  double v_ref = 1.0;
  double v_min = 0.955;  // per-instant band, applied at the segment end
  double v_max = 1.045;
  double qp_tol = 1e-8;
};

/// Last control interval of plant measurements.
struct MeasurementBuffer {
  Mat v;     // N_b x M
  Mat v_lv;  // n_lv x M
};

struct CorrectionRecord {
  int instant = 0;
  Vec u_nom;    // stored nominal increments [svc; ls]
  Vec du;       // computed correction
  Vec u_real;   // applied = u_nom + du, box-projected
  std::vector<int> dn_ltc;  // AVC decisions taken at this instant
  double solve_seconds = 0.0;  // predict + decide + QP only
  double prediction_rmse = 0.0;  // predicted vs realized segment
  double slack = 0.0;
};

/// f_DNN-1: nominal-control trajectory prediction from the last measured
/// segment and the stored nominal move. Returns N_b x M.
Mat predict_nominal(const MlpModel& f1, const MeasurementBuffer& buffer,
                    const Vec& u_nom);

/// f_DNN-2: sensitivity prediction from the predicted segment. Returns the
/// per-sample tensor over all [svc, ls, ltc] channels.
SensitivityTensor predict_sensitivity(const MlpModel& f2, const Mat& v_nominal,
                                      const PowerSystemCase& c, const Vec& times);

/// f_DNN-3: LV-side lookahead (no further control actions assumed).
/// Returns n_lv x 2M.
Mat avc_predict(const MlpModel& f3, const Mat& v_lv_history);

struct CorrectionSolve {
  Vec du;
  double slack = 0.0;
  QpStatus status = QpStatus::kOptimal;
};

/// The single-step QP: minimize the one-segment voltage deviation plus the
/// linear correction cost, subject to the absolute per-step bounds
/// u_min <= u_nom + du <= u_max (and remaining device headroom) and the
/// per-instant voltage band at the segment end. Infeasible bands are relaxed
/// through a heavy slack; a command is always produced.
CorrectionSolve single_step_correction(const Mat& v_nominal,
                                       const SensitivityTensor& sens,
                                       const Vec& u_nom, const Vec& ltc_ratio_delta,
                                       const PowerSystemCase& c,
                                       const OnlineConfig& cfg);

struct OnlineResult {
  std::vector<CorrectionRecord> records;
  SampleBlock trajectory;  // full closed-loop run over [0, t_end)
  std::vector<Simulator::TapEvent> tap_log;
  double mean_step_seconds = 0.0;
  double max_step_seconds = 0.0;
  PowerSystemCase final_case;
};

/// The real-time correction loop against a (load-scaled) plant: at each
/// control instant read the measurement buffer, predict with the surrogates,
/// let the AVC rule decide taps (implemented after the delay), solve the
/// correction QP, apply u_nom + du to the plant, and advance one interval.
OnlineResult run_online_loop(const PowerSystemCase& c, const ScenarioConfig& scenario,
                             const ControlSchedule& nominal, const MlpModel& f1,
                             const MlpModel& f2, const MlpModel& f3,
                             const MpcConfig& grid, const AvcConfig& avc,
                             const OnlineConfig& cfg);

}  // namespace gridmpc
