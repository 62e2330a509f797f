#pragma once

#include <string>
#include <vector>

#include "gridmpc/integrator.hpp"

namespace gridmpc {

/// Voltage-trajectory sensitivities: per sample an N_b x n_channels matrix in
/// p.u. voltage per p.u. control.
struct SensitivityTensor {
  std::vector<std::string> labels;
  Vec times;
  std::vector<Mat> s;

  int samples() const { return static_cast<int>(s.size()); }
  int channels() const { return s.empty() ? 0 : static_cast<int>(s[0].cols()); }
  int buses() const { return s.empty() ? 0 : static_cast<int>(s[0].rows()); }

  /// Rows of channel ch stacked bus-major: value(bus, sample) at
  /// [bus * samples + sample]. The documented flattening order.
  Vec flatten_channel(int ch) const;
};

/// Control-augmented DAE: states [x; u_sel] with zero dynamics on the
/// appended controls, algebraic part unchanged. Fits the trapezoidal kernel,
/// and its Jacobians expose the [[f_x, f_u], [0, 0]] block structure.
class AugmentedSystem {
 public:
  AugmentedSystem(const PowerSystemCase& c, std::vector<Channel> channels);

  int n_states() const { return model_.n_states() + num_channels(); }
  int n_algebraic() const { return model_.n_algebraic(); }
  int num_channels() const { return static_cast<int>(channels_.size()); }
  const CaseModel& base_model() const { return model_; }

  void residuals(const Vec& x_aug, const Vec& y, Vec& f_aug, Vec& g) const;
  void jacobians(const Vec& x_aug, const Vec& y, Mat& f_x, Mat& f_y, Mat& g_x,
                 Mat& g_y) const;

  /// Splits an augmented state into (x, ControlVector offsets).
  void split(const Vec& x_aug, Vec& x, ControlVector& u) const;

 private:
  CaseModel model_;
  std::vector<Channel> channels_;
  std::vector<int> columns_;  // positions in all_channels order
};

/// Validates the channel selection and builds the augmented system.
AugmentedSystem augment_controls(const PowerSystemCase& c,
                                 const std::vector<Channel>& channels);

/// Column index of a channel in the all_channels/archive ordering.
int channel_column(const PowerSystemCase& c, const Channel& ch);

/// Core variational propagation over an archived block: integrates
///   x_u' = f_x x_u + f_y y_u + f_u,  0 = g_x x_u + g_y y_u + g_u
/// with the same trapezoidal discretization, x_u = 0 at the first sample and
/// y_u solved from the algebraic constraint. Returns y_u per sample.
/// columns selects control columns of the archived f_u/g_u.
std::vector<Mat> propagate_variational(const SampleBlock& block,
                                       const std::vector<int>& columns);

/// Spec-level: voltage rows of the variational solution for the selected
/// channels, along a trajectory that carries a Jacobian archive. The block's
/// first sample is the control-application instant.
SensitivityTensor propagate_sensitivities(const SampleBlock& block,
                                          const PowerSystemCase& c,
                                          const std::vector<Channel>& channels);

/// V_hat(t) = V_bar(t) + S(t) du per sample.
Mat predict_linear(const Mat& v_nominal, const SensitivityTensor& s, const Vec& du);

/// Central-difference oracle: two full nonlinear simulations with the channel
/// perturbed by +/- eps at t_apply. Events are applied as given; schedule
/// moves strictly before t_apply are applied, the rest are dropped (controls
/// stay frozen over the window, like the variational baseline). Returns
/// N_b x samples over [t_apply, t_apply + duration).
Mat finite_difference_oracle(const PowerSystemCase& c, const EventSchedule& events,
                             const ControlSchedule& controls, const Channel& channel,
                             double eps, double t_apply, double duration,
                             const IntegratorConfig& config);

}  // namespace gridmpc
