#pragma once

#include <complex>
#include <vector>

#include "gridmpc/case.hpp"

namespace gridmpc {

/// The six first-order Jacobian blocks of the DAE at one point.
struct Jacobians {
  Mat f_x, f_y, g_x, g_y;
  Mat f_u, g_u;  // columns ordered like all_channels(case)
};

/// Evaluates f, g and all analytic Jacobians for one case snapshot.
/// State layout: [delta, omega] per generator, then [x_P, x_Q] per load.
/// Algebraic layout: [theta per bus][V per bus].
class CaseModel {
 public:
  explicit CaseModel(const PowerSystemCase& c);

  const PowerSystemCase& system_case() const { return case_; }
  int n_states() const { return n_x_; }
  int n_algebraic() const { return 2 * nb_; }
  int n_buses() const { return nb_; }

  int gen_delta_index(int g) const { return 2 * g; }
  int gen_omega_index(int g) const { return 2 * g + 1; }
  int load_xp_index(int l) const { return 2 * static_cast<int>(case_.generators.size()) + 2 * l; }
  int load_xq_index(int l) const { return load_xp_index(l) + 1; }
  int theta_index(int bus_pos) const { return bus_pos; }
  int v_index(int bus_pos) const { return nb_ + bus_pos; }

  void residuals(const Vec& x, const Vec& y, const ControlVector& u, Vec& f,
                 Vec& g) const;
  void state_jacobians(const Vec& x, const Vec& y, const ControlVector& u, Mat& f_x,
                       Mat& f_y, Mat& g_x, Mat& g_y) const;
  void control_jacobians(const Vec& x, const Vec& y, const ControlVector& u,
                         Mat& f_u, Mat& g_u) const;

  /// Bus voltage magnitudes from an algebraic vector.
  Vec voltages(const Vec& y) const { return y.tail(nb_); }

  /// Network power injection at every bus (for the per-unit balance checks).
  void network_injections(const Vec& y, const ControlVector& u, Vec& p_net,
                          Vec& q_net) const;

 private:
  using Cx = std::complex<double>;
  void effective_admittance(const ControlVector& u, Eigen::MatrixXcd& y_bus) const;
  void check_point(const Vec& x, const Vec& y, const ControlVector& u) const;

  PowerSystemCase case_;
  int nb_ = 0;
  int n_x_ = 0;
  std::vector<int> gen_bus_;       // bus position per generator
  std::vector<int> load_bus_;      // bus position per load
  std::vector<int> svc_bus_;       // bus position per svc
  std::vector<int> ltc_hv_, ltc_lv_;
  std::vector<int> ls_load_;       // load index per LS actuator
  Eigen::MatrixXcd y_static_;      // lines + shunts + fault shunts (no LTC, no SVC)
};

/// Completed case (machine internals filled in) plus the DAE-consistent point.
struct Equilibrium {
  PowerSystemCase completed_case;
  Vec x0;
  Vec y0;
  int power_flow_iterations = 0;
  double mismatch = 0.0;
};

/// Spec-level free functions over CaseModel.
std::pair<Vec, Vec> dae_residuals(const Vec& x, const Vec& y, const ControlVector& u,
                                  const PowerSystemCase& c);
Jacobians analytic_jacobians(const Vec& x, const Vec& y, const ControlVector& u,
                             const PowerSystemCase& c);

/// Newton power flow (reference generator as slack, other generators PV with
/// their dispatch, loads on their steady-state characteristic), then machine
/// and load-state back-solve so that f = 0, g = 0 at (x0, y0).
Equilibrium initialize_equilibrium(const PowerSystemCase& c, double tol = 1e-10,
                                   int max_iterations = 40);

}  // namespace gridmpc
