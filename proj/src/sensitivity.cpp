#include "gridmpc/sensitivity.hpp"

#include <cmath>

namespace gridmpc {

Vec SensitivityTensor::flatten_channel(int ch) const {
  const int nb = buses(), ns = samples();
  Vec out(nb * ns);
  for (int b = 0; b < nb; ++b)
    for (int t = 0; t < ns; ++t) out(b * ns + t) = s[t](b, ch);
  return out;
}

int channel_column(const PowerSystemCase& c, const Channel& ch) {
  const int n_svc = static_cast<int>(c.svcs.size());
  const int n_ls = static_cast<int>(c.ls_actuators.size());
  switch (ch.family) {
    case Channel::Family::kSvc:
      if (ch.index < 0 || ch.index >= n_svc)
        throw ContractError("svc channel index out of range");
      return ch.index;
    case Channel::Family::kLs:
      if (ch.index < 0 || ch.index >= n_ls)
        throw ContractError("ls channel index out of range");
      return n_svc + ch.index;
    case Channel::Family::kLtc:
      if (ch.index < 0 || ch.index >= static_cast<int>(c.ltcs.size()))
        throw ContractError("ltc channel index out of range");
      return n_svc + n_ls + ch.index;
  }
  throw ContractError("invalid channel family");
}

AugmentedSystem::AugmentedSystem(const PowerSystemCase& c,
                                 std::vector<Channel> channels)
    : model_(c), channels_(std::move(channels)) {
  for (const auto& ch : channels_) columns_.push_back(channel_column(c, ch));
}

AugmentedSystem augment_controls(const PowerSystemCase& c,
                                 const std::vector<Channel>& channels) {
  for (const auto& ch : channels) {
    channel_column(c, ch);  // validates the device reference
    if (ch.family == Channel::Family::kLs) {
      const auto& a = c.ls_actuators[ch.index];
      bool ok = false;
      for (const auto& l : c.loads) ok = ok || (l.bus == a.bus && l.p0 > 0.0);
      if (!ok)
        throw ContractError("ls channel requires an augmentable load at bus " +
                            std::to_string(a.bus));
    }
  }
  return AugmentedSystem(c, channels);
}

void AugmentedSystem::split(const Vec& x_aug, Vec& x, ControlVector& u) const {
  const int nx = model_.n_states();
  if (x_aug.size() != nx + num_channels())
    throw ContractError("augmented state has the wrong length");
  x = x_aug.head(nx);
  u = ControlVector::zeros(model_.system_case());
  for (int i = 0; i < num_channels(); ++i) {
    const double v = x_aug(nx + i);
    switch (channels_[i].family) {
      case Channel::Family::kSvc: u.svc(channels_[i].index) = v; break;
      case Channel::Family::kLs: u.ls(channels_[i].index) = v; break;
      case Channel::Family::kLtc: u.ltc(channels_[i].index) = v; break;
    }
  }
}

void AugmentedSystem::residuals(const Vec& x_aug, const Vec& y, Vec& f_aug,
                                Vec& g) const {
  Vec x;
  ControlVector u;
  split(x_aug, x, u);
  Vec f;
  model_.residuals(x, y, u, f, g);
  f_aug = Vec::Zero(n_states());
  f_aug.head(model_.n_states()) = f;  // appended controls have zero dynamics
}

void AugmentedSystem::jacobians(const Vec& x_aug, const Vec& y, Mat& f_x, Mat& f_y,
                                Mat& g_x, Mat& g_y) const {
  Vec x;
  ControlVector u;
  split(x_aug, x, u);
  Mat fx, fy, gx, gy, fu, gu;
  model_.state_jacobians(x, y, u, fx, fy, gx, gy);
  model_.control_jacobians(x, y, u, fu, gu);
  const int nx = model_.n_states();
  const int nc = num_channels();
  f_x = Mat::Zero(nx + nc, nx + nc);
  f_x.topLeftCorner(nx, nx) = fx;
  f_y = Mat::Zero(nx + nc, model_.n_algebraic());
  f_y.topRows(nx) = fy;
  g_x = Mat::Zero(model_.n_algebraic(), nx + nc);
  g_x.leftCols(nx) = gx;
  for (int i = 0; i < nc; ++i) {
    f_x.col(nx + i).head(nx) = fu.col(columns_[i]);
    g_x.col(nx + i) = gu.col(columns_[i]);
  }
  g_y = gy;
}

std::vector<Mat> propagate_variational(const SampleBlock& block,
                                       const std::vector<int>& columns) {
  const int ns = block.samples();
  if (static_cast<int>(block.jacobians.size()) != ns)
    throw ContractError("propagate_variational: block carries no Jacobian archive");
  if (ns < 1) throw ContractError("propagate_variational: empty block");
  const int nc = static_cast<int>(columns.size());
  const int nx = static_cast<int>(block.jacobians[0].f_x.rows());
  const int ny = static_cast<int>(block.jacobians[0].g_y.rows());

  auto select = [&](const Mat& m) {
    Mat out(m.rows(), nc);
    for (int i = 0; i < nc; ++i) out.col(i) = m.col(columns[i]);
    return out;
  };

  std::vector<Mat> y_u(ns);
  Mat x_u = Mat::Zero(nx, nc);  // states cannot jump at the application instant
  {
    const auto& j0 = block.jacobians[0];
    Eigen::PartialPivLU<Mat> lu(j0.g_y);
    y_u[0] = lu.solve(-(select(j0.g_u) + j0.g_x * x_u));
    if (!y_u[0].allFinite())
      throw CollapseError("singular algebraic Jacobian in sensitivity init",
                          block.times(0));
  }

  Mat kkt(nx + ny, nx + ny);
  Mat rhs(nx + ny, nc);
  for (int n = 0; n + 1 < ns; ++n) {
    const auto& ja = block.jacobians[n];
    const auto& jb = block.jacobians[n + 1];
    const double h = block.times(n + 1) - block.times(n);
    rhs.topRows(nx) = x_u +
                      0.5 * h * (ja.f_x * x_u + ja.f_y * y_u[n] + select(ja.f_u)) +
                      0.5 * h * select(jb.f_u);
    rhs.bottomRows(ny) = -select(jb.g_u);
    kkt.topLeftCorner(nx, nx) = Mat::Identity(nx, nx) - 0.5 * h * jb.f_x;
    kkt.topRightCorner(nx, ny) = -0.5 * h * jb.f_y;
    kkt.bottomLeftCorner(ny, nx) = jb.g_x;
    kkt.bottomRightCorner(ny, ny) = jb.g_y;
    const Mat sol = kkt.partialPivLu().solve(rhs);
    if (!sol.allFinite())
      throw CollapseError("singular Jacobian while propagating sensitivities",
                          block.times(n + 1));
    x_u = sol.topRows(nx);
    y_u[n + 1] = sol.bottomRows(ny);
  }
  return y_u;
}

SensitivityTensor propagate_sensitivities(const SampleBlock& block,
                                          const PowerSystemCase& c,
                                          const std::vector<Channel>& channels) {
  std::vector<int> cols;
  for (const auto& ch : channels) cols.push_back(channel_column(c, ch));
  const auto y_u = propagate_variational(block, cols);

  SensitivityTensor tensor;
  tensor.times = block.times;
  for (const auto& ch : channels) tensor.labels.push_back(channel_label(c, ch));
  const int nb = c.n_buses();
  tensor.s.reserve(y_u.size());
  for (const auto& m : y_u) tensor.s.push_back(m.bottomRows(nb));
  return tensor;
}

Mat predict_linear(const Mat& v_nominal, const SensitivityTensor& s, const Vec& du) {
  if (v_nominal.cols() != s.samples())
    throw ContractError("predict_linear: sample grids disagree");
  if (du.size() != s.channels())
    throw ContractError("predict_linear: du length does not match channels");
  Mat out = v_nominal;
  for (int t = 0; t < s.samples(); ++t) out.col(t) += s.s[t] * du;
  return out;
}

Mat finite_difference_oracle(const PowerSystemCase& c, const EventSchedule& events,
                             const ControlSchedule& controls, const Channel& channel,
                             double eps, double t_apply, double duration,
                             const IntegratorConfig& config) {
  if (eps <= 0.0) throw ContractError("finite_difference_oracle: eps must be > 0");
  auto run = [&](double sign) {
    IntegratorConfig cfg = config;
    cfg.archive_jacobians = false;
    Simulator sim = Simulator::from_equilibrium(c, 0.0, cfg);
    sim.add_events(events);
    double t = 0.0;
    for (int k = 0; k < controls.num_instants(); ++k) {
      const double tk = controls.instant_time(k);
      if (tk >= t_apply) break;
      if (tk > t) {
        sim.advance(tk - t);
        t = tk;
      }
      sim.apply_control_move(controls.move_at(k, sim.current_case()));
    }
    if (t_apply > t) sim.advance(t_apply - t);

    sim.apply_channel_offset(channel, sign * eps);
    return sim.advance(duration);
  };

  const SampleBlock plus = run(+1.0);
  const SampleBlock minus = run(-1.0);
  return (plus.v - minus.v) / (2.0 * eps);
}

}  // namespace gridmpc
