#include "gridmpc/model.hpp"

#include <cmath>

namespace gridmpc {

namespace {

// (V/V0)^e and its derivative wrt V, guarded for V near zero during Newton
// excursions (exponents may be non-integer).
inline double vpow(double v, double v0, double e) {
  return std::pow(std::max(v, 1e-9) / v0, e);
}
inline double dvpow(double v, double v0, double e) {
  const double vv = std::max(v, 1e-9);
  return e * std::pow(vv / v0, e - 1.0) / v0;
}

}  // namespace

CaseModel::CaseModel(const PowerSystemCase& c) : case_(c) {
  nb_ = case_.n_buses();
  n_x_ = 2 * static_cast<int>(case_.generators.size()) +
         2 * static_cast<int>(case_.loads.size());
  for (const auto& g : case_.generators) gen_bus_.push_back(case_.bus_index(g.bus));
  for (const auto& l : case_.loads) load_bus_.push_back(case_.bus_index(l.bus));
  for (const auto& s : case_.svcs) svc_bus_.push_back(case_.bus_index(s.bus));
  for (const auto& t : case_.ltcs) {
    ltc_hv_.push_back(case_.bus_index(t.hv_bus));
    ltc_lv_.push_back(case_.bus_index(t.lv_bus));
  }
  for (const auto& a : case_.ls_actuators) {
    int found = -1;
    for (size_t l = 0; l < case_.loads.size(); ++l)
      if (case_.loads[l].bus == a.bus) found = static_cast<int>(l);
    if (found < 0) throw ContractError("ls actuator without a load");
    ls_load_.push_back(found);
  }

  y_static_ = Eigen::MatrixXcd::Zero(nb_, nb_);
  for (const auto& line : case_.lines) {
    if (!line.in_service) continue;
    const int i = case_.bus_index(line.from);
    const int j = case_.bus_index(line.to);
    const Cx ys = 1.0 / Cx(line.r, line.x);
    const Cx ysh(0.0, line.b / 2.0);
    y_static_(i, i) += ys + ysh;
    y_static_(j, j) += ys + ysh;
    y_static_(i, j) -= ys;
    y_static_(j, i) -= ys;
  }
  for (int i = 0; i < nb_; ++i) {
    const Bus& b = case_.buses[i];
    y_static_(i, i) += Cx(b.fault_g, b.shunt_b + b.fault_b);
  }
}

void CaseModel::effective_admittance(const ControlVector& u,
                                     Eigen::MatrixXcd& y_bus) const {
  y_bus = y_static_;
  for (size_t t = 0; t < case_.ltcs.size(); ++t) {
    const LtcTransformer& ltc = case_.ltcs[t];
    const double m = ltc.ratio + u.ltc(static_cast<int>(t));
    const Cx yt = 1.0 / Cx(0.0, ltc.x);
    const int h = ltc_hv_[t], l = ltc_lv_[t];
    y_bus(h, h) += m * m * yt;
    y_bus(h, l) -= m * yt;
    y_bus(l, h) -= m * yt;
    y_bus(l, l) += yt;
  }
}

void CaseModel::check_point(const Vec& x, const Vec& y, const ControlVector& u) const {
  if (x.size() != n_x_ || y.size() != 2 * nb_)
    throw ContractError("state/algebraic vector length mismatch");
  if (u.svc.size() != static_cast<long>(case_.svcs.size()) ||
      u.ls.size() != static_cast<long>(case_.ls_actuators.size()) ||
      u.ltc.size() != static_cast<long>(case_.ltcs.size()))
    throw ContractError("control vector dimensions do not match the case");
  for (int i = 0; i < nb_; ++i)
    if (y(v_index(i)) <= 0.0)
      throw DomainError("non-positive bus voltage in algebraic vector");
}

void CaseModel::network_injections(const Vec& y, const ControlVector& u, Vec& p_net,
                                   Vec& q_net) const {
  Eigen::MatrixXcd yb;
  effective_admittance(u, yb);
  p_net = Vec::Zero(nb_);
  q_net = Vec::Zero(nb_);
  for (int i = 0; i < nb_; ++i) {
    const double vi = y(v_index(i));
    const double ti = y(theta_index(i));
    double p = 0.0, q = 0.0;
    for (int j = 0; j < nb_; ++j) {
      const Cx yij = yb(i, j);
      if (yij == Cx(0.0, 0.0)) continue;
      const double vj = y(v_index(j));
      const double tij = ti - y(theta_index(j));
      const double g = yij.real(), b = yij.imag();
      p += vj * (g * std::cos(tij) + b * std::sin(tij));
      q += vj * (g * std::sin(tij) - b * std::cos(tij));
    }
    p_net(i) = vi * p;
    q_net(i) = vi * q;
  }
}

void CaseModel::residuals(const Vec& x, const Vec& y, const ControlVector& u, Vec& f,
                          Vec& g) const {
  check_point(x, y, u);
  Vec p_net, q_net;
  network_injections(y, u, p_net, q_net);

  Vec p_bal = p_net, q_bal = q_net;
  f = Vec::Zero(n_x_);

  for (size_t gi = 0; gi < case_.generators.size(); ++gi) {
    const Generator& gen = case_.generators[gi];
    const int bi = gen_bus_[gi];
    const double delta = x(gen_delta_index(static_cast<int>(gi)));
    const double omega = x(gen_omega_index(static_cast<int>(gi)));
    const double v = y(v_index(bi));
    const double a = gen.emf * v / gen.xd_t;
    const double s = std::sin(delta - y(theta_index(bi)));
    const double c = std::cos(delta - y(theta_index(bi)));
    const double pe = a * s;
    const double qg = a * c - v * v / gen.xd_t;
    p_bal(bi) -= pe;
    q_bal(bi) -= qg;
    f(gen_delta_index(static_cast<int>(gi))) = kOmegaSync * omega;
    f(gen_omega_index(static_cast<int>(gi))) =
        (gen.pm - pe - gen.d * omega) / (2.0 * gen.h);
  }

  // Effective base powers after any extra shed carried in u.
  Vec p0_eff(case_.loads.size()), q0_eff(case_.loads.size());
  for (size_t li = 0; li < case_.loads.size(); ++li) {
    p0_eff(li) = case_.loads[li].p0;
    q0_eff(li) = case_.loads[li].q0;
  }
  for (size_t ai = 0; ai < case_.ls_actuators.size(); ++ai) {
    const int li = ls_load_[ai];
    const double ratio =
        case_.loads[li].p0 > 0.0 ? case_.loads[li].q0 / case_.loads[li].p0 : 0.0;
    p0_eff(li) -= u.ls(static_cast<int>(ai));
    q0_eff(li) -= u.ls(static_cast<int>(ai)) * ratio;
  }

  for (size_t li = 0; li < case_.loads.size(); ++li) {
    const ErLoad& load = case_.loads[li];
    const int bi = load_bus_[li];
    const double v = y(v_index(bi));
    const double xp = x(load_xp_index(static_cast<int>(li)));
    const double xq = x(load_xq_index(static_cast<int>(li)));
    const double ps = vpow(v, load.v0, load.alpha_s);
    const double pt = vpow(v, load.v0, load.alpha_t);
    const double qs = vpow(v, load.v0, load.beta_s);
    const double qt = vpow(v, load.v0, load.beta_t);
    p_bal(bi) += xp / load.t_p + p0_eff(li) * pt;
    q_bal(bi) += xq / load.t_q + q0_eff(li) * qt;
    f(load_xp_index(static_cast<int>(li))) = -xp / load.t_p + p0_eff(li) * (ps - pt);
    f(load_xq_index(static_cast<int>(li))) = -xq / load.t_q + q0_eff(li) * (qs - qt);
  }

  for (size_t si = 0; si < case_.svcs.size(); ++si) {
    const int bi = svc_bus_[si];
    const double v = y(v_index(bi));
    q_bal(bi) -= (case_.svcs[si].b + u.svc(static_cast<int>(si))) * v * v;
  }

  g = Vec::Zero(2 * nb_);
  g.head(nb_) = p_bal;
  g.tail(nb_) = q_bal;
}

void CaseModel::state_jacobians(const Vec& x, const Vec& y, const ControlVector& u,
                                Mat& f_x, Mat& f_y, Mat& g_x, Mat& g_y) const {
  check_point(x, y, u);
  Eigen::MatrixXcd yb;
  effective_admittance(u, yb);

  f_x = Mat::Zero(n_x_, n_x_);
  f_y = Mat::Zero(n_x_, 2 * nb_);
  g_x = Mat::Zero(2 * nb_, n_x_);
  g_y = Mat::Zero(2 * nb_, 2 * nb_);

  // Network part of g_y. Needs P_net, Q_net for the diagonal terms.
  Vec p_net, q_net;
  network_injections(y, u, p_net, q_net);
  for (int i = 0; i < nb_; ++i) {
    const double vi = y(v_index(i));
    const double ti = y(theta_index(i));
    const double gii = yb(i, i).real(), bii = yb(i, i).imag();
    for (int j = 0; j < nb_; ++j) {
      if (j == i) continue;
      const Cx yij = yb(i, j);
      if (yij == Cx(0.0, 0.0)) continue;
      const double vj = y(v_index(j));
      const double tij = ti - y(theta_index(j));
      const double gij = yij.real(), bij = yij.imag();
      const double sc = gij * std::sin(tij) - bij * std::cos(tij);
      const double cc = gij * std::cos(tij) + bij * std::sin(tij);
      g_y(i, theta_index(j)) = vi * vj * sc;
      g_y(i, v_index(j)) = vi * cc;
      g_y(nb_ + i, theta_index(j)) = -vi * vj * cc;
      g_y(nb_ + i, v_index(j)) = vi * sc;
    }
    g_y(i, theta_index(i)) = -q_net(i) - bii * vi * vi;
    g_y(i, v_index(i)) = p_net(i) / vi + gii * vi;
    g_y(nb_ + i, theta_index(i)) = p_net(i) - gii * vi * vi;
    g_y(nb_ + i, v_index(i)) = q_net(i) / vi - bii * vi;
  }

  for (size_t gi = 0; gi < case_.generators.size(); ++gi) {
    const Generator& gen = case_.generators[gi];
    const int bi = gen_bus_[gi];
    const int id = gen_delta_index(static_cast<int>(gi));
    const int io = gen_omega_index(static_cast<int>(gi));
    const double delta = x(id);
    const double omega = x(io);
    (void)omega;
    const double v = y(v_index(bi));
    const double s = std::sin(delta - y(theta_index(bi)));
    const double c = std::cos(delta - y(theta_index(bi)));
    const double a = gen.emf * v / gen.xd_t;
    const double dpe_ddelta = a * c;
    const double dpe_dv = gen.emf * s / gen.xd_t;
    const double dqg_ddelta = -a * s;
    const double dqg_dv = (gen.emf * c - 2.0 * v) / gen.xd_t;

    f_x(id, io) = kOmegaSync;
    f_x(io, id) = -dpe_ddelta / (2.0 * gen.h);
    f_x(io, io) = -gen.d / (2.0 * gen.h);
    f_y(io, theta_index(bi)) = dpe_ddelta / (2.0 * gen.h);
    f_y(io, v_index(bi)) = -dpe_dv / (2.0 * gen.h);

    g_x(bi, id) = -dpe_ddelta;
    g_x(nb_ + bi, id) = -dqg_ddelta;
    g_y(bi, theta_index(bi)) += dpe_ddelta;
    g_y(bi, v_index(bi)) -= dpe_dv;
    g_y(nb_ + bi, theta_index(bi)) += dqg_ddelta;
    g_y(nb_ + bi, v_index(bi)) -= dqg_dv;
  }

  Vec p0_eff(case_.loads.size()), q0_eff(case_.loads.size());
  for (size_t li = 0; li < case_.loads.size(); ++li) {
    p0_eff(li) = case_.loads[li].p0;
    q0_eff(li) = case_.loads[li].q0;
  }
  for (size_t ai = 0; ai < case_.ls_actuators.size(); ++ai) {
    const int li = ls_load_[ai];
    const double ratio =
        case_.loads[li].p0 > 0.0 ? case_.loads[li].q0 / case_.loads[li].p0 : 0.0;
    p0_eff(li) -= u.ls(static_cast<int>(ai));
    q0_eff(li) -= u.ls(static_cast<int>(ai)) * ratio;
  }

  for (size_t li = 0; li < case_.loads.size(); ++li) {
    const ErLoad& load = case_.loads[li];
    const int bi = load_bus_[li];
    const int ip = load_xp_index(static_cast<int>(li));
    const int iq = load_xq_index(static_cast<int>(li));
    const double v = y(v_index(bi));
    const double dps = dvpow(v, load.v0, load.alpha_s);
    const double dpt = dvpow(v, load.v0, load.alpha_t);
    const double dqs = dvpow(v, load.v0, load.beta_s);
    const double dqt = dvpow(v, load.v0, load.beta_t);

    f_x(ip, ip) = -1.0 / load.t_p;
    f_x(iq, iq) = -1.0 / load.t_q;
    f_y(ip, v_index(bi)) = p0_eff(li) * (dps - dpt);
    f_y(iq, v_index(bi)) = q0_eff(li) * (dqs - dqt);

    g_x(bi, ip) = 1.0 / load.t_p;
    g_x(nb_ + bi, iq) = 1.0 / load.t_q;
    g_y(bi, v_index(bi)) += p0_eff(li) * dpt;
    g_y(nb_ + bi, v_index(bi)) += q0_eff(li) * dqt;
  }

  for (size_t si = 0; si < case_.svcs.size(); ++si) {
    const int bi = svc_bus_[si];
    const double v = y(v_index(bi));
    g_y(nb_ + bi, v_index(bi)) -=
        2.0 * (case_.svcs[si].b + u.svc(static_cast<int>(si))) * v;
  }
}

void CaseModel::control_jacobians(const Vec& x, const Vec& y, const ControlVector& u,
                                  Mat& f_u, Mat& g_u) const {
  check_point(x, y, u);
  const auto channels = all_channels(case_);
  const int nc = static_cast<int>(channels.size());
  f_u = Mat::Zero(n_x_, nc);
  g_u = Mat::Zero(2 * nb_, nc);

  for (int ci = 0; ci < nc; ++ci) {
    const Channel& ch = channels[ci];
    switch (ch.family) {
      case Channel::Family::kSvc: {
        const int bi = svc_bus_[ch.index];
        const double v = y(v_index(bi));
        g_u(nb_ + bi, ci) = -v * v;
        break;
      }
      case Channel::Family::kLs: {
        const int li = ls_load_[ch.index];
        const ErLoad& load = case_.loads[li];
        const int bi = load_bus_[li];
        const double v = y(v_index(bi));
        const double ratio = load.p0 > 0.0 ? load.q0 / load.p0 : 0.0;
        const double ps = vpow(v, load.v0, load.alpha_s);
        const double pt = vpow(v, load.v0, load.alpha_t);
        const double qs = vpow(v, load.v0, load.beta_s);
        const double qt = vpow(v, load.v0, load.beta_t);
        // d/d(shed): P0_eff = P0 - u, Q0_eff = Q0 - ratio * u.
        g_u(bi, ci) = -pt;
        g_u(nb_ + bi, ci) = -ratio * qt;
        f_u(load_xp_index(li), ci) = -(ps - pt);
        f_u(load_xq_index(li), ci) = -ratio * (qs - qt);
        break;
      }
      case Channel::Family::kLtc: {
        const LtcTransformer& ltc = case_.ltcs[ch.index];
        const double m = ltc.ratio + u.ltc(ch.index);
        const double bt = -1.0 / ltc.x;  // y_t = j * bt
        const int h = ltc_hv_[ch.index], l = ltc_lv_[ch.index];
        // dY/dm entries: (h,h): j*2m*bt, (h,l) and (l,h): -j*bt.
        const auto add = [&](int i, int j, double dg, double db) {
          const double vi = y(v_index(i));
          const double vj = y(v_index(j));
          const double tij = y(theta_index(i)) - y(theta_index(j));
          g_u(i, ci) += vi * vj * (dg * std::cos(tij) + db * std::sin(tij));
          g_u(nb_ + i, ci) += vi * vj * (dg * std::sin(tij) - db * std::cos(tij));
        };
        add(h, h, 0.0, 2.0 * m * bt);
        add(h, l, 0.0, -bt);
        add(l, h, 0.0, -bt);
        break;
      }
    }
  }
}

std::pair<Vec, Vec> dae_residuals(const Vec& x, const Vec& y, const ControlVector& u,
                                  const PowerSystemCase& c) {
  CaseModel model(c);
  Vec f, g;
  model.residuals(x, y, u, f, g);
  return {f, g};
}

Jacobians analytic_jacobians(const Vec& x, const Vec& y, const ControlVector& u,
                             const PowerSystemCase& c) {
  CaseModel model(c);
  Jacobians jac;
  model.state_jacobians(x, y, u, jac.f_x, jac.f_y, jac.g_x, jac.g_y);
  model.control_jacobians(x, y, u, jac.f_u, jac.g_u);
  return jac;
}

Equilibrium initialize_equilibrium(const PowerSystemCase& input, double tol,
                                   int max_iterations) {
  input.validate();
  if (input.generators.empty())
    throw ContractError("initialize_equilibrium needs at least one generator");
  PowerSystemCase c = input;
  CaseModel model(c);
  const int nb = model.n_buses();

  int slack = -1;
  std::vector<int> bus_gen(nb, -1);
  for (size_t gi = 0; gi < c.generators.size(); ++gi) {
    const int bi = c.bus_index(c.generators[gi].bus);
    bus_gen[bi] = static_cast<int>(gi);
    if (c.generators[gi].reference) slack = bi;
  }

  // Power-flow admittance matrix: network + LTC at stored ratios + SVC at
  // stored susceptance (folded into the diagonal for the solve only).
  ControlVector u0 = ControlVector::zeros(c);
  Vec theta = Vec::Zero(nb);
  Vec v = Vec::Ones(nb);
  for (int i = 0; i < nb; ++i)
    if (bus_gen[i] >= 0) v(i) = c.generators[bus_gen[i]].v_setpoint;

  // Unknowns: theta at all buses but the slack, V at PQ buses.
  std::vector<int> th_vars, v_vars;
  for (int i = 0; i < nb; ++i) {
    if (i != slack) th_vars.push_back(i);
    if (bus_gen[i] < 0) v_vars.push_back(i);
  }
  const int nth = static_cast<int>(th_vars.size());
  const int nv = static_cast<int>(v_vars.size());

  Vec p_load_spec, q_load_spec;
  auto assemble = [&](Vec& mism, Mat* jac) {
    Vec y(2 * nb);
    y.head(nb) = theta;
    y.tail(nb) = v;
    Vec p_net, q_net;
    model.network_injections(y, u0, p_net, q_net);
    // SVC injection at the stored setting.
    for (size_t si = 0; si < c.svcs.size(); ++si) {
      const int bi = c.bus_index(c.svcs[si].bus);
      q_net(bi) -= c.svcs[si].b * v(bi) * v(bi);
    }
    p_load_spec = Vec::Zero(nb);
    q_load_spec = Vec::Zero(nb);
    Vec dp_dv = Vec::Zero(nb), dq_dv = Vec::Zero(nb);
    for (const auto& load : c.loads) {
      const int bi = c.bus_index(load.bus);
      p_load_spec(bi) += load.p0 * vpow(v(bi), load.v0, load.alpha_s);
      q_load_spec(bi) += load.q0 * vpow(v(bi), load.v0, load.beta_s);
      dp_dv(bi) += load.p0 * dvpow(v(bi), load.v0, load.alpha_s);
      dq_dv(bi) += load.q0 * dvpow(v(bi), load.v0, load.beta_s);
    }
    Vec p_gen_spec = Vec::Zero(nb);
    for (const auto& gen : c.generators)
      p_gen_spec(c.bus_index(gen.bus)) += gen.p_dispatch;

    mism = Vec::Zero(nth + nv);
    for (int k = 0; k < nth; ++k)
      mism(k) = p_gen_spec(th_vars[k]) - p_load_spec(th_vars[k]) - p_net(th_vars[k]);
    for (int k = 0; k < nv; ++k)
      mism(nth + k) = -q_load_spec(v_vars[k]) - q_net(v_vars[k]);

    if (!jac) return;
    Mat f_x, f_y, g_x, g_y;
    Vec x_dummy = Vec::Zero(model.n_states());
    // Borrow the dynamic-model network Jacobian: rows P then Q over buses.
    // Machines/loads are excluded here because the power flow treats them
    // through the spec terms above, so build g_y from a load/gen-free case.
    // Cheaper: recompute the network block directly.
    Mat dpdth(nb, nb), dpdv(nb, nb), dqdth(nb, nb), dqdv(nb, nb);
    {
      Eigen::MatrixXcd yb;
      CaseModel tmp(c);
      // effective_admittance is private; rebuild here (LTC stamps + static).
      yb = Eigen::MatrixXcd::Zero(nb, nb);
      for (const auto& line : c.lines) {
        if (!line.in_service) continue;
        const int i = c.bus_index(line.from);
        const int j = c.bus_index(line.to);
        const std::complex<double> ys = 1.0 / std::complex<double>(line.r, line.x);
        const std::complex<double> ysh(0.0, line.b / 2.0);
        yb(i, i) += ys + ysh;
        yb(j, j) += ys + ysh;
        yb(i, j) -= ys;
        yb(j, i) -= ys;
      }
      for (int i = 0; i < nb; ++i) {
        const Bus& b = c.buses[i];
        yb(i, i) += std::complex<double>(b.fault_g, b.shunt_b + b.fault_b);
      }
      for (size_t t = 0; t < c.ltcs.size(); ++t) {
        const auto& ltc = c.ltcs[t];
        const double m = ltc.ratio;
        const std::complex<double> yt = 1.0 / std::complex<double>(0.0, ltc.x);
        const int h = c.bus_index(ltc.hv_bus);
        const int l = c.bus_index(ltc.lv_bus);
        yb(h, h) += m * m * yt;
        yb(h, l) -= m * yt;
        yb(l, h) -= m * yt;
        yb(l, l) += yt;
      }
      for (size_t si = 0; si < c.svcs.size(); ++si) {
        const int bi = c.bus_index(c.svcs[si].bus);
        yb(bi, bi) += std::complex<double>(0.0, c.svcs[si].b);
      }
      for (int i = 0; i < nb; ++i) {
        const double vi = v(i);
        double pni = 0.0, qni = 0.0;
        for (int j = 0; j < nb; ++j) {
          const auto yij = yb(i, j);
          const double vj = v(j);
          const double tij = theta(i) - theta(j);
          const double g = yij.real(), b = yij.imag();
          pni += vi * vj * (g * std::cos(tij) + b * std::sin(tij));
          qni += vi * vj * (g * std::sin(tij) - b * std::cos(tij));
        }
        const double gii = yb(i, i).real(), bii = yb(i, i).imag();
        for (int j = 0; j < nb; ++j) {
          if (j == i) {
            dpdth(i, i) = -qni - bii * vi * vi;
            dpdv(i, i) = pni / vi + gii * vi;
            dqdth(i, i) = pni - gii * vi * vi;
            dqdv(i, i) = qni / vi - bii * vi;
            continue;
          }
          const auto yij = yb(i, j);
          const double vj = v(j);
          const double tij = theta(i) - theta(j);
          const double g = yij.real(), b = yij.imag();
          const double sc = g * std::sin(tij) - b * std::cos(tij);
          const double cc = g * std::cos(tij) + b * std::sin(tij);
          dpdth(i, j) = vi * vj * sc;
          dpdv(i, j) = vi * cc;
          dqdth(i, j) = -vi * vj * cc;
          dqdv(i, j) = vi * sc;
        }
      }
    }
    *jac = Mat::Zero(nth + nv, nth + nv);
    for (int r = 0; r < nth; ++r) {
      for (int k = 0; k < nth; ++k) (*jac)(r, k) = -dpdth(th_vars[r], th_vars[k]);
      for (int k = 0; k < nv; ++k)
        (*jac)(r, nth + k) = -dpdv(th_vars[r], v_vars[k]) -
                             (th_vars[r] == v_vars[k] ? dp_dv(v_vars[k]) : 0.0);
    }
    for (int r = 0; r < nv; ++r) {
      for (int k = 0; k < nth; ++k)
        (*jac)(nth + r, k) = -dqdth(v_vars[r], th_vars[k]);
      for (int k = 0; k < nv; ++k)
        (*jac)(nth + r, nth + k) = -dqdv(v_vars[r], v_vars[k]) -
                                   (v_vars[r] == v_vars[k] ? dq_dv(v_vars[k]) : 0.0);
    }
  };

  Vec mism;
  Mat jac;
  int iter = 0;
  double norm = 0.0;
  for (; iter < max_iterations; ++iter) {
    assemble(mism, &jac);
    norm = mism.size() ? mism.cwiseAbs().maxCoeff() : 0.0;
    if (norm < tol) break;
    const Vec step = jac.partialPivLu().solve(mism);
    if (!step.allFinite())
      throw DivergedCaseError("power flow produced a non-finite Newton step");
    for (int k = 0; k < nth; ++k) theta(th_vars[k]) -= step(k);
    for (int k = 0; k < nv; ++k)
      v(v_vars[k]) = std::max(0.05, v(v_vars[k]) - step(nth + k));
  }
  if (norm >= tol)
    throw DivergedCaseError("power flow did not converge after " +
                            std::to_string(max_iterations) + " iterations");

  // Machine back-solve: E' angle/magnitude, Pm from the terminal conditions.
  Vec y0(2 * nb);
  y0.head(nb) = theta;
  y0.tail(nb) = v;
  Vec p_net, q_net;
  model.network_injections(y0, u0, p_net, q_net);
  assemble(mism, nullptr);  // refresh p_load_spec/q_load_spec at the solution

  for (auto& gen : c.generators) {
    const int bi = c.bus_index(gen.bus);
    double pg = gen.p_dispatch;
    if (c.bus_index(gen.bus) == slack) pg = p_net(bi) + p_load_spec(bi);
    double qg = q_net(bi) + q_load_spec(bi);
    for (size_t si = 0; si < c.svcs.size(); ++si)
      if (c.bus_index(c.svcs[si].bus) == bi)
        qg -= c.svcs[si].b * v(bi) * v(bi);
    const std::complex<double> vt = std::polar(v(bi), theta(bi));
    const std::complex<double> s(pg, qg);
    const std::complex<double> current = std::conj(s / vt);
    const std::complex<double> e = vt + std::complex<double>(0.0, gen.xd_t) * current;
    gen.emf = std::abs(e);
    gen.pm = pg;
    gen.delta0 = std::arg(e);
  }

  Equilibrium eq;
  eq.completed_case = c;
  eq.power_flow_iterations = iter;
  eq.mismatch = norm;
  for (int i = 0; i < nb; ++i) {
    eq.completed_case.buses[i].v = v(i);
    eq.completed_case.buses[i].theta = theta(i);
  }

  CaseModel completed(eq.completed_case);
  Vec x0 = Vec::Zero(completed.n_states());
  for (size_t gi = 0; gi < c.generators.size(); ++gi) {
    x0(completed.gen_delta_index(static_cast<int>(gi))) = c.generators[gi].delta0;
    x0(completed.gen_omega_index(static_cast<int>(gi))) = 0.0;
  }
  for (size_t li = 0; li < c.loads.size(); ++li) {
    const ErLoad& load = c.loads[li];
    const int bi = c.bus_index(load.bus);
    const double pl = load.p0 * vpow(v(bi), load.v0, load.alpha_s);
    const double ql = load.q0 * vpow(v(bi), load.v0, load.beta_s);
    x0(completed.load_xp_index(static_cast<int>(li))) =
        load.t_p * (pl - load.p0 * vpow(v(bi), load.v0, load.alpha_t));
    x0(completed.load_xq_index(static_cast<int>(li))) =
        load.t_q * (ql - load.q0 * vpow(v(bi), load.v0, load.beta_t));
  }
  eq.x0 = x0;
  eq.y0 = y0;
  return eq;
}

}  // namespace gridmpc
