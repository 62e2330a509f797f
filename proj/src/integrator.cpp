#include "gridmpc/integrator.hpp"

#include <algorithm>
#include <cmath>

#include "gridmpc/dae_step.hpp"

namespace gridmpc {

namespace {

// CaseModel bound to a fixed control offset, in the shape the generic
// trapezoidal kernel expects.
class CaseSystem {
 public:
  CaseSystem(const CaseModel& model, const ControlVector& u) : model_(model), u_(u) {}
  int n_states() const { return model_.n_states(); }
  int n_algebraic() const { return model_.n_algebraic(); }
  void residuals(const Vec& x, const Vec& y, Vec& f, Vec& g) const {
    model_.residuals(x, y, u_, f, g);
  }
  void jacobians(const Vec& x, const Vec& y, Mat& f_x, Mat& f_y, Mat& g_x,
                 Mat& g_y) const {
    model_.state_jacobians(x, y, u_, f_x, f_y, g_x, g_y);
  }

 private:
  const CaseModel& model_;
  ControlVector u_;
};

long steps_for(double duration, double t_s, const char* what) {
  const long k = std::llround(duration / t_s);
  if (k < 0 || std::abs(static_cast<double>(k) * t_s - duration) > 1e-9)
    throw ContractError(std::string(what) + ": duration " + std::to_string(duration) +
                        " is not a multiple of t_s");
  return k;
}

}  // namespace

void SampleBlock::append(const SampleBlock& other) {
  if (times.size() == 0) {
    *this = other;
    return;
  }
  if (other.times.size() == 0) return;
  if (other.start_index != start_index + samples())
    throw ContractError("SampleBlock::append: blocks are not contiguous");
  const int n0 = samples(), n1 = other.samples();
  Vec t(n0 + n1);
  t << times, other.times;
  times = std::move(t);
  Mat xx(x.rows(), n0 + n1);
  xx << x, other.x;
  x = std::move(xx);
  Mat yy(y.rows(), n0 + n1);
  yy << y, other.y;
  y = std::move(yy);
  Mat vv(v.rows(), n0 + n1);
  vv << v, other.v;
  v = std::move(vv);
  jacobians.insert(jacobians.end(), other.jacobians.begin(), other.jacobians.end());
}

std::vector<TrajectorySegment> slice_segments(const SampleBlock& block, int m,
                                              int first_instant) {
  if (m <= 0) throw ContractError("slice_segments: m must be positive");
  if (block.samples() % m != 0)
    throw ContractError("slice_segments: " + std::to_string(block.samples()) +
                        " samples do not divide into segments of " +
                        std::to_string(m));
  std::vector<TrajectorySegment> out;
  const bool with_jac = !block.jacobians.empty();
  for (int j = 0; j * m < block.samples(); ++j) {
    TrajectorySegment seg;
    seg.start_instant = first_instant + j;
    seg.times = block.times.segment(j * m, m);
    seg.x = block.x.middleCols(j * m, m);
    seg.y = block.y.middleCols(j * m, m);
    seg.v = block.v.middleCols(j * m, m);
    if (with_jac)
      seg.jacobians.assign(block.jacobians.begin() + j * m,
                           block.jacobians.begin() + (j + 1) * m);
    out.push_back(std::move(seg));
  }
  return out;
}

Simulator::Simulator(const PowerSystemCase& completed_case, const Vec& x0,
                     const Vec& y0, double t0, const IntegratorConfig& config)
    : case_(completed_case), cfg_(config), t0_(t0), x_(x0), y_(y0) {
  if (cfg_.t_s <= 0.0) throw ContractError("IntegratorConfig: t_s must be positive");
  if (cfg_.newton_tol <= 0.0)
    throw ContractError("IntegratorConfig: tolerance must be positive");
  rebuild_model();
  if (x_.size() != model_->n_states() || y_.size() != model_->n_algebraic())
    throw ContractError("Simulator: state sizes do not match the case");
}

Simulator::Simulator(const Simulator& other)
    : case_(other.case_),
      cfg_(other.cfg_),
      t0_(other.t0_),
      index_(other.index_),
      x_(other.x_),
      y_(other.y_),
      queue_(other.queue_),
      tap_log_(other.tap_log_),
      pre_fault_y_(other.pre_fault_y_) {
  rebuild_model();
}

Simulator& Simulator::operator=(const Simulator& other) {
  if (this == &other) return *this;
  case_ = other.case_;
  cfg_ = other.cfg_;
  t0_ = other.t0_;
  index_ = other.index_;
  x_ = other.x_;
  y_ = other.y_;
  queue_ = other.queue_;
  tap_log_ = other.tap_log_;
  pre_fault_y_ = other.pre_fault_y_;
  rebuild_model();
  return *this;
}

Simulator Simulator::from_equilibrium(const PowerSystemCase& c, double t0,
                                      const IntegratorConfig& config) {
  const Equilibrium eq = initialize_equilibrium(c);
  return Simulator(eq.completed_case, eq.x0, eq.y0, t0, config);
}

void Simulator::rebuild_model() { model_ = std::make_unique<CaseModel>(case_); }

long long Simulator::grid_tick(long index) const {
  return std::llround((t0_ + static_cast<double>(index) * cfg_.t_s) * 1e9);
}

void Simulator::add_event(double time, const Event& event) {
  const long long tick = std::llround(time * 1e9);
  if (tick < grid_tick(index_))
    throw ContractError("event at t = " + std::to_string(time) +
                        " lies before the current simulation time");
  queue_.emplace(tick, event);
}

void Simulator::add_events(const EventSchedule& events) {
  for (const auto& [t, e] : events.items) add_event(t, e);
}

void Simulator::resolve_algebraic(const std::string& what) {
  const CaseSystem sys(*model_, ControlVector::zeros(case_));
  if (!solve_algebraic_system(sys, x_, y_, cfg_.newton_tol, cfg_.max_newton))
    throw CollapseError("algebraic re-solve failed after " + what, time());
}

void Simulator::apply_one_event(const Event& event) {
  if (const auto* on = std::get_if<FaultOn>(&event)) {
    if (!pre_fault_y_) pre_fault_y_ = y_;
    // A solid fault can throw Newton out of its basin; stage the admittance.
    const PowerSystemCase before = case_;
    const Vec y_before = y_;
    bool done = false;
    for (double frac : {1.0, 0.25}) {
      case_ = before;
      y_ = y_before;
      try {
        for (double level = frac; level < 1.0 + 1e-12; level += frac) {
          FaultOn staged{on->bus, on->g * std::min(1.0, level),
                         on->b * std::min(1.0, level)};
          case_ = apply_event(case_, Event(staged));
          rebuild_model();
          resolve_algebraic("fault-on at bus " + std::to_string(on->bus));
        }
        done = true;
        break;
      } catch (const CollapseError&) {
        continue;
      }
    }
    if (!done)
      throw CollapseError("fault-on at bus " + std::to_string(on->bus) +
                              " has no algebraic solution",
                          time());
    return;
  }
  if (const auto* off = std::get_if<FaultOff>(&event)) {
    // The network sits deep in the fault-depressed solution branch. Restart
    // the algebraic guess from the pre-fault profile so Newton lands on the
    // healthy branch rather than the low-voltage one.
    case_ = apply_event(case_, event);
    if (pre_fault_y_) {
      y_ = *pre_fault_y_;
      pre_fault_y_.reset();
    }
    rebuild_model();
    resolve_algebraic("fault clearing at bus " + std::to_string(off->bus));
    return;
  }
  bool saturated = false;
  case_ = apply_event(case_, event, &saturated);
  if (const auto* tap = std::get_if<TapStep>(&event))
    tap_log_.push_back({time(), tap->ltc, tap->steps, case_.ltcs[tap->ltc].ratio});
}

void Simulator::apply_events_at_tick(long long tick) {
  auto [lo, hi] = queue_.equal_range(tick);
  bool pending = false;
  for (auto it = lo; it != hi; ++it) {
    const bool self_resolving = std::holds_alternative<FaultOn>(it->second) ||
                                std::holds_alternative<FaultOff>(it->second);
    if (self_resolving) {
      if (pending) {
        rebuild_model();
        resolve_algebraic("event application");
        pending = false;
      }
      apply_one_event(it->second);  // staged, resolves internally
    } else {
      apply_one_event(it->second);
      pending = true;
    }
  }
  if (pending) {
    rebuild_model();
    resolve_algebraic("event application");
  }
  queue_.erase(lo, hi);
}

void Simulator::apply_control_move(const ControlMove& move) {
  if (move.svc_delta.size() != static_cast<long>(case_.svcs.size()) ||
      move.ls_shed.size() != static_cast<long>(case_.ls_actuators.size()) ||
      move.tap_steps.size() != case_.ltcs.size())
    throw ContractError("control move dimensions do not match the case");
  for (size_t i = 0; i < case_.svcs.size(); ++i) {
    SvcDevice& s = case_.svcs[i];
    s.b = std::clamp(s.b + move.svc_delta(static_cast<int>(i)), 0.0, s.b_max);
  }
  for (size_t i = 0; i < case_.ls_actuators.size(); ++i) {
    const double dp = move.ls_shed(static_cast<int>(i));
    if (dp > 1e-12)
      case_ = apply_event(case_, LoadShed{case_.ls_actuators[i].bus, dp});
  }
  for (size_t i = 0; i < case_.ltcs.size(); ++i) {
    if (move.tap_steps[i] == 0) continue;
    case_ = apply_event(case_, TapStep{static_cast<int>(i), move.tap_steps[i]});
    tap_log_.push_back(
        {time(), static_cast<int>(i), move.tap_steps[i], case_.ltcs[i].ratio});
  }
  rebuild_model();
  resolve_algebraic("control move");
}

void Simulator::apply_channel_offset(const Channel& channel, double delta) {
  switch (channel.family) {
    case Channel::Family::kSvc:
      case_.svcs.at(channel.index).b += delta;
      break;
    case Channel::Family::kLs: {
      ErLoad* load = nullptr;
      for (auto& l : case_.loads)
        if (l.bus == case_.ls_actuators.at(channel.index).bus) load = &l;
      if (!load) throw ContractError("ls channel without a load");
      const double ratio = load->p0 > 0.0 ? load->q0 / load->p0 : 0.0;
      load->p0 -= delta;
      load->q0 -= delta * ratio;
      break;
    }
    case Channel::Family::kLtc:
      case_.ltcs.at(channel.index).ratio += delta;
      break;
  }
  rebuild_model();
  resolve_algebraic("channel offset");
}

void Simulator::integrate_to(long long target_tick) {
  long long cur = grid_tick(index_);
  const ControlVector u0 = ControlVector::zeros(case_);
  while (cur < target_tick) {
    auto it = queue_.upper_bound(cur);
    const long long next =
        (it != queue_.end() && it->first < target_tick) ? it->first : target_tick;
    const double h = static_cast<double>(next - cur) * 1e-9;
    const CaseSystem sys(*model_, u0);
    StepOutcome step =
        trapezoidal_step(sys, x_, y_, h, cfg_.newton_tol, cfg_.max_newton);
    if (!step.converged) {
      // One retry at h/2: two half steps landing on the same point.
      StepOutcome half =
          trapezoidal_step(sys, x_, y_, h / 2, cfg_.newton_tol, cfg_.max_newton);
      if (half.converged)
        step = trapezoidal_step(sys, half.x, half.y, h / 2, cfg_.newton_tol,
                                cfg_.max_newton);
      if (!half.converged || !step.converged)
        throw CollapseError("integration step rejected (voltage instability)",
                            static_cast<double>(next) * 1e-9);
    }
    x_ = step.x;
    y_ = step.y;
    cur = next;
    if (cur < target_tick) apply_events_at_tick(cur);
  }
}

SampleBlock Simulator::advance(double duration) {
  const long k = steps_for(duration, cfg_.t_s, "Simulator::advance");
  // Events exactly at the start time apply before the first sample.
  apply_events_at_tick(grid_tick(index_));

  SampleBlock block;
  block.start_index = index_;
  block.times = Vec(k);
  block.x = Mat(x_.size(), k);
  block.y = Mat(y_.size(), k);
  block.v = Mat(model_->n_buses(), k);
  if (cfg_.archive_jacobians) block.jacobians.reserve(k);

  const ControlVector u0 = ControlVector::zeros(case_);
  for (long s = 0; s < k; ++s) {
    block.times(s) = t0_ + static_cast<double>(index_) * cfg_.t_s;
    block.x.col(s) = x_;
    block.y.col(s) = y_;
    block.v.col(s) = model_->voltages(y_);
    if (cfg_.archive_jacobians) {
      JacobianRecord rec;
      model_->state_jacobians(x_, y_, u0, rec.f_x, rec.f_y, rec.g_x, rec.g_y);
      model_->control_jacobians(x_, y_, u0, rec.f_u, rec.g_u);
      block.jacobians.push_back(std::move(rec));
    }

    integrate_to(grid_tick(index_ + 1));
    ++index_;
    apply_events_at_tick(grid_tick(index_));
  }
  return block;
}

Vec solve_algebraic(const Vec& x, const Vec& y_guess, const ControlVector& u,
                    const PowerSystemCase& c, double tol) {
  const CaseModel model(c);
  const CaseSystem sys(model, u);
  Vec y = y_guess;
  if (!solve_algebraic_system(sys, x, y, tol, 50))
    throw CollapseError("algebraic solve did not converge (voltage instability)",
                        0.0);
  return y;
}

std::pair<Vec, Vec> step_trapezoidal(const Vec& x, const Vec& y,
                                     const ControlVector& u,
                                     const PowerSystemCase& c, double h,
                                     const IntegratorConfig& config) {
  const CaseModel model(c);
  const CaseSystem sys(model, u);
  const StepOutcome out =
      trapezoidal_step(sys, x, y, h, config.newton_tol, config.max_newton);
  if (!out.converged)
    throw CollapseError("trapezoidal step rejected", h);
  return {out.x, out.y};
}

std::vector<TrajectorySegment> simulate(const PowerSystemCase& c,
                                        const EventSchedule& events,
                                        const ControlSchedule& controls, double t0,
                                        double t1, const IntegratorConfig& config) {
  if (t1 <= t0) throw ContractError("simulate: t1 must exceed t0");
  const long m = steps_for(controls.t_c, config.t_s, "simulate");
  steps_for(t1 - t0, controls.t_c, "simulate");  // whole control intervals only

  Simulator sim = Simulator::from_equilibrium(c, t0, config);
  sim.add_events(events);
  // Tap implementations that land after the last schedule entry.
  for (const auto& [instant, ltc, steps] : controls.pending_taps_after_end()) {
    const double ti = controls.instant_time(instant);
    if (ti >= t0 && ti < t1) sim.add_event(ti, TapStep{ltc, steps});
  }

  SampleBlock all;
  double t = t0;
  for (int k = 0; k < controls.num_instants(); ++k) {
    const double tk = controls.instant_time(k);
    if (tk < t0 || tk >= t1) continue;
    if (tk > t) {
      all.append(sim.advance(tk - t));
      t = tk;
    }
    sim.apply_control_move(controls.move_at(k, sim.current_case()));
  }
  if (t < t1) all.append(sim.advance(t1 - t));
  return slice_segments(all, static_cast<int>(m), 0);
}

}  // namespace gridmpc
