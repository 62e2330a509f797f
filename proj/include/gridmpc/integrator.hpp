#pragma once

#include <map>
#include <optional>
#include <memory>
#include <vector>

#include "gridmpc/model.hpp"
#include "gridmpc/schedule.hpp"

namespace gridmpc {

struct IntegratorConfig {
  double t_s = 0.1;         // sample interval = internal step, s
  double newton_tol = 1e-10;
  int max_newton = 25;
  bool archive_jacobians = false;
};

/// Jacobians at one accepted sample (controls folded into the case, so the
/// control columns are evaluated at u = 0).
struct JacobianRecord {
  Mat f_x, f_y, g_x, g_y, f_u, g_u;
};

/// A contiguous run of samples spaced t_s apart; columns are samples.
struct SampleBlock {
  long start_index = 0;  // global sample index of the first column
  Vec times;
  Mat x;
  Mat y;
  Mat v;  // bus voltage magnitudes
  std::vector<JacobianRecord> jacobians;

  int samples() const { return static_cast<int>(times.size()); }
  void append(const SampleBlock& other);
};

/// The range-notation view: exactly M samples per control interval.
struct TrajectorySegment {
  int start_instant = 0;  // control instant j; covers [jT_c, (j+1)T_c)
  Vec times;
  Mat x;
  Mat y;
  Mat v;
  std::vector<JacobianRecord> jacobians;

  int samples() const { return static_cast<int>(times.size()); }
};

/// Cuts a block into segments of m samples. Throws ContractError when the
/// sample count is not a multiple of m.
std::vector<TrajectorySegment> slice_segments(const SampleBlock& block, int m,
                                              int first_instant);

struct EventSchedule {
  std::vector<std::pair<double, Event>> items;  // times non-decreasing
};

/// Time-domain simulation engine. Owns a working case, a consistent (x, y)
/// point, and the not-yet-applied event queue. Copyable: a copy is an
/// independent what-if branch.
class Simulator {
 public:
  Simulator(const PowerSystemCase& completed_case, const Vec& x0, const Vec& y0,
            double t0, const IntegratorConfig& config);
  Simulator(const Simulator& other);
  Simulator& operator=(const Simulator& other);
  Simulator(Simulator&&) = default;
  Simulator& operator=(Simulator&&) = default;

  /// Convenience: equilibrium start at t0.
  static Simulator from_equilibrium(const PowerSystemCase& c, double t0,
                                    const IntegratorConfig& config);

  /// Queues an event at its exact time (>= current time). Off-grid events
  /// split the integration step at the event instant; the sample grid is
  /// unaffected.
  void add_event(double time, const Event& event);
  void add_events(const EventSchedule& events);
  void clear_events() { queue_.clear(); }

  /// Applies a control move right now: SVC increments, load shedding, tap
  /// steps; then re-solves the algebraic constraints.
  void apply_control_move(const ControlMove& move);

  /// Signed offset on one control channel (susceptance, shed, or continuous
  /// tap ratio), without step-bound clamping. Used by the finite-difference
  /// sensitivity oracle.
  void apply_channel_offset(const Channel& channel, double delta);

  void set_archive(bool enabled) { cfg_.archive_jacobians = enabled; }

  /// Integrates duration seconds (a multiple of t_s), returning the samples
  /// [t, t + duration). Throws CollapseError with the failure time when
  /// Newton cannot converge even after a halved retry step.
  SampleBlock advance(double duration);

  double time() const { return t0_ + static_cast<double>(index_) * cfg_.t_s; }
  long sample_index() const { return index_; }
  const PowerSystemCase& current_case() const { return case_; }
  const Vec& state() const { return x_; }
  const Vec& algebraic() const { return y_; }
  const IntegratorConfig& config() const { return cfg_; }

  /// Tap-change log: (time, ltc index, steps, ratio after).
  struct TapEvent {
    double time;
    int ltc;
    int steps;
    double ratio_after;
  };
  const std::vector<TapEvent>& tap_log() const { return tap_log_; }

 private:
  void rebuild_model();
  void apply_events_at_tick(long long tick);
  void apply_one_event(const Event& event);
  void resolve_algebraic(const std::string& what);
  long long grid_tick(long index) const;
  void integrate_to(long long target_tick);

  PowerSystemCase case_;
  std::unique_ptr<CaseModel> model_;
  IntegratorConfig cfg_;
  double t0_ = 0.0;
  long index_ = 0;
  Vec x_, y_;
  std::multimap<long long, Event> queue_;  // keyed by nanosecond timestamps
  std::optional<Vec> pre_fault_y_;
  std::vector<TapEvent> tap_log_;
};

/// Spec-level operations.

/// Newton re-solve of g(x, y, u) = 0 from y_guess. Throws CollapseError on
/// non-convergence (reported as voltage instability).
Vec solve_algebraic(const Vec& x, const Vec& y_guess, const ControlVector& u,
                    const PowerSystemCase& c, double tol = 1e-10);

/// One implicit-trapezoidal step of the case DAE.
std::pair<Vec, Vec> step_trapezoidal(const Vec& x, const Vec& y,
                                     const ControlVector& u,
                                     const PowerSystemCase& c, double h,
                                     const IntegratorConfig& config);

/// Initializes the equilibrium, queues the events and the piecewise-constant
/// control schedule, and simulates [t0, t1). t1 - t0 must be a multiple of
/// the control interval; the result is the segmented range-notation view.
std::vector<TrajectorySegment> simulate(const PowerSystemCase& c,
                                        const EventSchedule& events,
                                        const ControlSchedule& controls, double t0,
                                        double t1, const IntegratorConfig& config);

}  // namespace gridmpc
