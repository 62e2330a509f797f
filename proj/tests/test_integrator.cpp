#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gridmpc/caseio.hpp"
#include "gridmpc/dae_step.hpp"
#include "gridmpc/scenario.hpp"

using namespace gridmpc;

namespace {

// Scalar test DAE: x' = -x, 0 = y - x. Exact solution e^{-t}.
struct ScalarDae {
  int n_states() const { return 1; }
  int n_algebraic() const { return 1; }
  void residuals(const Vec& x, const Vec& y, Vec& f, Vec& g) const {
    f = Vec::Constant(1, -x(0));
    g = Vec::Constant(1, y(0) - x(0));
  }
  void jacobians(const Vec&, const Vec&, Mat& f_x, Mat& f_y, Mat& g_x,
                 Mat& g_y) const {
    f_x = Mat::Constant(1, 1, -1.0);
    f_y = Mat::Zero(1, 1);
    g_x = Mat::Constant(1, 1, -1.0);
    g_y = Mat::Constant(1, 1, 1.0);
  }
};

double integrate_scalar_error(double h) {
  const ScalarDae sys;
  Vec x = Vec::Ones(1), y = Vec::Ones(1);
  double err = 0.0;
  const int n = static_cast<int>(std::lround(1.0 / h));
  for (int k = 0; k < n; ++k) {
    const auto out = trapezoidal_step(sys, x, y, h, 1e-14, 30);
    REQUIRE(out.converged);
    x = out.x;
    y = out.y;
    err = std::max(err, std::abs(x(0) - std::exp(-(k + 1) * h)));
  }
  return err;
}

PowerSystemCase nine_bus() { return load_case(resolve_case_path("9bus")); }

ControlSchedule empty_schedule(double first, double t_c) {
  ControlSchedule s;
  s.first_time = first;
  s.t_c = t_c;
  return s;
}

}  // namespace

TEST_CASE("trapezoidal closed form on the scalar DAE") {
  const ScalarDae sys;
  const auto out = trapezoidal_step(sys, Vec::Ones(1), Vec::Ones(1), 0.1, 1e-14, 30);
  REQUIRE(out.converged);
  CHECK(out.x(0) == doctest::Approx((1.0 - 0.05) / (1.0 + 0.05)).epsilon(1e-12));
  CHECK(out.y(0) == doctest::Approx(out.x(0)).epsilon(1e-12));
}

TEST_CASE("halving the step quarters the global error") {
  const double e1 = integrate_scalar_error(0.1);
  const double e2 = integrate_scalar_error(0.05);
  const double ratio = e1 / e2;
  CHECK(ratio > 3.5);
  CHECK(ratio < 4.5);
}

TEST_CASE("equilibrium is a fixed point of the step") {
  const auto eq = initialize_equilibrium(nine_bus());
  IntegratorConfig cfg;
  const auto [x1, y1] =
      step_trapezoidal(eq.x0, eq.y0, ControlVector::zeros(eq.completed_case),
                       eq.completed_case, 0.1, cfg);
  CHECK((x1 - eq.x0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((y1 - eq.y0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("solve_algebraic is idempotent at a solution and resolves faults") {
  const auto eq = initialize_equilibrium(nine_bus());
  const auto& c = eq.completed_case;
  const auto u = ControlVector::zeros(c);
  const Vec y_same = solve_algebraic(eq.x0, eq.y0, u, c);
  CHECK((y_same - eq.y0).cwiseAbs().maxCoeff() == 0.0);  // already converged

  const auto faulted = apply_event(c, FaultOn{5, 100.0, -100.0});
  const Vec y_fault = solve_algebraic(eq.x0, eq.y0, ControlVector::zeros(faulted),
                                      faulted, 1e-10);
  const auto [f, g] = dae_residuals(eq.x0, y_fault, ControlVector::zeros(faulted),
                                    faulted);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-10);
  CHECK(y_fault(c.n_buses() + c.bus_index(5)) < 0.2);  // faulted bus near zero
}

TEST_CASE("an undeliverable load is reported as collapse, not a crash") {
  PowerSystemCase c;
  c.buses = {{1, 1.0}, {2, 1.0}};
  Line l;
  l.from = 1;
  l.to = 2;
  l.x = 0.1;
  c.lines = {l};
  Generator g;
  g.bus = 1;
  g.xd_t = 0.1;
  g.reference = true;
  c.generators = {g};
  ErLoad load;
  load.bus = 2;
  load.p0 = 0.0;  // pure constant-power remnant through x_P below
  c.loads = {load};
  c.generators[0].emf = 1.0;

  const CaseModel model(c);
  Vec x = Vec::Zero(model.n_states());
  x(model.load_xp_index(0)) = 20.0 * 30.0;  // consumes 20 p.u. regardless of V
  Vec y(4);
  y << 0.0, 0.0, 1.0, 1.0;
  CHECK_THROWS_AS(solve_algebraic(x, y, ControlVector::zeros(c), c), CollapseError);
}

TEST_CASE("equilibrium start with no events holds for 6 seconds") {
  IntegratorConfig cfg;
  const auto segs = simulate(nine_bus(), EventSchedule{}, empty_schedule(4.5, 3.0),
                             0.0, 6.0, cfg);
  REQUIRE(segs.size() == 2);
  for (const auto& seg : segs) {
    CHECK(seg.samples() == 30);
    for (int s = 0; s < seg.samples(); ++s)
      CHECK((seg.v.col(s) - segs[0].v.col(0)).cwiseAbs().maxCoeff() < 1e-6);
  }
  // Sample times are reproducible bit-exactly from (j, M, t_s).
  for (size_t j = 0; j < segs.size(); ++j)
    for (int s = 0; s < segs[j].samples(); ++s)
      CHECK(segs[j].times(s) == static_cast<double>(j * 30 + s) * cfg.t_s);
}

TEST_CASE("nine-bus fault leaves a sustained undervoltage without control") {
  const auto c = nine_bus();
  const auto sc = builtin_scenario("fault5");
  IntegratorConfig cfg;
  const auto eq = initialize_equilibrium(c);
  Simulator sim(eq.completed_case, eq.x0, eq.y0, 0.0, cfg);
  sim.add_events(scenario_events(sc, c, cfg.t_s));
  const auto block = sim.advance(30.0);

  const int b5 = c.bus_index(5);
  bool sustained = true;
  for (int s = 0; s < block.samples(); ++s)
    if (block.times(s) >= 10.0 && block.v(b5, s) >= 0.95) sustained = false;
  CHECK(sustained);

  // Algebraic consistency at the first samples after inception and clearing.
  const auto u = ControlVector::zeros(sim.current_case());
  for (double t_evt : {1.0, 1.1}) {
    const int s = static_cast<int>(std::lround(t_evt / cfg.t_s));
    PowerSystemCase snapshot = c;
    // residuals must be evaluated against the case as of that instant
    snapshot = apply_event(eq.completed_case, FaultOn{5, 100.0, -100.0});
    if (t_evt > 1.05) {
      snapshot = apply_event(snapshot, FaultOff{5});
      snapshot = apply_event(snapshot, LineTrip{find_line(c, 4, 5)});
    }
    const auto [f, g] = dae_residuals(block.x.col(s), block.y.col(s),
                                      ControlVector::zeros(snapshot), snapshot);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-9);
  }
  (void)u;
}

TEST_CASE("saturated SVC support lifts every post-control sample") {
  const auto c = nine_bus();
  const auto sc = builtin_scenario("fault5");
  IntegratorConfig cfg;

  ControlSchedule none = empty_schedule(4.5, 3.0);
  ControlSchedule full = empty_schedule(4.5, 3.0);
  for (int k = 0; k < 5; ++k) {
    full.entries.push_back({Vec::Constant(3, 0.2), Vec::Zero(2),
                            std::vector<int>(2, 0)});
  }
  const auto ev = scenario_events(sc, c, cfg.t_s);
  const auto base = simulate(c, ev, none, 0.0, 30.0, cfg);
  const auto lifted = simulate(c, ev, full, 0.0, 30.0, cfg);
  REQUIRE(base.size() == lifted.size());
  for (size_t j = 0; j < base.size(); ++j) {
    for (int s = 0; s < base[j].samples(); ++s) {
      if (base[j].times(s) < 4.5) continue;
      CHECK(lifted[j].v.col(s).minCoeff() > base[j].v.col(s).minCoeff());
    }
  }
}

TEST_CASE("identical inputs give bit-identical trajectories") {
  const auto c = nine_bus();
  const auto sc = builtin_scenario("fault5");
  IntegratorConfig cfg;
  const auto ev = scenario_events(sc, c, cfg.t_s);
  const auto a = simulate(c, ev, empty_schedule(4.5, 3.0), 0.0, 9.0, cfg);
  const auto b = simulate(c, ev, empty_schedule(4.5, 3.0), 0.0, 9.0, cfg);
  REQUIRE(a.size() == b.size());
  for (size_t j = 0; j < a.size(); ++j) {
    CHECK(a[j].x == b[j].x);
    CHECK(a[j].y == b[j].y);
    CHECK(a[j].times == b[j].times);
  }
}

TEST_CASE("misaligned durations are rejected") {
  const auto c = nine_bus();
  IntegratorConfig cfg;
  CHECK_THROWS_AS(simulate(c, EventSchedule{}, empty_schedule(4.5, 3.0), 0.0, 3.14,
                           cfg),
                  ContractError);
  const auto eq = initialize_equilibrium(c);
  Simulator sim(eq.completed_case, eq.x0, eq.y0, 0.0, cfg);
  CHECK_THROWS_AS(sim.advance(0.1234), ContractError);
}
