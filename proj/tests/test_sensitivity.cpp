#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gridmpc/caseio.hpp"
#include "gridmpc/dae_step.hpp"
#include "gridmpc/scenario.hpp"
#include "gridmpc/sensitivity.hpp"

using namespace gridmpc;

namespace {

PowerSystemCase nine_bus() { return load_case(resolve_case_path("9bus")); }

// Post-fault 9-bus plant advanced to t_start, archive enabled from there on.
struct FaultedPlant {
  Simulator sim;
  PowerSystemCase base;
};

Simulator faulted_plant_at(double t_start, bool archive) {
  const auto c = nine_bus();
  IntegratorConfig cfg;
  Simulator sim = Simulator::from_equilibrium(c, 0.0, cfg);
  sim.add_events(scenario_events(builtin_scenario("fault5"), c, cfg.t_s));
  if (t_start > 0.0) sim.advance(t_start);
  sim.set_archive(archive);
  return sim;
}

}  // namespace

TEST_CASE("variational propagation reproduces the scalar closed form") {
  // x' = -x + u, y = x: the sensitivity y_u(t) = 1 - exp(-(t - t_a)).
  const double h = 0.05;
  const int ns = 61;
  SampleBlock block;
  block.times = Vec::LinSpaced(ns, 0.0, h * (ns - 1));
  block.x = Mat::Zero(1, ns);
  block.y = Mat::Zero(1, ns);
  block.v = Mat::Zero(1, ns);
  JacobianRecord rec;
  rec.f_x = Mat::Constant(1, 1, -1.0);
  rec.f_y = Mat::Zero(1, 1);
  rec.g_x = Mat::Constant(1, 1, -1.0);
  rec.g_y = Mat::Constant(1, 1, 1.0);
  rec.f_u = Mat::Constant(1, 1, 1.0);
  rec.g_u = Mat::Zero(1, 1);
  block.jacobians.assign(ns, rec);

  const auto y_u = propagate_variational(block, {0});
  for (int n = 0; n < ns; ++n) {
    const double expected = 1.0 - std::exp(-block.times(n));
    CHECK(std::abs(y_u[n](0, 0) - expected) < 1e-4);
  }
}

TEST_CASE("augmented system has zero dynamics on the appended controls") {
  const auto eq = initialize_equilibrium(nine_bus());
  const auto& c = eq.completed_case;
  const auto channels = all_channels(c);
  const auto aug = augment_controls(c, channels);

  Vec x_aug = Vec::Zero(aug.n_states());
  x_aug.head(eq.x0.size()) = eq.x0;
  for (int i = 0; i < aug.num_channels(); ++i)
    x_aug(eq.x0.size() + i) = 0.01 * (i + 1);
  Vec f_aug, g;
  aug.residuals(x_aug, eq.y0, f_aug, g);
  CHECK(f_aug.tail(aug.num_channels()).cwiseAbs().maxCoeff() == 0.0);

  // Block structure [[f_x, f_u], [0, 0]] against the direct Jacobians.
  Mat fx_a, fy_a, gx_a, gy_a;
  aug.jacobians(x_aug, eq.y0, fx_a, fy_a, gx_a, gy_a);
  ControlVector u;
  Vec x;
  aug.split(x_aug, x, u);
  const Jacobians jac = analytic_jacobians(x, eq.y0, u, c);
  const int nx = static_cast<int>(eq.x0.size());
  const int nc = aug.num_channels();
  CHECK((fx_a.topLeftCorner(nx, nx) - jac.f_x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((fx_a.topRightCorner(nx, nc) - jac.f_u).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fx_a.bottomRows(nc).cwiseAbs().maxCoeff() == 0.0);
  CHECK((gx_a.leftCols(nx) - jac.g_x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((gx_a.rightCols(nc) - jac.g_u).cwiseAbs().maxCoeff() == 0.0);
  CHECK((gy_a - jac.g_y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("augmented simulation with constant controls reproduces the plant") {
  Simulator plant = faulted_plant_at(2.0, false);
  const PowerSystemCase frozen = plant.current_case();
  const Vec x0 = plant.state();
  const Vec y0 = plant.algebraic();

  // Plain integration.
  IntegratorConfig cfg;
  Vec x = x0, y = y0;
  Mat v_plain(frozen.n_buses(), 20);
  const auto u0 = ControlVector::zeros(frozen);
  for (int s = 0; s < 20; ++s) {
    std::tie(x, y) = step_trapezoidal(x, y, u0, frozen, cfg.t_s, cfg);
    v_plain.col(s) = y.tail(frozen.n_buses());
  }

  // Control-augmented integration with the controls held at zero offset.
  const auto aug = augment_controls(frozen, all_channels(frozen));
  Vec xa = Vec::Zero(aug.n_states());
  xa.head(x0.size()) = x0;
  Vec ya = y0;
  Mat v_aug(frozen.n_buses(), 20);
  for (int s = 0; s < 20; ++s) {
    const auto out = trapezoidal_step(aug, xa, ya, cfg.t_s, cfg.newton_tol, 25);
    REQUIRE(out.converged);
    xa = out.x;
    ya = out.y;
    v_aug.col(s) = ya.tail(frozen.n_buses());
  }
  CHECK((v_plain - v_aug).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("algebraic sensitivity jumps to -g_y^-1 g_u at the application instant") {
  Simulator sim = faulted_plant_at(4.5, true);
  const auto block = sim.advance(3.0);
  const auto& c = sim.current_case();
  const auto tensor =
      propagate_sensitivities(block, c, {{Channel::Family::kSvc, 0}});

  const auto& j0 = block.jacobians[0];
  const Mat y_u0 = j0.g_y.partialPivLu().solve(-j0.g_u);
  const int col = channel_column(c, {Channel::Family::kSvc, 0});
  const Vec expected = y_u0.col(col).tail(c.n_buses());
  CHECK((tensor.s[0].col(0) - expected).cwiseAbs().maxCoeff() < 1e-12);
  // Nonzero immediate effect on the SVC bus itself.
  CHECK(std::abs(tensor.s[0](c.bus_index(5), 0)) > 1e-3);
}

TEST_CASE("propagated sensitivities match the finite-difference oracle") {
  Simulator sim = faulted_plant_at(4.5, true);
  const auto block = sim.advance(3.0);
  const auto& c = sim.current_case();
  const auto sc = builtin_scenario("fault5");
  IntegratorConfig cfg;
  const auto events = scenario_events(sc, nine_bus(), cfg.t_s);
  ControlSchedule frozen;
  frozen.first_time = sc.first_instant;
  frozen.t_c = sc.t_c;

  for (const Channel ch : {Channel{Channel::Family::kSvc, 0},
                           Channel{Channel::Family::kLs, 0},
                           Channel{Channel::Family::kLtc, 1}}) {
    const auto tensor = propagate_sensitivities(block, c, {ch});
    const Mat fd =
        finite_difference_oracle(nine_bus(), events, frozen, ch, 1e-4, 4.5, 3.0, cfg);
    double worst = 0.0;
    for (int t = 0; t < tensor.samples(); ++t) {
      for (int b = 0; b < c.n_buses(); ++b) {
        const double want = fd(b, t);
        const double got = tensor.s[t](b, 0);
        if (std::abs(want) < 1e-4) continue;  // absolute floor
        worst = std::max(worst, std::abs(got - want) / std::abs(want));
      }
    }
    CHECK(worst < 0.02);
  }
}

TEST_CASE("finite differences are Richardson-consistent") {
  const auto c = nine_bus();
  IntegratorConfig cfg;
  const auto events = scenario_events(builtin_scenario("fault5"), c, cfg.t_s);
  ControlSchedule frozen;
  frozen.first_time = 4.5;
  frozen.t_c = 3.0;
  const Channel ch{Channel::Family::kSvc, 0};
  const Mat s1 = finite_difference_oracle(c, events, frozen, ch, 1e-3, 4.5, 2.0, cfg);
  const Mat s2 = finite_difference_oracle(c, events, frozen, ch, 5e-4, 4.5, 2.0, cfg);
  const double scale = s1.cwiseAbs().maxCoeff();
  CHECK((s1 - s2).cwiseAbs().maxCoeff() / scale < 0.005);
}

TEST_CASE("the variational system is linear in the control channels") {
  Simulator sim = faulted_plant_at(4.5, true);
  SampleBlock block = sim.advance(3.0);
  const auto& c = sim.current_case();
  const int ci = channel_column(c, {Channel::Family::kSvc, 0});
  const int cj = channel_column(c, {Channel::Family::kLs, 1});

  // Append a synthetic column carrying the sum of both channels.
  for (auto& rec : block.jacobians) {
    rec.f_u.conservativeResize(Eigen::NoChange, rec.f_u.cols() + 1);
    rec.f_u.col(rec.f_u.cols() - 1) = rec.f_u.col(ci) + rec.f_u.col(cj);
    rec.g_u.conservativeResize(Eigen::NoChange, rec.g_u.cols() + 1);
    rec.g_u.col(rec.g_u.cols() - 1) = rec.g_u.col(ci) + rec.g_u.col(cj);
  }
  const int combined = static_cast<int>(block.jacobians[0].f_u.cols()) - 1;
  const auto separate = propagate_variational(block, {ci, cj});
  const auto joint = propagate_variational(block, {combined});
  for (size_t n = 0; n < separate.size(); ++n) {
    const Vec sum = separate[n].col(0) + separate[n].col(1);
    CHECK((joint[n].col(0) - sum).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("linear prediction identities and quadratic error decay") {
  Simulator sim = faulted_plant_at(4.5, true);
  const auto block = sim.advance(3.0);
  const auto& c = sim.current_case();
  const auto tensor = propagate_sensitivities(block, c, {{Channel::Family::kSvc, 0}});

  // du = 0 reproduces the nominal exactly.
  const Mat same = predict_linear(block.v, tensor, Vec::Zero(1));
  CHECK((same - block.v).cwiseAbs().maxCoeff() == 0.0);

  // Hand arithmetic: V = 0.96, S = 0.05, du = 0.2 -> 0.97.
  SensitivityTensor toy;
  toy.times = Vec::Zero(1);
  toy.labels = {"svc:0"};
  toy.s = {Mat::Constant(1, 1, 0.05)};
  const Mat vhat = predict_linear(Mat::Constant(1, 1, 0.96), toy,
                                  Vec::Constant(1, 0.2));
  CHECK(vhat(0, 0) == doctest::Approx(0.97).epsilon(1e-12));

  // Halving the control halves the linearization error at least 3x.
  auto nonlinear_error = [&](double db) {
    Simulator other = faulted_plant_at(4.5, false);
    ControlMove move = ControlMove::zeros(other.current_case());
    move.svc_delta(0) = db;
    other.apply_control_move(move);
    const auto truth = other.advance(3.0);
    const Mat pred = predict_linear(block.v, tensor, Vec::Constant(1, db));
    return (pred - truth.v).cwiseAbs().maxCoeff();
  };
  const double e_full = nonlinear_error(0.1);
  const double e_half = nonlinear_error(0.05);
  CHECK(e_full / e_half >= 3.0);
}
