#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "gridmpc/qp.hpp"

using namespace gridmpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QpProblem box_only(const Mat& h, const Vec& c, const Vec& lb, const Vec& ub) {
  QpProblem p;
  p.H = h;
  p.c = c;
  p.A = Mat::Zero(0, c.size());
  p.b = Vec::Zero(0);
  p.lb = lb;
  p.ub = ub;
  return p;
}

// Independent first-order oracle: projected gradient ascent on the dual of
//   min 0.5 z'Hz + c'z  s.t.  A z <= b
// (boxes folded into rows by the caller). Deliberately naive and slow.
Vec dual_projected_gradient(const Mat& h, const Vec& c, const Mat& a, const Vec& b,
                            int iters) {
  const Mat hinv_at = h.ldlt().solve(a.transpose());
  const Mat q = a * hinv_at;               // dual Hessian
  const Vec hinv_c = h.ldlt().solve(c);
  const Vec r = -(b + a * hinv_c);
  const double lip = q.cwiseAbs().rowwise().sum().maxCoeff();
  const double step = 1.0 / (lip + 1e-12);
  Vec lam = Vec::Zero(b.size());
  for (int it = 0; it < iters; ++it) {
    const Vec grad = r - q * lam;
    lam = (lam + step * grad).cwiseMax(0.0);
  }
  return -hinv_c - hinv_at * lam;
}

}  // namespace

TEST_CASE("interior unconstrained minimum wins") {
  const int n = 4;
  QpProblem p = box_only(Mat::Identity(n, n), Vec::Zero(n), Vec::Constant(n, -1.0),
                         Vec::Constant(n, 1.0));
  const auto sol = solve_qp(p);
  REQUIRE(sol.status == QpStatus::kOptimal);
  CHECK(sol.z.cwiseAbs().maxCoeff() < 1e-12);
  CHECK(kkt_residual(p, sol) < 1e-8);
}

TEST_CASE("active upper bound clamps the minimizer") {
  // minimize (z-2)^2 = z^2 - 4z + 4 subject to z <= 1
  QpProblem p = box_only(2.0 * Mat::Identity(1, 1), Vec::Constant(1, -4.0),
                         Vec::Constant(1, -kInf), Vec::Constant(1, 1.0));
  const auto sol = solve_qp(p);
  REQUIRE(sol.status == QpStatus::kOptimal);
  CHECK(sol.z(0) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(sol.mult_ub(0) > 0.0);
  CHECK(kkt_residual(p, sol) < 1e-8);
}

TEST_CASE("random SPD problems match the dual projected-gradient oracle") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int rep = 0; rep < 25; ++rep) {
    const int n = 5, m = 3;
    Mat g(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) g(i, j) = gauss(rng);
    QpProblem p;
    p.H = g * g.transpose() + 0.5 * Mat::Identity(n, n);
    p.c = Vec::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); });
    p.A = Mat::NullaryExpr(m, n, [&](Eigen::Index, Eigen::Index) { return gauss(rng); });
    p.b = Vec::NullaryExpr(m, [&](Eigen::Index) { return std::abs(gauss(rng)); });
    p.lb = Vec::Constant(n, -3.0);
    p.ub = Vec::Constant(n, 3.0);

    const auto sol = solve_qp(p);
    REQUIRE(sol.status == QpStatus::kOptimal);
    CHECK(kkt_residual(p, sol) < 1e-8);

    // Fold boxes into rows for the oracle.
    Mat a_all(m + 2 * n, n);
    Vec b_all(m + 2 * n);
    a_all.topRows(m) = p.A;
    b_all.head(m) = p.b;
    a_all.middleRows(m, n) = Mat::Identity(n, n);
    b_all.segment(m, n) = p.ub;
    a_all.bottomRows(n) = -Mat::Identity(n, n);
    b_all.tail(n) = -p.lb;
    const Vec z_ref = dual_projected_gradient(p.H, p.c, a_all, b_all, 200000);
    CHECK((sol.z - z_ref).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("kkt residual separates optima from perturbed points") {
  QpProblem p = box_only(2.0 * Mat::Identity(1, 1), Vec::Constant(1, -4.0),
                         Vec::Constant(1, -kInf), Vec::Constant(1, 1.0));
  const auto sol = solve_qp(p);
  REQUIRE(sol.status == QpStatus::kOptimal);
  CHECK(kkt_residual(p, sol) < 1e-8);

  // Step back along the active constraint normal: complementarity breaks.
  Vec z = sol.z;
  z(0) -= 1e-3;
  CHECK(kkt_residual(p, z, sol.mult_ineq, sol.mult_ub, sol.mult_lb) >= 1e-4);
}

TEST_CASE("closed-form unconstrained point has a tiny residual") {
  Mat h(2, 2);
  h << 3.0, 1.0, 1.0, 2.0;
  Vec c(2);
  c << -1.0, 0.5;
  QpProblem p = box_only(h, c, Vec::Constant(2, -kInf), Vec::Constant(2, kInf));
  const Vec z = h.ldlt().solve(-c);
  CHECK(kkt_residual(p, z, Vec::Zero(0), Vec::Zero(2), Vec::Zero(2)) < 1e-10);
}

TEST_CASE("scaling H and c together leaves the argmin unchanged") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 4;
  Mat g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = gauss(rng);
  QpProblem p = box_only(g * g.transpose() + Mat::Identity(n, n),
                         Vec::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); }),
                         Vec::Constant(n, -0.5), Vec::Constant(n, 0.5));
  QpProblem q = p;
  q.H *= 37.0;
  q.c *= 37.0;
  const auto sa = solve_qp(p);
  const auto sb = solve_qp(q);
  REQUIRE(sa.status == QpStatus::kOptimal);
  REQUIRE(sb.status == QpStatus::kOptimal);
  CHECK((sa.z - sb.z).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("tightening a bound never decreases the optimum") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = 3;
  Mat g(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) g(i, j) = gauss(rng);
  QpProblem p = box_only(g * g.transpose() + Mat::Identity(n, n),
                         Vec::NullaryExpr(n, [&](Eigen::Index) { return gauss(rng); }),
                         Vec::Constant(n, -2.0), Vec::Constant(n, 2.0));
  double prev = -kInf;
  for (double u = 2.0; u >= 0.25; u *= 0.5) {
    QpProblem q = p;
    q.ub = Vec::Constant(n, u);
    const auto sol = solve_qp(q);
    REQUIRE(sol.status == QpStatus::kOptimal);
    CHECK(sol.objective >= prev - 1e-10);
    prev = sol.objective;
  }
}

TEST_CASE("infeasible problems are reported, not approximated") {
  QpProblem p = box_only(Mat::Identity(1, 1), Vec::Zero(1), Vec::Constant(1, 0.0),
                         Vec::Constant(1, 1.0));
  p.A = Mat::Constant(1, 1, 1.0);
  p.b = Vec::Constant(1, -2.0);  // z <= -2 contradicts z >= 0
  const auto sol = solve_qp(p);
  CHECK(sol.status == QpStatus::kInfeasible);
}

TEST_CASE("indefinite Hessians are rejected at construction") {
  QpProblem p = box_only(-Mat::Identity(2, 2), Vec::Zero(2), Vec::Constant(2, -1.0),
                         Vec::Constant(2, 1.0));
  CHECK_THROWS_AS(solve_qp(p), ContractError);
}

TEST_CASE("general equality-like corridor with redundant rows stays stable") {
  // Two parallel rows; the lower-index one must enter the working set first.
  QpProblem p = box_only(Mat::Identity(2, 2), Vec::Constant(2, -1.0),
                         Vec::Constant(2, -kInf), Vec::Constant(2, kInf));
  p.A = Mat(2, 2);
  p.A << 1.0, 1.0, 1.0, 1.0;
  p.b = Vec(2);
  p.b << 0.5, 0.5;
  const auto sol = solve_qp(p);
  REQUIRE(sol.status == QpStatus::kOptimal);
  CHECK(sol.z.sum() == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(kkt_residual(p, sol) < 1e-8);
}
