#pragma once

#include <string>
#include <vector>

#include "gridmpc/common.hpp"

namespace gridmpc {

/// Strictly convex quadratic program
///
///   min_z  0.5 z'Hz + c'z
///   s.t.   A z <= b,   lb <= z <= ub
///
/// H must be symmetric positive definite (verified by a Cholesky attempt in
/// validate()). Box entries may be +/-infinity to disable a side.
struct QpProblem {
  Mat H;
  Vec c;
  Mat A;  // may be 0 x n
  Vec b;
  Vec lb;
  Vec ub;

  int num_vars() const { return static_cast<int>(c.size()); }
  int num_ineq() const { return static_cast<int>(b.size()); }

  /// Throws ContractError on dimension mismatch or an indefinite Hessian.
  void validate() const;
};

enum class QpStatus { kOptimal, kMaxIterations, kInfeasible };

struct QpSolution {
  Vec z;
  double objective = 0.0;
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
  /// Lagrange multipliers (all nonnegative at an optimum).
  Vec mult_ineq;  // general rows
  Vec mult_ub;    // upper bounds
  Vec mult_lb;    // lower bounds
  /// Indices of active general rows at the solution.
  std::vector<int> active_rows;
};

/// Primal active-set solver working on the Cholesky factor of H.
///
/// Starts from the box-clamped unconstrained minimizer; if general rows are
/// violated there, a single-slack phase-1 problem produces a feasible start or
/// an infeasibility certificate. Constraint ties are broken toward the lowest
/// row index, so the solve is deterministic.
QpSolution solve_qp(const QpProblem& problem, double tol = 1e-8);

/// Max of stationarity, primal feasibility violation, complementarity (and
/// multiplier nonnegativity) for a candidate point. The verification half of
/// the optimality certificate.
double kkt_residual(const QpProblem& problem, const Vec& z, const Vec& mult_ineq,
                    const Vec& mult_ub, const Vec& mult_lb);

inline double kkt_residual(const QpProblem& problem, const QpSolution& sol) {
  return kkt_residual(problem, sol.z, sol.mult_ineq, sol.mult_ub, sol.mult_lb);
}

}  // namespace gridmpc
