#include "gridmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gridmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// All constraints as rows a'z <= b: general rows first, then finite upper
// bounds, then finite lower bounds (as -z <= -lb). Order fixes the
// lowest-index tie-break.
struct RowSet {
  Mat a;
  Vec b;
  int n_general = 0;
  std::vector<int> ub_var;  // variable index per ub row
  std::vector<int> lb_var;
};

RowSet build_rows(const QpProblem& p) {
  const int n = p.num_vars();
  const int m = p.num_ineq();
  std::vector<int> ubv, lbv;
  for (int i = 0; i < n; ++i)
    if (p.ub(i) < kInf) ubv.push_back(i);
  for (int i = 0; i < n; ++i)
    if (p.lb(i) > -kInf) lbv.push_back(i);

  RowSet rs;
  rs.n_general = m;
  rs.ub_var = ubv;
  rs.lb_var = lbv;
  const int total = m + static_cast<int>(ubv.size() + lbv.size());
  rs.a = Mat::Zero(total, n);
  rs.b = Vec::Zero(total);
  if (m > 0) {
    rs.a.topRows(m) = p.A;
    rs.b.head(m) = p.b;
  }
  int r = m;
  for (int i : ubv) {
    rs.a(r, i) = 1.0;
    rs.b(r) = p.ub(i);
    ++r;
  }
  for (int i : lbv) {
    rs.a(r, i) = -1.0;
    rs.b(r) = -p.lb(i);
    ++r;
  }
  return rs;
}

struct AsResult {
  Vec z;
  Vec mult;  // per row, >= 0 at optimum
  QpStatus status = QpStatus::kMaxIterations;
  int iterations = 0;
};

// Equality-constrained subproblem on the working set:
//   H z + c + Aw' lambda = 0,  Aw z = bw
// solved through the cached Cholesky factor of H and the Schur complement
// Aw H^-1 Aw'. Returns false when the working set is rank deficient.
bool solve_eqp(const Eigen::LLT<Mat>& hllt, const Vec& c, const Mat& rows,
               const Vec& rhs, const std::vector<int>& work, Vec* z, Vec* lambda) {
  const Vec hinv_c = hllt.solve(c);
  if (work.empty()) {
    *z = -hinv_c;
    lambda->resize(0);
    return true;
  }
  const int w = static_cast<int>(work.size());
  Mat aw(w, rows.cols());
  Vec bw(w);
  for (int i = 0; i < w; ++i) {
    aw.row(i) = rows.row(work[i]);
    bw(i) = rhs(work[i]);
  }
  const Mat t = hllt.solve(aw.transpose());
  Mat schur = aw * t;
  Eigen::LLT<Mat> sllt(schur);
  if (sllt.info() != Eigen::Success) return false;
  *lambda = sllt.solve(-(bw + aw * hinv_c));
  *z = -hinv_c - t * (*lambda);
  return true;
}

// Primal active-set iteration from a feasible z0.
AsResult active_set(const Eigen::LLT<Mat>& hllt, const Vec& c, const Mat& rows,
                    const Vec& rhs, Vec z0, double tol, int max_iter) {
  const int n_rows = static_cast<int>(rhs.size());
  AsResult out;
  Vec z = std::move(z0);

  std::vector<int> work;
  std::vector<char> in_work(n_rows, 0);
  // Seed with rows active at the start, skipping rank-deficient additions.
  for (int r = 0; r < n_rows; ++r) {
    if (rows.row(r) * z - rhs(r) > -tol * (1.0 + std::abs(rhs(r)))) {
      work.push_back(r);
      Vec ztmp, ltmp;
      if (solve_eqp(hllt, c, rows, rhs, work, &ztmp, &ltmp)) {
        in_work[r] = 1;
      } else {
        work.pop_back();
      }
    }
  }

  Vec z_eq, lambda;
  int stall = 0;
  for (int iter = 1; iter <= max_iter; ++iter) {
    out.iterations = iter;
    if (!solve_eqp(hllt, c, rows, rhs, work, &z_eq, &lambda)) {
      // Should not happen: additions are rank-checked. Drop the newest row.
      in_work[work.back()] = 0;
      work.pop_back();
      continue;
    }
    const Vec p = z_eq - z;
    const double step_norm = p.size() ? p.cwiseAbs().maxCoeff() : 0.0;

    if (step_norm <= 1e-12 * (1.0 + z.cwiseAbs().maxCoeff())) {
      // Converged on this working set; check optimality.
      int drop = -1;
      double most_negative = -tol;
      for (int i = 0; i < static_cast<int>(work.size()); ++i) {
        if (lambda(i) < most_negative) {
          most_negative = lambda(i);
          drop = i;
        }
      }
      if (drop < 0) {
        out.z = z;
        out.mult = Vec::Zero(n_rows);
        for (int i = 0; i < static_cast<int>(work.size()); ++i)
          out.mult(work[i]) = std::max(0.0, lambda(i));
        out.status = QpStatus::kOptimal;
        return out;
      }
      in_work[work[drop]] = 0;
      work.erase(work.begin() + drop);
      if (++stall > 2 * n_rows + 16) break;  // degeneracy guard
      continue;
    }

    // Step toward the subproblem minimizer, blocked by the nearest
    // inactive row. Ascending scan + strict improvement = lowest-index ties.
    double alpha = 1.0;
    int blocker = -1;
    for (int r = 0; r < n_rows; ++r) {
      if (in_work[r]) continue;
      const double d = rows.row(r) * p;
      if (d <= 1e-13) continue;
      const double gap = rhs(r) - rows.row(r) * z;
      const double a_r = std::max(0.0, gap) / d;
      if (a_r < alpha - 1e-13) {
        alpha = a_r;
        blocker = r;
      }
    }
    z += alpha * p;
    if (blocker >= 0) {
      work.push_back(blocker);
      Vec ztmp, ltmp;
      if (solve_eqp(hllt, c, rows, rhs, work, &ztmp, &ltmp)) {
        in_work[blocker] = 1;
        stall = 0;
      } else {
        work.pop_back();
        if (++stall > 2 * n_rows + 16) break;
      }
    } else {
      stall = 0;
    }
  }
  out.z = z;
  out.mult = Vec::Zero(n_rows);
  out.status = QpStatus::kMaxIterations;
  return out;
}

}  // namespace

void QpProblem::validate() const {
  const int n = num_vars();
  if (H.rows() != n || H.cols() != n)
    throw ContractError("QpProblem: H must be n x n");
  if (!H.isApprox(H.transpose(), 1e-10))
    throw ContractError("QpProblem: H must be symmetric");
  if (lb.size() != n || ub.size() != n)
    throw ContractError("QpProblem: box bounds must have length n");
  if (A.rows() != b.size() || (A.rows() > 0 && A.cols() != n))
    throw ContractError("QpProblem: inconsistent inequality dimensions");
  for (int i = 0; i < n; ++i)
    if (lb(i) > ub(i)) throw ContractError("QpProblem: lb > ub");
  Eigen::LLT<Mat> llt(H);
  if (llt.info() != Eigen::Success)
    throw ContractError("QpProblem: H is not positive definite");
}

QpSolution solve_qp(const QpProblem& problem, double tol) {
  problem.validate();
  const int n = problem.num_vars();
  const int m = problem.num_ineq();
  const Eigen::LLT<Mat> hllt(problem.H);
  const RowSet rs = build_rows(problem);
  const int max_iter = std::max(200, 12 * (n + static_cast<int>(rs.b.size())));

  // Box-feasible deterministic start: clamped unconstrained minimizer.
  Vec z0 = hllt.solve(-problem.c);
  for (int i = 0; i < n; ++i)
    z0(i) = std::min(problem.ub(i), std::max(problem.lb(i), z0(i)));

  double viol = 0.0;
  Vec viol_mask = Vec::Zero(m);
  for (int r = 0; r < m; ++r) {
    const double v = problem.A.row(r) * z0 - problem.b(r);
    if (v > tol * (1.0 + std::abs(problem.b(r)))) {
      viol = std::max(viol, v);
      viol_mask(r) = 1.0;
    }
  }

  AsResult r;
  RowSet rs_used = rs;
  bool augmented = false;
  if (viol > 0.0) {
    // Start point violates general rows: solve the exact-penalty problem in
    // (z, s) with one slack relaxing the violated rows. Once the linear
    // penalty exceeds the true multipliers the optimum has s = 0 exactly and
    // the z-part together with the row multipliers solves the original QP.
    const double scale =
        1.0 + problem.c.cwiseAbs().maxCoeff() + problem.H.cwiseAbs().maxCoeff();
    augmented = true;
    double prev_s = kInf;
    int total_iters = 0;
    for (double penalty : {1e4 * scale, 1e6 * scale, 1e8 * scale}) {
      QpProblem aug;
      aug.H = Mat::Zero(n + 1, n + 1);
      aug.H.topLeftCorner(n, n) = problem.H;
      aug.H(n, n) = scale;
      aug.c = Vec::Zero(n + 1);
      aug.c.head(n) = problem.c;
      aug.c(n) = penalty;
      aug.A = Mat::Zero(m, n + 1);
      aug.A.leftCols(n) = problem.A;
      aug.A.col(n) = -viol_mask;
      aug.b = problem.b;
      aug.lb = Vec::Constant(n + 1, -kInf);
      aug.lb.head(n) = problem.lb;
      aug.lb(n) = 0.0;
      aug.ub = Vec::Constant(n + 1, kInf);
      aug.ub.head(n) = problem.ub;

      const Eigen::LLT<Mat> hllt1(aug.H);
      rs_used = build_rows(aug);
      Vec start = Vec::Zero(n + 1);
      start.head(n) = z0;
      start(n) = viol * (1.0 + 1e-9) + tol;
      r = active_set(hllt1, aug.c, rs_used.a, rs_used.b, start, tol,
                     std::max(200, 12 * (n + 1 + static_cast<int>(rs_used.b.size()))));
      total_iters += r.iterations;
      const double s_star = r.z(n);
      if (r.status == QpStatus::kOptimal && s_star <= 1e-9 * (1.0 + viol)) break;
      if (s_star >= 0.99 * prev_s) break;  // penalty growth is not helping
      prev_s = s_star;
    }
    r.iterations = total_iters;
    if (r.status != QpStatus::kOptimal || r.z(n) > 1e-9 * (1.0 + viol)) {
      QpSolution sol;
      sol.z = r.z.head(n);
      sol.status = QpStatus::kInfeasible;
      sol.iterations = r.iterations;
      sol.mult_ineq = Vec::Zero(m);
      sol.mult_ub = Vec::Zero(n);
      sol.mult_lb = Vec::Zero(n);
      sol.objective = 0.5 * sol.z.dot(problem.H * sol.z) + problem.c.dot(sol.z);
      return sol;
    }
  } else {
    r = active_set(hllt, problem.c, rs.a, rs.b, z0, tol, max_iter);
  }

  QpSolution sol;
  sol.z = augmented ? Vec(r.z.head(n)) : r.z;
  sol.status = r.status;
  sol.iterations = r.iterations;
  sol.objective = 0.5 * sol.z.dot(problem.H * sol.z) + problem.c.dot(sol.z);
  sol.mult_ineq = Vec::Zero(m);
  sol.mult_ub = Vec::Zero(n);
  sol.mult_lb = Vec::Zero(n);
  if (m > 0) sol.mult_ineq = r.mult.head(m);
  int row = m;
  for (int i : rs_used.ub_var) {
    if (i < n) sol.mult_ub(i) = r.mult(row);
    ++row;
  }
  for (int i : rs_used.lb_var) {
    if (i < n) sol.mult_lb(i) = r.mult(row);
    ++row;
  }
  for (int rr = 0; rr < m; ++rr) {
    if (problem.A.row(rr) * sol.z - problem.b(rr) >
        -1e-7 * (1.0 + std::abs(problem.b(rr))))
      sol.active_rows.push_back(rr);
  }
  return sol;
}

double kkt_residual(const QpProblem& problem, const Vec& z, const Vec& mult_ineq,
                    const Vec& mult_ub, const Vec& mult_lb) {
  const int n = problem.num_vars();
  const int m = problem.num_ineq();
  if (z.size() != n || mult_ub.size() != n || mult_lb.size() != n ||
      mult_ineq.size() != m)
    throw ContractError("kkt_residual: dimension mismatch");

  Vec grad = problem.H * z + problem.c + mult_ub - mult_lb;
  if (m > 0) grad += problem.A.transpose() * mult_ineq;
  double res = grad.cwiseAbs().maxCoeff();

  for (int r = 0; r < m; ++r) {
    const double g = problem.A.row(r) * z - problem.b(r);
    res = std::max(res, g);                        // primal
    res = std::max(res, std::abs(mult_ineq(r) * g));  // complementarity
    res = std::max(res, -mult_ineq(r));            // dual sign
  }
  for (int i = 0; i < n; ++i) {
    if (problem.ub(i) < kInf) {
      const double g = z(i) - problem.ub(i);
      res = std::max({res, g, std::abs(mult_ub(i) * g), -mult_ub(i)});
    }
    if (problem.lb(i) > -kInf) {
      const double g = problem.lb(i) - z(i);
      res = std::max({res, g, std::abs(mult_lb(i) * g), -mult_lb(i)});
    }
  }
  return res;
}

}  // namespace gridmpc
