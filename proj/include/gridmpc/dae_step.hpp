#pragma once

#include "gridmpc/common.hpp"

namespace gridmpc {

struct StepOutcome {
  Vec x;
  Vec y;
  int newton_iterations = 0;
  bool converged = false;
};

/// One implicit-trapezoidal step of a semi-explicit DAE
///   x' = f(x, y),  0 = g(x, y)
/// solved by full Newton on the stacked system
///   x1 - x0 - h/2 (f0 + f1) = 0,  g1 = 0.
///
/// Sys must provide n_states(), n_algebraic(), residuals(x, y, f, g) and
/// jacobians(x, y, f_x, f_y, g_x, g_y). A DomainError thrown by residuals is
/// treated as an invalid trial point and backtracked over.
template <class Sys>
StepOutcome trapezoidal_step(const Sys& sys, const Vec& x0, const Vec& y0, double h,
                             double tol, int max_iter) {
  const int nx = sys.n_states();
  const int ny = sys.n_algebraic();
  Vec f0(nx), g0(ny);
  sys.residuals(x0, y0, f0, g0);

  StepOutcome out;
  out.x = x0;
  out.y = y0;

  Vec f(nx), g(ny);
  Mat f_x, f_y, g_x, g_y;
  Mat jac(nx + ny, nx + ny);
  Vec rhs(nx + ny);

  auto residual_norm = [&](const Vec& x, const Vec& y, Vec* r) -> double {
    sys.residuals(x, y, f, g);
    Vec top = x - x0 - 0.5 * h * (f0 + f);
    if (r) {
      r->head(nx) = top;
      r->tail(ny) = g;
    }
    const double a = nx ? top.cwiseAbs().maxCoeff() : 0.0;
    const double b = ny ? g.cwiseAbs().maxCoeff() : 0.0;
    return std::max(a, b);
  };

  double res = residual_norm(out.x, out.y, &rhs);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (res < tol) {
      out.converged = true;
      out.newton_iterations = iter;
      return out;
    }
    sys.jacobians(out.x, out.y, f_x, f_y, g_x, g_y);
    jac.topLeftCorner(nx, nx) = Mat::Identity(nx, nx) - 0.5 * h * f_x;
    jac.topRightCorner(nx, ny) = -0.5 * h * f_y;
    jac.bottomLeftCorner(ny, nx) = g_x;
    jac.bottomRightCorner(ny, ny) = g_y;
    const Vec d = jac.partialPivLu().solve(-rhs);
    if (!d.allFinite()) break;

    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 12; ++ls) {
      const Vec xt = out.x + alpha * d.head(nx);
      const Vec yt = out.y + alpha * d.tail(ny);
      double rt;
      try {
        rt = residual_norm(xt, yt, nullptr);
      } catch (const DomainError&) {
        alpha *= 0.5;
        continue;
      }
      if (rt < res * (1.0 - 1e-4 * alpha) || rt < tol) {
        out.x = xt;
        out.y = yt;
        res = residual_norm(out.x, out.y, &rhs);
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    out.newton_iterations = iter + 1;
  }
  out.converged = res < tol;
  return out;
}

/// Newton re-solve of the algebraic constraints with the states frozen.
template <class Sys>
bool solve_algebraic_system(const Sys& sys, const Vec& x, Vec& y, double tol,
                            int max_iter) {
  const int ny = sys.n_algebraic();
  Vec f(sys.n_states()), g(ny);
  Mat f_x, f_y, g_x, g_y;
  auto norm_of = [&](const Vec& yt) -> double {
    sys.residuals(x, yt, f, g);
    return ny ? g.cwiseAbs().maxCoeff() : 0.0;
  };
  double res = norm_of(y);
  for (int iter = 0; iter < max_iter; ++iter) {
    if (res < tol) return true;
    sys.jacobians(x, y, f_x, f_y, g_x, g_y);
    const Vec d = g_y.partialPivLu().solve(-g);
    if (!d.allFinite()) return false;
    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 14; ++ls) {
      const Vec yt = y + alpha * d;
      double rt;
      try {
        rt = norm_of(yt);
      } catch (const DomainError&) {
        alpha *= 0.5;
        continue;
      }
      if (rt < res * (1.0 - 1e-4 * alpha) || rt < tol) {
        y = yt;
        res = rt;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) return false;
  }
  return res < tol;
}

}  // namespace gridmpc
