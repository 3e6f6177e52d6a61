#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>

#include "kmpc/errors.hpp"

namespace kmpc {

struct BoxMinimizeOptions {
  int max_iterations = 200;
  /// Stop when ||P(x - g) - x||_inf <= tolerance * (1 + |f|).
  double tolerance = 1e-6;
  double armijo = 1e-4;
  int max_backtracks = 40;
};

struct BoxMinimizeResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double projected_gradient_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Value and gradient at x. Writes the gradient into `grad`.
using ObjectiveWithGradient =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

namespace detail {

inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace detail

/**
 * Spectral projected gradient with monotone Armijo backtracking.
 *
 * Every accepted iterate stays inside [lo, hi] and lowers f, so the result is
 * never worse than the (projected) start.
 */
inline BoxMinimizeResult minimize_box(const ObjectiveWithGradient& fg, const Eigen::VectorXd& x0,
                                      const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                                      const BoxMinimizeOptions& opt = {}) {
  detail::require(x0.size() == lo.size() && x0.size() == hi.size(), "minimize_box: size mismatch");
  detail::require((lo.array() <= hi.array()).all(), "minimize_box: lo > hi");
  BoxMinimizeResult r;
  r.x = detail::project_box(x0, lo, hi);
  Eigen::VectorXd g(x0.size());
  r.f = fg(r.x, g);
  ++r.evaluations;
  if (!std::isfinite(r.f) || !g.allFinite()) throw NumericalError("minimize_box: non-finite objective at start");

  const auto pg_norm = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& grad) {
    return (detail::project_box(x - grad, lo, hi) - x).lpNorm<Eigen::Infinity>();
  };

  double step = 1.0;
  {
    const double gn = g.lpNorm<Eigen::Infinity>();
    if (gn > 0) step = std::clamp(1.0 / gn, 1e-12, 1e12);
  }
  r.projected_gradient_norm = pg_norm(r.x, g);
  while (r.iterations < opt.max_iterations) {
    if (r.projected_gradient_norm <= opt.tolerance * (1.0 + std::abs(r.f))) {
      r.converged = true;
      break;
    }
    ++r.iterations;
    const Eigen::VectorXd d = detail::project_box(r.x - step * g, lo, hi) - r.x;
    const double slope = g.dot(d);
    if (slope >= 0.0) {
      // Spectral step too small to move; fall back to a unit projected step.
      step = 1.0;
      continue;
    }
    double t = 1.0;
    Eigen::VectorXd x_new, g_new(x0.size());
    double f_new = 0.0;
    bool accepted = false;
    for (int b = 0; b < opt.max_backtracks; ++b) {
      x_new = detail::project_box(r.x + t * d, lo, hi);
      f_new = fg(x_new, g_new);
      ++r.evaluations;
      if (std::isfinite(f_new) && f_new <= r.f + opt.armijo * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const Eigen::VectorXd s = x_new - r.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    step = sy > 0.0 ? std::clamp(s.squaredNorm() / sy, 1e-12, 1e12) : 1e12;
    r.x = std::move(x_new);
    r.f = f_new;
    g = g_new;
    r.projected_gradient_norm = pg_norm(r.x, g);
  }
  if (!r.converged && r.projected_gradient_norm <= opt.tolerance * (1.0 + std::abs(r.f))) {
    r.converged = true;
  }
  return r;
}

}  // namespace kmpc
