#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kmpc/box_minimize.hpp"
#include "kmpc/errors.hpp"
#include "kmpc/krom.hpp"
#include "kmpc/plant.hpp"

namespace kmpc {

/// Target for the tracked observation entries at time t (length = tracked.size()).
using ReferenceFn = std::function<Eigen::VectorXd(double t)>;

struct ContinuousSolverOptions {
  BoxMinimizeOptions box{};
  /// Extra random start (in addition to u_init and the anchor constants).
  bool random_start = true;
  std::uint64_t seed = 0x5eed;
  /// Relative step for finite-difference gradients (plant-as-predictor only).
  double fd_step = 1e-5;
};

struct MpcConfig {
  int horizon = 3;
  double sample_time = 0.5;
  ReferenceFn reference;
  std::vector<std::size_t> tracked;
  /// Box for continuous controls; defaults to the surrogate's anchor range.
  std::optional<std::pair<double, double>> control_bounds;
  double enumeration_budget = 1e6;
  ContinuousSolverOptions continuous{};

  void validate(std::size_t obs_dim) const {
    detail::require(horizon >= 1, "mpc config: horizon must be >= 1");
    detail::require(sample_time > 0.0, "mpc config: sample time must be positive");
    detail::require(static_cast<bool>(reference), "mpc config: no reference");
    detail::require(!tracked.empty(), "mpc config: no tracked entries");
    for (auto i : tracked) detail::require(i < obs_dim, "mpc config: tracked index out of range");
  }
};

struct SolverStats {
  long evaluations = 0;
  int iterations = 0;
  int starts = 0;
  bool iteration_cap_hit = false;
  double projected_gradient_norm = 0.0;
};

struct MpcSolution {
  /// Control indices into the bank (switched solvers only).
  std::vector<std::size_t> indices;
  std::vector<double> controls;
  double predicted_cost = 0.0;
  std::vector<Eigen::VectorXd> predicted_observations;
  SolverStats stats{};
};

/// Squared Euclidean error of the tracked entries.
inline double stage_cost(const Eigen::Ref<const Eigen::VectorXd>& z,
                         const Eigen::Ref<const Eigen::VectorXd>& z_opt,
                         std::span<const std::size_t> tracked) {
  if (static_cast<std::size_t>(z_opt.size()) != tracked.size()) {
    throw ValidationError("stage_cost: target has length " + std::to_string(z_opt.size()) + ", " +
                          std::to_string(tracked.size()) + " entries are tracked");
  }
  double c = 0.0;
  for (std::size_t i = 0; i < tracked.size(); ++i) {
    if (tracked[i] >= static_cast<std::size_t>(z.size())) {
      throw ValidationError("stage_cost: tracked index out of range");
    }
    const double e = z(static_cast<Eigen::Index>(tracked[i])) - z_opt(static_cast<Eigen::Index>(i));
    c += e * e;
  }
  return c;
}

/// Targets r_1..r_p at t_s + h, ..., t_s + p h. Stage j compares the j-th predicted observation with r_j.
inline std::vector<Eigen::VectorXd> horizon_targets(const MpcConfig& cfg, double t_s) {
  std::vector<Eigen::VectorXd> r;
  for (int j = 1; j <= cfg.horizon; ++j) {
    r.push_back(cfg.reference(t_s + static_cast<double>(j) * cfg.sample_time));
    detail::require(static_cast<std::size_t>(r.back().size()) == cfg.tracked.size(),
                    "reference returned a target of wrong length");
  }
  return r;
}

/// Sum of stage costs of predicted observations against the horizon targets.
inline double horizon_cost(const std::vector<Eigen::VectorXd>& predicted, const MpcConfig& cfg,
                           double t_s) {
  const auto r = horizon_targets(cfg, t_s);
  detail::require(predicted.size() == r.size(), "horizon_cost: prediction length differs from horizon");
  double c = 0.0;
  for (std::size_t j = 0; j < r.size(); ++j) c += stage_cost(predicted[j], r[j], cfg.tracked);
  return c;
}

namespace detail {

inline double checked_sequence_count(std::size_t n_c, int p, double budget) {
  const double count = std::pow(static_cast<double>(n_c), p);
  if (count > budget) {
    throw ValidationError("solve_switched: " + std::to_string(n_c) + "^" + std::to_string(p) + " = " +
                          std::to_string(static_cast<long long>(count)) +
                          " sequences exceed the enumeration budget " +
                          std::to_string(static_cast<long long>(budget)));
  }
  return count;
}

}  // namespace detail

/**
 * Exhaustive search over all n_c^p index sequences with a generic predictor.
 *
 * `advance(state, j)` applies constant input j for one sample time and
 * `observe(state)` returns the observation. Prefixes are shared (depth-first),
 * sequences are visited in lexicographic order and only strict improvements
 * replace the incumbent, so ties resolve to the lexicographically smallest
 * sequence.
 */
template <class State, class Advance, class Observe>
MpcSolution enumerate_switched(const State& start, std::size_t n_c, const Advance& advance,
                               const Observe& observe, const MpcConfig& cfg, double t_s) {
  detail::require(n_c >= 1, "enumerate_switched: no controls");
  detail::require(cfg.horizon >= 1, "enumerate_switched: horizon must be >= 1");
  detail::checked_sequence_count(n_c, cfg.horizon, cfg.enumeration_budget);
  const auto targets = horizon_targets(cfg, t_s);
  const auto p = static_cast<std::size_t>(cfg.horizon);

  std::vector<State> states(p + 1);
  std::vector<Eigen::VectorXd> obs(p);
  std::vector<double> prefix(p + 1, 0.0);
  std::vector<std::size_t> seq(p, 0);
  states[0] = start;

  MpcSolution best;
  best.predicted_cost = std::numeric_limits<double>::infinity();
  long evaluations = 0;

  // depth d = number of fixed entries whose states/prefix costs are valid
  std::size_t d = 0;
  while (true) {
    while (d < p) {
      states[d + 1] = advance(states[d], seq[d]);
      obs[d] = observe(states[d + 1]);
      prefix[d + 1] = prefix[d] + stage_cost(obs[d], targets[d], cfg.tracked);
      ++evaluations;
      ++d;
    }
    if (!std::isfinite(prefix[p])) throw NumericalError("solve_switched: non-finite predicted cost");
    if (prefix[p] < best.predicted_cost) {
      best.predicted_cost = prefix[p];
      best.indices = seq;
      best.predicted_observations = obs;
    }
    // next sequence in lexicographic order
    std::size_t pos = p;
    while (pos > 0 && seq[pos - 1] + 1 == n_c) --pos;
    if (pos == 0) break;
    ++seq[pos - 1];
    for (std::size_t k = pos; k < p; ++k) seq[k] = 0;
    d = pos - 1;
  }
  best.stats.evaluations = evaluations;
  best.stats.starts = 1;
  return best;
}

/// Switched K-ROM MPC: enumerate every sequence over the bank.
inline MpcSolution solve_switched(const SwitchedBank& bank, const Eigen::Ref<const Eigen::VectorXd>& z_s,
                                  const MpcConfig& cfg, double t_s) {
  cfg.validate(bank.dict().obs_dim());
  detail::require(std::abs(cfg.sample_time - bank.lag_time_h()) <= 1e-12 * bank.lag_time_h(),
                  "solve_switched: sample time differs from the bank lag time");
  const Eigen::VectorXd psi0 = bank.dict().lift(z_s);
  const auto advance = [&](const Eigen::VectorXd& psi, std::size_t j) -> Eigen::VectorXd {
    return bank[j].U_transpose * psi;
  };
  const auto observe = [&](const Eigen::VectorXd& psi) { return bank.dict().project(psi); };
  MpcSolution sol = enumerate_switched(psi0, bank.size(), advance, observe, cfg, t_s);
  const auto values = bank.control_values();
  for (auto j : sol.indices) sol.controls.push_back(values[j]);
  return sol;
}

/// Switched MPC using the plant itself as predictor (the full-model baseline).
template <Plant P>
MpcSolution solve_switched_plant(const P& plant, std::span<const double> control_values,
                                 const Eigen::VectorXd& y_s, const MpcConfig& cfg, double t_s) {
  cfg.validate(plant.obs_dim());
  const auto advance = [&](const Eigen::VectorXd& y, std::size_t j) -> Eigen::VectorXd {
    return plant.step(y, control_values[j], cfg.sample_time);
  };
  const auto observe = [&](const Eigen::VectorXd& y) { return plant.observe(y); };
  MpcSolution sol = enumerate_switched(y_s, control_values.size(), advance, observe, cfg, t_s);
  for (auto j : sol.indices) sol.controls.push_back(control_values[j]);
  return sol;
}

// ---------------------------------------------------------------------------
// Continuous (bilinear) MPC
// ---------------------------------------------------------------------------

/**
 * Cost of a control sequence under a (localized) bilinear K-ROM and its
 * gradient by backward recursion through psi_j = (A_j + alpha_j B_j) psi_{j-1}.
 *
 * At interior anchors the right segment is used (one-sided derivative).
 */
inline double bilinear_rollout_cost(const LocalizedBilinear& model, const Eigen::VectorXd& psi0,
                                    const std::vector<Eigen::VectorXd>& targets,
                                    std::span<const std::size_t> tracked, const Eigen::VectorXd& u,
                                    Eigen::VectorXd* grad,
                                    std::vector<Eigen::VectorXd>* predicted = nullptr) {
  const auto p = static_cast<std::size_t>(u.size());
  const Dictionary& dict = model.dict();
  std::vector<Eigen::VectorXd> psi(p + 1);
  std::vector<LocalizedBilinear::Selection> sel(p);
  psi[0] = psi0;
  double cost = 0.0;
  if (predicted) predicted->clear();
  for (std::size_t j = 0; j < p; ++j) {
    sel[j] = model.select(u(static_cast<Eigen::Index>(j)));
    psi[j + 1] = model.segment(sel[j].index).step_alpha(psi[j], sel[j].alpha);
    const Eigen::VectorXd z = dict.project(psi[j + 1]);
    cost += stage_cost(z, targets[j], tracked);
    if (predicted) predicted->push_back(z);
  }
  if (grad) {
    grad->setZero(static_cast<Eigen::Index>(p));
    Eigen::VectorXd lam = Eigen::VectorXd::Zero(psi0.size());
    for (std::size_t j = p; j-- > 0;) {
      // d stage_j / d psi_{j+1}: only degree-1 coordinates (indices 1..q) enter
      for (std::size_t i = 0; i < tracked.size(); ++i) {
        const auto idx = static_cast<Eigen::Index>(tracked[i]) + 1;
        lam(idx) += 2.0 * (psi[j + 1](idx) - targets[j](static_cast<Eigen::Index>(i)));
      }
      const BilinearModel& seg = model.segment(sel[j].index);
      (*grad)(static_cast<Eigen::Index>(j)) =
          lam.dot(seg.B() * psi[j]) / (seg.u_hi() - seg.u_lo());
      lam = seg.operator_at(sel[j].alpha).transpose() * lam;
    }
  }
  return cost;
}

namespace detail {

/// Multi-start box minimization; returns the best result (never worse than u_init).
inline MpcSolution multistart_box(const ObjectiveWithGradient& fg, const Eigen::VectorXd& u_init,
                                  double lo, double hi, const std::vector<double>& anchor_constants,
                                  const ContinuousSolverOptions& opt, double t_s) {
  const auto p = u_init.size();
  const Eigen::VectorXd lov = Eigen::VectorXd::Constant(p, lo);
  const Eigen::VectorXd hiv = Eigen::VectorXd::Constant(p, hi);
  std::vector<Eigen::VectorXd> starts{u_init};
  for (double c : anchor_constants) starts.push_back(Eigen::VectorXd::Constant(p, std::clamp(c, lo, hi)));
  if (opt.random_start) {
    std::mt19937_64 rng(opt.seed ^ std::hash<double>{}(t_s));
    std::uniform_real_distribution<double> dist(lo, hi);
    Eigen::VectorXd r(p);
    for (Eigen::Index i = 0; i < p; ++i) r(i) = dist(rng);
    starts.push_back(r);
  }
  MpcSolution best;
  best.predicted_cost = std::numeric_limits<double>::infinity();
  BoxMinimizeResult best_run;
  for (const auto& s : starts) {
    BoxMinimizeResult run = minimize_box(fg, s, lov, hiv, opt.box);
    best.stats.evaluations += run.evaluations;
    best.stats.iterations += run.iterations;
    ++best.stats.starts;
    if (run.f < best.predicted_cost) {
      best.predicted_cost = run.f;
      best_run = run;
    }
  }
  best.controls.assign(best_run.x.data(), best_run.x.data() + p);
  best.stats.iteration_cap_hit = !best_run.converged;
  best.stats.projected_gradient_norm = best_run.projected_gradient_norm;
  return best;
}

inline std::vector<double> three_anchor_constants(const std::vector<double>& anchors) {
  if (anchors.size() <= 3) return anchors;
  return {anchors.front(), anchors[anchors.size() / 2], anchors.back()};
}

}  // namespace detail

/**
 * Box-constrained continuous MPC over a (localized) bilinear K-ROM.
 *
 * Starts: u_init, constant sequences at (up to) three anchors, one random
 * point. Each start runs projected-gradient descent with adjoint gradients.
 */
inline MpcSolution solve_continuous(const LocalizedBilinear& model,
                                    const Eigen::Ref<const Eigen::VectorXd>& z_s,
                                    const MpcConfig& cfg, double t_s, const Eigen::VectorXd& u_init) {
  cfg.validate(model.dict().obs_dim());
  detail::require(std::abs(cfg.sample_time - model.lag_time_h()) <= 1e-12 * model.lag_time_h(),
                  "solve_continuous: sample time differs from the model lag time");
  detail::require(u_init.size() == cfg.horizon, "solve_continuous: u_init length differs from horizon");
  const auto [lo, hi] = cfg.control_bounds.value_or(std::make_pair(model.u_min(), model.u_max()));
  detail::require(lo < hi, "solve_continuous: empty control box");
  detail::require(lo >= model.u_min() && hi <= model.u_max(),
                  "solve_continuous: control box extends beyond the surrogate's anchor range");
  for (Eigen::Index i = 0; i < u_init.size(); ++i) {
    if (!(u_init(i) >= lo && u_init(i) <= hi)) {
      throw ValidationError("solve_continuous: u_init out of bounds");
    }
  }
  const Eigen::VectorXd psi0 = model.dict().lift(z_s);
  const auto targets = horizon_targets(cfg, t_s);
  const ObjectiveWithGradient fg = [&](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    const double c = bilinear_rollout_cost(model, psi0, targets, cfg.tracked, u, &g);
    if (!std::isfinite(c)) throw NumericalError("solve_continuous: non-finite cost during rollout");
    return c;
  };
  MpcSolution sol = detail::multistart_box(fg, u_init, lo, hi,
                                           detail::three_anchor_constants(model.anchors()),
                                           cfg.continuous, t_s);
  const Eigen::VectorXd u = Eigen::Map<const Eigen::VectorXd>(sol.controls.data(), cfg.horizon);
  sol.predicted_cost = bilinear_rollout_cost(model, psi0, targets, cfg.tracked, u, nullptr,
                                             &sol.predicted_observations);
  return sol;
}

inline MpcSolution solve_continuous(const BilinearModel& model,
                                    const Eigen::Ref<const Eigen::VectorXd>& z_s,
                                    const MpcConfig& cfg, double t_s, const Eigen::VectorXd& u_init) {
  return solve_continuous(LocalizedBilinear(model), z_s, cfg, t_s, u_init);
}

/// Continuous MPC with the plant as predictor; gradients by finite differences.
template <Plant P>
MpcSolution solve_continuous_plant(const P& plant, const Eigen::VectorXd& y_s, double lo, double hi,
                                   const std::vector<double>& anchors, const MpcConfig& cfg,
                                   double t_s, const Eigen::VectorXd& u_init) {
  cfg.validate(plant.obs_dim());
  detail::require(lo < hi, "solve_continuous_plant: empty control box");
  const auto targets = horizon_targets(cfg, t_s);
  const auto cost = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd y = y_s;
    double c = 0.0;
    for (Eigen::Index j = 0; j < u.size(); ++j) {
      y = plant.step(y, u(j), cfg.sample_time);
      c += stage_cost(plant.observe(y), targets[static_cast<std::size_t>(j)], cfg.tracked);
    }
    return c;
  };
  const double delta = cfg.continuous.fd_step * (hi - lo);
  const ObjectiveWithGradient fg = [&](const Eigen::VectorXd& u, Eigen::VectorXd& g) {
    const double c = cost(u);
    g.resize(u.size());
    for (Eigen::Index j = 0; j < u.size(); ++j) {
      Eigen::VectorXd up = u, um = u;
      up(j) = std::min(hi, u(j) + delta);
      um(j) = std::max(lo, u(j) - delta);
      g(j) = (cost(up) - cost(um)) / (up(j) - um(j));
    }
    return c;
  };
  MpcSolution sol = detail::multistart_box(fg, u_init, lo, hi, detail::three_anchor_constants(anchors),
                                           cfg.continuous, t_s);
  Eigen::VectorXd y = y_s;
  for (double u : sol.controls) {
    y = plant.step(y, u, cfg.sample_time);
    sol.predicted_observations.push_back(plant.observe(y));
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Windowed running cost
// ---------------------------------------------------------------------------

/// Time series of stage costs (squared tracked error) at increasing times.
struct CostTrace {
  std::vector<double> times;
  std::vector<double> costs;
};

/**
 * Trapezoidal integral of the squared tracked error over [t - window, t],
 * using the piecewise-linear interpolant of the recorded samples.
 */
inline double running_cost_window(const CostTrace& trace, double t, double window) {
  detail::require(window >= 0.0, "running_cost_window: negative window");
  detail::require(trace.times.size() == trace.costs.size(), "running_cost_window: malformed trace");
  if (window == 0.0) return 0.0;
  detail::require(!trace.times.empty(), "running_cost_window: empty trace");
  const double a = t - window;
  const double tol = 1e-9 * std::max(1.0, std::abs(t));
  if (a < trace.times.front() - tol) {
    throw ValidationError("running_cost_window: window start precedes recorded data");
  }
  detail::require(t <= trace.times.back() + tol, "running_cost_window: window end beyond recorded data");
  const auto value_at = [&](std::size_t k, double s) {
    const double t0 = trace.times[k], t1 = trace.times[k + 1];
    const double w = (s - t0) / (t1 - t0);
    return (1.0 - w) * trace.costs[k] + w * trace.costs[k + 1];
  };
  double integral = 0.0;
  for (std::size_t k = 0; k + 1 < trace.times.size(); ++k) {
    const double lo = std::max(a, trace.times[k]);
    const double hi = std::min(t, trace.times[k + 1]);
    if (hi <= lo) continue;
    integral += 0.5 * (hi - lo) * (value_at(k, lo) + value_at(k, hi));
  }
  return integral;
}

}  // namespace kmpc
