#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "kmpc/edmd.hpp"
#include "kmpc/errors.hpp"
#include "kmpc/krom.hpp"
#include "kmpc/mpc.hpp"
#include "kmpc/plant.hpp"

namespace kmpc {

/// Online K-ROM adaptation for switched surrogates.
struct OnlineUpdatePolicy {
  double epsilon = 0.025;
  /// Refit interval in seconds; must be a multiple of the sample time.
  double period = 10.0;
};

struct UpdateEvent {
  double time = 0.0;
  std::vector<long> sample_counts;
};

/// One closed-loop step: state at t, the control applied on [t, t + h) and bookkeeping.
struct TraceRow {
  double t = 0.0;
  double u = 0.0;
  Eigen::VectorXd z;
  Eigen::VectorXd reference;
  double stage_cost = 0.0;
  double window_cost = 0.0;
  double solve_seconds = 0.0;
};

struct ClosedLoopResult {
  Trajectory trajectory;
  std::vector<TraceRow> rows;
  std::vector<MpcSolution> solutions;
  std::vector<UpdateEvent> updates;

  /// Sum of stage costs over all rows.
  double total_cost() const {
    double c = 0.0;
    for (const auto& r : rows) c += r.stage_cost;
    return c;
  }

  double mean_solve_seconds() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.solve_seconds;
    return s / static_cast<double>(rows.size());
  }

  CostTrace cost_trace() const {
    CostTrace ct;
    for (const auto& r : rows) {
      ct.times.push_back(r.t);
      ct.costs.push_back(r.stage_cost);
    }
    return ct;
  }
};

// ---------------------------------------------------------------------------
// Controllers. Each exposes solve(y, z, t, cfg) and after_step(z, z_next, sol, step).
// ---------------------------------------------------------------------------

class SwitchedKromController {
 public:
  explicit SwitchedKromController(SwitchedBank bank) : bank_(std::move(bank)) {}

  /// Enables online updates starting from the given accumulators (one per bank model, same order).
  void enable_online(std::vector<OnlineAccumulator> accumulators, OnlineUpdatePolicy policy) {
    detail::require(accumulators.size() == bank_.size(), "online updates: one accumulator per model required");
    for (std::size_t j = 0; j < accumulators.size(); ++j) {
      detail::require(accumulators[j].control_value() == bank_[j].control_value,
                      "online updates: accumulator order differs from bank order");
    }
    detail::require(policy.epsilon > 0.0 && policy.epsilon < 1.0, "online updates: epsilon must lie in (0, 1)");
    detail::require(policy.period > 0.0, "online updates: period must be positive");
    accumulators_ = std::move(accumulators);
    policy_ = policy;
  }

  /// Called after every refit with the updated bank and the update time.
  std::function<void(const SwitchedBank&, double)> on_update;

  const SwitchedBank& bank() const { return bank_; }
  const std::vector<OnlineAccumulator>& accumulators() const { return accumulators_; }

  MpcSolution solve(const Eigen::VectorXd&, const Eigen::VectorXd& z, double t, const MpcConfig& cfg) {
    return solve_switched(bank_, z, cfg, t);
  }

  std::optional<UpdateEvent> after_step(const Eigen::VectorXd& z, const Eigen::VectorXd& z_next,
                                        const MpcSolution& sol, long step, const MpcConfig& cfg) {
    if (!policy_) return std::nullopt;
    const std::size_t j = sol.indices.front();
    auto& acc = accumulators_[j];
    acc.update(z, z_next, weight_from_fraction(acc.sample_count(), policy_->epsilon));
    const long period_steps = detail::substep_count(policy_->period, cfg.sample_time, "online update period");
    if ((step + 1) % period_steps != 0) return std::nullopt;
    UpdateEvent ev;
    ev.time = static_cast<double>(step + 1) * cfg.sample_time;
    for (std::size_t i = 0; i < accumulators_.size(); ++i) {
      bank_.replace(i, accumulators_[i].refit());
      ev.sample_counts.push_back(accumulators_[i].sample_count());
    }
    if (on_update) on_update(bank_, ev.time);
    return ev;
  }

 private:
  SwitchedBank bank_;
  std::vector<OnlineAccumulator> accumulators_;
  std::optional<OnlineUpdatePolicy> policy_;
};

namespace detail {

/// Previous solution shifted by one step, last entry repeated; midpoint when none.
inline Eigen::VectorXd shifted_start(const std::vector<double>& prev, int horizon, double lo, double hi) {
  Eigen::VectorXd u = Eigen::VectorXd::Constant(horizon, 0.5 * (lo + hi));
  if (prev.empty()) return u;
  for (int i = 0; i < horizon; ++i) {
    const std::size_t src = std::min<std::size_t>(static_cast<std::size_t>(i) + 1, prev.size() - 1);
    u(i) = std::clamp(prev[src], lo, hi);
  }
  return u;
}

}  // namespace detail

class ContinuousKromController {
 public:
  explicit ContinuousKromController(LocalizedBilinear model) : model_(std::move(model)) {}

  const LocalizedBilinear& model() const { return model_; }

  MpcSolution solve(const Eigen::VectorXd&, const Eigen::VectorXd& z, double t, const MpcConfig& cfg) {
    const auto [lo, hi] = cfg.control_bounds.value_or(std::make_pair(model_.u_min(), model_.u_max()));
    MpcSolution sol = solve_continuous(model_, z, cfg, t, detail::shifted_start(previous_, cfg.horizon, lo, hi));
    previous_ = sol.controls;
    return sol;
  }

  std::optional<UpdateEvent> after_step(const Eigen::VectorXd&, const Eigen::VectorXd&, const MpcSolution&,
                                        long, const MpcConfig&) {
    return std::nullopt;
  }

 private:
  LocalizedBilinear model_;
  std::vector<double> previous_;
};

/// Switched MPC that predicts with the plant itself.
template <Plant P>
class PlantSwitchedController {
 public:
  PlantSwitchedController(const P& plant, std::vector<double> values) : plant_(plant), values_(std::move(values)) {
    detail::require(!values_.empty(), "plant switched controller: no control values");
  }

  MpcSolution solve(const Eigen::VectorXd& y, const Eigen::VectorXd&, double t, const MpcConfig& cfg) {
    return solve_switched_plant(plant_, values_, y, cfg, t);
  }

  std::optional<UpdateEvent> after_step(const Eigen::VectorXd&, const Eigen::VectorXd&, const MpcSolution&,
                                        long, const MpcConfig&) {
    return std::nullopt;
  }

 private:
  const P& plant_;
  std::vector<double> values_;
};

/// Continuous MPC that predicts with the plant itself (finite-difference gradients).
template <Plant P>
class PlantContinuousController {
 public:
  PlantContinuousController(const P& plant, std::vector<double> anchors) : plant_(plant), anchors_(std::move(anchors)) {
    detail::require(anchors_.size() >= 2, "plant continuous controller: need at least two anchors");
    std::sort(anchors_.begin(), anchors_.end());
  }

  MpcSolution solve(const Eigen::VectorXd& y, const Eigen::VectorXd&, double t, const MpcConfig& cfg) {
    const auto [lo, hi] = cfg.control_bounds.value_or(std::make_pair(anchors_.front(), anchors_.back()));
    MpcSolution sol = solve_continuous_plant(plant_, y, lo, hi, anchors_, cfg, t,
                                             detail::shifted_start(previous_, cfg.horizon, lo, hi));
    previous_ = sol.controls;
    return sol;
  }

  std::optional<UpdateEvent> after_step(const Eigen::VectorXd&, const Eigen::VectorXd&, const MpcSolution&,
                                        long, const MpcConfig&) {
    return std::nullopt;
  }

 private:
  const P& plant_;
  std::vector<double> anchors_;
  std::vector<double> previous_;
};

template <class C>
concept Controller = requires(C& c, const Eigen::VectorXd& v, const MpcSolution& s, const MpcConfig& cfg) {
  { c.solve(v, v, 0.0, cfg) } -> std::convertible_to<MpcSolution>;
  { c.after_step(v, v, s, 0L, cfg) } -> std::convertible_to<std::optional<UpdateEvent>>;
};

/**
 * Receding-horizon loop: observe, solve, apply the first control for one
 * sample time, repeat. The window_cost column holds the trailing integral of
 * the stage cost over min(window, t) seconds.
 */
template <Plant P, Controller C>
ClosedLoopResult closed_loop(const P& plant, C& controller, const MpcConfig& cfg, const Eigen::VectorXd& y0,
                             double duration, double window = 10.0) {
  cfg.validate(plant.obs_dim());
  const long steps = detail::substep_count(duration, cfg.sample_time, "closed_loop duration");
  ClosedLoopResult res;
  res.trajectory.times.push_back(0.0);
  res.trajectory.states.push_back(y0);
  CostTrace ct;
  Eigen::VectorXd y = y0;
  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * cfg.sample_time;
    const Eigen::VectorXd z = plant.observe(y);
    MpcSolution sol;
    Eigen::VectorXd y_next;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      sol = controller.solve(y, z, t, cfg);
    } catch (const NumericalError& e) {
      throw NumericalError("closed_loop step " + std::to_string(k) + ": " + e.what());
    }
    const double solve_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    detail::require(!sol.controls.empty(), "closed_loop: solver returned no controls");
    const double u = sol.controls.front();
    try {
      y_next = plant.step(y, u, cfg.sample_time);
    } catch (const NumericalError& e) {
      throw NumericalError("closed_loop step " + std::to_string(k) + ": " + e.what());
    }
    const Eigen::VectorXd z_next = plant.observe(y_next);
    if (auto ev = controller.after_step(z, z_next, sol, k, cfg)) res.updates.push_back(std::move(*ev));

    TraceRow row;
    row.t = t;
    row.u = u;
    row.z = z;
    row.reference = cfg.reference(t);
    row.stage_cost = stage_cost(z, row.reference, cfg.tracked);
    row.solve_seconds = solve_s;
    ct.times.push_back(t);
    ct.costs.push_back(row.stage_cost);
    row.window_cost = running_cost_window(ct, t, std::min(window, t));
    res.rows.push_back(std::move(row));
    res.solutions.push_back(std::move(sol));

    res.trajectory.controls.push_back(u);
    res.trajectory.times.push_back(t + cfg.sample_time);
    res.trajectory.states.push_back(y_next);
    y = std::move(y_next);
  }
  return res;
}

}  // namespace kmpc
