#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "kmpc/edmd.hpp"
#include "kmpc/errors.hpp"

namespace kmpc {

/// A simulated system: advance the state under constant input for dt, and observe it.
template <class P>
concept Plant = requires(const P& p, const Eigen::VectorXd& y, double u, double dt) {
  { p.step(y, u, dt) } -> std::convertible_to<Eigen::VectorXd>;
  { p.observe(y) } -> std::convertible_to<Eigen::VectorXd>;
  { p.obs_dim() } -> std::convertible_to<std::size_t>;
};

namespace detail {

/// Number of substeps of size `sub` in `dt`; dt must be an integer multiple.
inline long substep_count(double dt, double sub, const char* who) {
  const double ratio = dt / sub;
  const long n = std::lround(ratio);
  if (n < 0 || std::abs(ratio - static_cast<double>(n)) > 1e-9 * std::max(1.0, ratio)) {
    std::ostringstream os;
    os << who << ": dt = " << dt << " is not a non-negative integer multiple of " << sub;
    throw ValidationError(os.str());
  }
  return n;
}

template <class Rhs>
Eigen::VectorXd rk4(const Rhs& f, const Eigen::VectorXd& y, double h) {
  const Eigen::VectorXd k1 = f(y);
  const Eigen::VectorXd k2 = f(y + 0.5 * h * k1);
  const Eigen::VectorXd k3 = f(y + 0.5 * h * k2);
  const Eigen::VectorXd k4 = f(y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1D viscous Burgers equation, periodic, distributed control u(t) chi(x)
// ---------------------------------------------------------------------------

struct BurgersConfig {
  double viscosity = 0.01;
  int grid_points = 49;
  double domain_length = 2.0;
  double dt_sim = 0.005;
  std::vector<double> chi_centers{0.25, 1.25};
  double chi_width = 0.1;
  std::vector<double> obs_points{0.0, 0.5, 1.0, 1.5};
};

/**
 * Semi-discrete Burgers y_t = nu y_xx - (y^2/2)_x + u chi(x) on a periodic grid
 * x_i = i * L / N, second-order central differences, explicit RK4 in time.
 */
class BurgersPlant {
 public:
  explicit BurgersPlant(BurgersConfig cfg) : cfg_(std::move(cfg)) {
    detail::require(cfg_.grid_points >= 8, "burgers: grid_points must be >= 8");
    detail::require(cfg_.viscosity > 0.0, "burgers: viscosity must be positive");
    detail::require(cfg_.domain_length > 0.0, "burgers: domain_length must be positive");
    detail::require(cfg_.dt_sim > 0.0, "burgers: dt_sim must be positive");
    detail::require(cfg_.chi_width > 0.0, "burgers: chi_width must be positive");
    dx_ = cfg_.domain_length / cfg_.grid_points;
    const double diffusion_number = cfg_.viscosity * cfg_.dt_sim / (dx_ * dx_);
    if (diffusion_number > 0.5) {
      std::ostringstream os;
      os << "burgers: diffusion number nu*dt/dx^2 = " << diffusion_number << " exceeds 0.5";
      throw ValidationError(os.str());
    }
    chi_ = grid_function([&](double x) { return shape(x); });
    detail::require(!cfg_.obs_points.empty(), "burgers: no observation points");
    for (double xo : cfg_.obs_points) {
      detail::require(xo >= 0.0 && xo < cfg_.domain_length,
                      "burgers: observation point outside [0, domain_length)");
      const double pos = xo / dx_;
      // nearest node; exact half-way ties go to the lower node
      const auto node = static_cast<long>(std::floor(pos + 0.5 - 1e-9));
      const double offset = std::abs(pos - static_cast<double>(node));
      if (!(offset <= 0.5 + 1e-9)) {
        throw ValidationError("burgers: observation point " + std::to_string(xo) +
                              " is not representable on the grid");
      }
      if (offset > 1e-9) {
        std::ostringstream os;
        os << "observation point x = " << xo << " snapped to grid node x = "
           << static_cast<double>(node % cfg_.grid_points) * dx_ << " (offset " << offset * dx_ << ")";
        warnings_.push_back(os.str());
      }
      obs_nodes_.push_back(static_cast<Eigen::Index>(node % cfg_.grid_points));
    }
  }

  const BurgersConfig& config() const { return cfg_; }
  double dx() const { return dx_; }
  Eigen::Index state_dim() const { return cfg_.grid_points; }
  std::size_t obs_dim() const { return obs_nodes_.size(); }
  const std::vector<Eigen::Index>& obs_nodes() const { return obs_nodes_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const Eigen::VectorXd& chi() const { return chi_; }

  Eigen::VectorXd grid() const {
    return Eigen::VectorXd::LinSpaced(cfg_.grid_points, 0.0, dx_ * (cfg_.grid_points - 1));
  }

  Eigen::VectorXd grid_function(const std::function<double(double)>& f) const {
    Eigen::VectorXd out(cfg_.grid_points);
    for (int i = 0; i < cfg_.grid_points; ++i) out(i) = f(i * dx_);
    return out;
  }

  /// Sum of periodic Gaussian bumps exp(-((x - c) / w)^2).
  double shape(double x) const {
    double s = 0.0;
    const double L = cfg_.domain_length;
    for (double c : cfg_.chi_centers) {
      for (int wrap = -1; wrap <= 1; ++wrap) {
        const double d = (x - c + wrap * L) / cfg_.chi_width;
        s += std::exp(-d * d);
      }
    }
    return s;
  }

  Eigen::VectorXd rhs(const Eigen::VectorXd& y, double u) const {
    const Eigen::Index n = y.size();
    const double inv_dx2 = 1.0 / (dx_ * dx_);
    const double inv_4dx = 1.0 / (4.0 * dx_);
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double yl = y(i == 0 ? n - 1 : i - 1);
      const double yr = y(i == n - 1 ? 0 : i + 1);
      out(i) = cfg_.viscosity * (yr - 2.0 * y(i) + yl) * inv_dx2 - (yr * yr - yl * yl) * inv_4dx +
               u * chi_(i);
    }
    return out;
  }

  /// Advances by dt (an integer multiple of dt_sim) under constant u.
  Eigen::VectorXd step(const Eigen::VectorXd& y, double u, double dt) const {
    detail::require(y.size() == cfg_.grid_points, "burgers_step: state length mismatch");
    detail::require(y.allFinite(), "burgers_step: non-finite state");
    const long n = detail::substep_count(dt, cfg_.dt_sim, "burgers_step");
    Eigen::VectorXd cur = y;
    const auto f = [&](const Eigen::VectorXd& v) { return rhs(v, u); };
    for (long s = 0; s < n; ++s) {
      cur = detail::rk4(f, cur, cfg_.dt_sim);
      if (!cur.allFinite()) {
        std::ostringstream os;
        os << "burgers_step: blow-up at substep time " << (s + 1) * cfg_.dt_sim
           << " s into the step (u = " << u << ")";
        throw NumericalError(os.str());
      }
    }
    return cur;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& y) const {
    detail::require(y.size() == cfg_.grid_points, "observe_burgers: state length mismatch");
    Eigen::VectorXd z(static_cast<Eigen::Index>(obs_nodes_.size()));
    for (std::size_t i = 0; i < obs_nodes_.size(); ++i) z(static_cast<Eigen::Index>(i)) = y(obs_nodes_[i]);
    return z;
  }

  /// Named initial conditions: "sin_pi", "sin_2pi_gauss", "zero", "const:<c>", "scaled_sin_pi:<a>".
  Eigen::VectorXd initial_condition(const std::string& name) const {
    using std::numbers::pi;
    if (name == "sin_pi") return grid_function([](double x) { return std::sin(pi * x); });
    if (name == "sin_2pi_gauss") {
      return grid_function([](double x) { return std::sin(2 * pi * x) * std::exp(-(x - 1) * (x - 1)); });
    }
    if (name == "zero") return Eigen::VectorXd::Zero(cfg_.grid_points);
    const auto colon = name.find(':');
    if (colon != std::string::npos) {
      const std::string head = name.substr(0, colon);
      double a = 0.0;
      try {
        a = std::stod(name.substr(colon + 1));
      } catch (const std::exception&) {
        throw ValidationError("burgers: bad initial condition parameter in '" + name + "'");
      }
      if (head == "const") return Eigen::VectorXd::Constant(cfg_.grid_points, a);
      if (head == "scaled_sin_pi") return grid_function([a](double x) { return a * std::sin(pi * x); });
    }
    throw ValidationError("burgers: unknown initial condition '" + name + "'");
  }

 private:
  BurgersConfig cfg_;
  double dx_ = 0.0;
  Eigen::VectorXd chi_;
  std::vector<Eigen::Index> obs_nodes_;
  std::vector<std::string> warnings_;
};

// ---------------------------------------------------------------------------
// Van der Pol oscillator with additive input on the second component
// ---------------------------------------------------------------------------

struct VdpConfig {
  double dt_sim = 0.01;
};

class VanDerPolPlant {
 public:
  explicit VanDerPolPlant(VdpConfig cfg = {}) : cfg_(cfg) {
    detail::require(cfg_.dt_sim > 0.0, "vdp: dt_sim must be positive");
  }

  const VdpConfig& config() const { return cfg_; }
  Eigen::Index state_dim() const { return 2; }
  std::size_t obs_dim() const { return 2; }

  static Eigen::VectorXd rhs(const Eigen::VectorXd& y, double u) {
    Eigen::VectorXd d(2);
    d(0) = y(1);
    d(1) = (1.0 - y(0) * y(0)) * y(1) - y(0) + u;
    return d;
  }

  /// RK4 with substeps no longer than dt_sim.
  Eigen::VectorXd step(const Eigen::VectorXd& y, double u, double dt) const {
    detail::require(y.size() == 2, "vdp_step: state must have length 2");
    detail::require(y.allFinite(), "vdp_step: non-finite state");
    detail::require(dt >= 0.0, "vdp_step: dt must be non-negative");
    if (dt == 0.0) return y;
    const long n = std::max(1L, static_cast<long>(std::ceil(dt / cfg_.dt_sim - 1e-9)));
    const double h = dt / static_cast<double>(n);
    Eigen::VectorXd cur = y;
    const auto f = [u](const Eigen::VectorXd& v) { return rhs(v, u); };
    for (long s = 0; s < n; ++s) cur = detail::rk4(f, cur, h);
    if (!cur.allFinite()) throw NumericalError("vdp_step: non-finite state");
    return cur;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& y) const { return y; }

 private:
  VdpConfig cfg_;
};

// ---------------------------------------------------------------------------
// Control-affine linear test plant z+ = M z + N u (full-state observation)
// ---------------------------------------------------------------------------

/**
 * Discrete plant on which EDMD with any monomial dictionary is exact: the
 * observation map is the identity and the flow is affine in both z and u.
 */
class LinearTestPlant {
 public:
  LinearTestPlant(Eigen::MatrixXd M, Eigen::VectorXd N, double sample_time)
      : M_(std::move(M)), N_(std::move(N)), h_(sample_time) {
    detail::require(M_.rows() == M_.cols(), "linear plant: M must be square");
    detail::require(N_.size() == M_.rows(), "linear plant: N length mismatch");
    detail::require(h_ > 0.0, "linear plant: sample time must be positive");
  }

  /// Random M scaled to spectral radius `radius`, N with standard normal entries.
  template <class Rng>
  static LinearTestPlant random(Eigen::Index dim, Rng& rng, double sample_time = 0.5,
                                double radius = 0.9) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd M(dim, dim);
    Eigen::VectorXd N(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) M(i, j) = normal(rng);
      N(i) = normal(rng);
    }
    const double rho = M.eigenvalues().cwiseAbs().maxCoeff();
    M *= radius / rho;
    return LinearTestPlant(std::move(M), std::move(N), sample_time);
  }

  const Eigen::MatrixXd& M() const { return M_; }
  const Eigen::VectorXd& N() const { return N_; }
  double sample_time() const { return h_; }
  Eigen::Index state_dim() const { return M_.rows(); }
  std::size_t obs_dim() const { return static_cast<std::size_t>(M_.rows()); }

  Eigen::VectorXd step(const Eigen::VectorXd& y, double u, double dt) const {
    detail::require(y.size() == M_.rows(), "linear plant: state length mismatch");
    const long n = detail::substep_count(dt, h_, "linear plant step");
    Eigen::VectorXd cur = y;
    for (long s = 0; s < n; ++s) cur = M_ * cur + N_ * u;
    return cur;
  }

  Eigen::VectorXd observe(const Eigen::VectorXd& y) const { return y; }

 private:
  Eigen::MatrixXd M_;
  Eigen::VectorXd N_;
  double h_;
};

// ---------------------------------------------------------------------------
// Trajectories and snapshot collection
// ---------------------------------------------------------------------------

/// states[k] at times[k]; controls[k] is applied on [times[k], times[k+1]).
struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<double> controls;

  void validate() const {
    detail::require(times.size() == states.size(), "trajectory: times/states length mismatch");
    detail::require(states.empty() ? controls.empty() : controls.size() + 1 == states.size(),
                    "trajectory: controls must be one shorter than states");
    for (std::size_t k = 1; k < times.size(); ++k) {
      detail::require(times[k] > times[k - 1], "trajectory: times must be strictly increasing");
    }
    for (const auto& s : states) detail::require(s.allFinite(), "trajectory: non-finite state");
  }
};

/// Cyclic piecewise-constant input: values[0] for hold_time, then values[1], ... and repeat.
/// A single value gives a constant input.
struct InputSchedule {
  std::vector<double> values;
  double hold_time = 0.0;

  static InputSchedule constant(double u) { return {{u}, 0.0}; }

  /// Control applied on sample interval k, with intervals of length dt_sample.
  std::vector<double> per_interval(std::size_t intervals, double dt_sample) const {
    detail::require(!values.empty(), "input schedule: no values");
    std::vector<double> out(intervals, values.front());
    if (values.size() == 1) return out;
    const long hold = detail::substep_count(hold_time, dt_sample, "input schedule hold_time");
    detail::require(hold >= 1, "input schedule: hold_time must be at least one sample");
    for (std::size_t k = 0; k < intervals; ++k) {
      out[k] = values[(k / static_cast<std::size_t>(hold)) % values.size()];
    }
    return out;
  }
};

template <Plant P>
Trajectory simulate(const P& plant, const Eigen::VectorXd& y0, const InputSchedule& schedule,
                    double duration, double dt_sample) {
  detail::require(dt_sample > 0.0, "simulate: dt_sample must be positive");
  const long n = detail::substep_count(duration, dt_sample, "simulate duration");
  Trajectory tr;
  tr.controls = schedule.per_interval(static_cast<std::size_t>(n), dt_sample);
  tr.times.reserve(static_cast<std::size_t>(n) + 1);
  tr.states.reserve(static_cast<std::size_t>(n) + 1);
  tr.times.push_back(0.0);
  tr.states.push_back(y0);
  for (long k = 0; k < n; ++k) {
    tr.states.push_back(plant.step(tr.states.back(), tr.controls[static_cast<std::size_t>(k)], dt_sample));
    tr.times.push_back(static_cast<double>(k + 1) * dt_sample);
  }
  return tr;
}

/**
 * Appends eligible pairs (z_i, z_{i+lag}) of one observed run to per-control buckets.
 *
 * A pair qualifies for control u^j only if u^j is applied on every sample
 * interval in [t_i, t_i + lag); pairs straddling a switch are dropped. Only
 * start indices with i % stride == 0 are considered. Returns pairs added.
 */
inline std::size_t append_pairs(const std::vector<Eigen::VectorXd>& observations,
                                const std::vector<double>& controls,
                                std::span<const double> control_values, long lag_samples,
                                long stride, std::vector<std::vector<std::size_t>>& bucket_starts) {
  detail::require(lag_samples >= 1, "append_pairs: lag must be at least one sample");
  detail::require(stride >= 1, "append_pairs: stride must be >= 1");
  detail::require(observations.empty() || controls.size() + 1 == observations.size(),
                  "append_pairs: controls must be one shorter than observations");
  bucket_starts.assign(control_values.size(), {});
  const auto L = static_cast<std::size_t>(lag_samples);
  if (observations.size() <= L) return 0;
  // run[k]: number of consecutive intervals starting at k with the same control
  std::vector<std::size_t> run(controls.size(), 1);
  for (std::size_t k = controls.size(); k-- > 0;) {
    if (k + 1 < controls.size() && controls[k + 1] == controls[k]) run[k] = run[k + 1] + 1;
  }
  std::size_t added = 0;
  for (std::size_t i = 0; i + L < observations.size(); i += static_cast<std::size_t>(stride)) {
    if (run[i] < L) continue;
    for (std::size_t j = 0; j < control_values.size(); ++j) {
      if (controls[i] == control_values[j]) {
        bucket_starts[j].push_back(i);
        ++added;
        break;
      }
    }
  }
  return added;
}

/// Builds per-control snapshot sets from observed runs (e.g. imported trajectories).
inline std::vector<SnapshotSet> snapshots_from_observed_runs(
    const std::vector<std::vector<Eigen::VectorXd>>& observed_runs,
    const std::vector<std::vector<double>>& run_controls, std::span<const double> control_values,
    double dt_sample, double lag_h, long stride = 1, bool allow_empty = false) {
  detail::require(observed_runs.size() == run_controls.size(), "snapshots: run count mismatch");
  const long L = detail::substep_count(lag_h, dt_sample, "snapshots lag_h");
  detail::require(L >= 1, "snapshots: lag must be at least one sample");
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> picks(control_values.size());
  Eigen::Index q = -1;
  for (std::size_t r = 0; r < observed_runs.size(); ++r) {
    std::vector<std::vector<std::size_t>> starts;
    append_pairs(observed_runs[r], run_controls[r], control_values, L, stride, starts);
    for (std::size_t j = 0; j < starts.size(); ++j) {
      for (auto i : starts[j]) picks[j].emplace_back(r, i);
    }
    if (!observed_runs[r].empty()) q = observed_runs[r].front().size();
  }
  std::vector<SnapshotSet> out;
  std::vector<std::string> empty;
  for (std::size_t j = 0; j < control_values.size(); ++j) {
    SnapshotSet s;
    s.lag_time_h = lag_h;
    s.control_value = control_values[j];
    const auto m = static_cast<Eigen::Index>(picks[j].size());
    s.Z.resize(q < 0 ? 0 : q, m);
    s.Ztilde.resize(q < 0 ? 0 : q, m);
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto [r, i] = picks[j][static_cast<std::size_t>(c)];
      s.Z.col(c) = observed_runs[r][i];
      s.Ztilde.col(c) = observed_runs[r][i + static_cast<std::size_t>(L)];
    }
    if (m == 0) empty.push_back(std::to_string(control_values[j]));
    out.push_back(std::move(s));
  }
  if (!empty.empty() && !allow_empty) {
    std::string msg = "empty control bucket for u =";
    for (const auto& e : empty) msg += " " + e;
    throw ValidationError(msg);
  }
  return out;
}

/// One data-collection simulation: initial state plus input schedule.
struct CollectionRun {
  Eigen::VectorXd y0;
  InputSchedule schedule;
};

/// Simulates every run, observes each sample and splits eligible pairs by active control.
template <Plant P>
std::vector<SnapshotSet> generate_snapshots(const P& plant, std::span<const double> control_values,
                                            std::span<const CollectionRun> runs, double duration,
                                            double dt_sample, double lag_h, long stride = 1) {
  std::vector<std::vector<Eigen::VectorXd>> observed;
  std::vector<std::vector<double>> controls;
  for (const auto& run : runs) {
    for (double u : run.schedule.values) {
      bool known = false;
      for (double v : control_values) known = known || (u == v);
      detail::require(known, "generate_snapshots: schedule uses a value outside the control set");
    }
    Trajectory tr = simulate(plant, run.y0, run.schedule, duration, dt_sample);
    std::vector<Eigen::VectorXd> obs;
    obs.reserve(tr.states.size());
    for (const auto& y : tr.states) obs.push_back(plant.observe(y));
    observed.push_back(std::move(obs));
    controls.push_back(std::move(tr.controls));
  }
  return snapshots_from_observed_runs(observed, controls, control_values, dt_sample, lag_h, stride);
}

}  // namespace kmpc
