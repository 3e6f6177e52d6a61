#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <iterator>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "kmpc/closed_loop.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/errors.hpp"
#include "kmpc/io.hpp"
#include "kmpc/krom.hpp"
#include "kmpc/mpc.hpp"
#include "kmpc/plant.hpp"

namespace kmpc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Burgers defaults: collection protocol, fit, closed loop and sweep grid.
inline json default_config_json() {
  return json::parse(R"({
    "seed": 1,
    "plant": {
      "kind": "burgers",
      "burgers": {
        "viscosity": 0.01,
        "grid_points": 49,
        "domain_length": 2.0,
        "dt_sim": 0.005,
        "chi_centers": [0.25, 1.25],
        "chi_width": 0.1,
        "obs_points": [0.0, 0.5, 1.0, 1.5]
      },
      "vdp": {"dt_sim": 0.01},
      "linear": {"dim": 2, "radius": 0.9},
      "imported": {"trajectories": []}
    },
    "controls": [-0.075, 0.0, 0.075],
    "collect": {
      "initial_conditions": ["sin_pi", "sin_2pi_gauss", "zero"],
      "switching_cycle": [0.075, 0.0, -0.075, -0.075, 0.0, 0.075],
      "switching_hold": 5.0,
      "duration": 60.0,
      "dt_sample": 0.005,
      "lag": 0.5,
      "stride": 1,
      "export_trajectories": false
    },
    "fit": {"degree": 2, "data_volume": 0, "pinv_rtol": 1e-10, "snapshots": ""},
    "mpc": {
      "horizon": 3,
      "surrogate": "switched",
      "initial_condition": "sin_pi",
      "duration": 60.0,
      "window": 10.0,
      "baseline": true,
      "ensemble": "",
      "tracked": [],
      "control_bounds": null,
      "reference": {"times": [15.0, 30.0, 45.0], "levels": [0.05, -0.05, 0.03, -0.03]}
    },
    "online": {"enabled": false, "epsilon": 0.025, "period": 10.0},
    "sweep": {"degrees": [1, 2, 3], "volumes": [500, 2000, 8000], "timing_steps": 50},
    "output": {"dir": "kmpc_out", "timing": true}
  })");
}

namespace detail {

inline void merge_checked(json& base, const json& patch, const std::string& prefix) {
  require(patch.is_object(), "config: '" + (prefix.empty() ? std::string("<root>") : prefix) +
                                 "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    require(base.contains(it.key()), "config: unknown key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_checked(slot, it.value(), key);
    } else {
      slot = it.value();
    }
  }
}

}  // namespace detail

/// Merges a user config onto the defaults; unknown keys are rejected.
inline json merge_config(json base, const json& patch) {
  detail::merge_checked(base, patch, "");
  return base;
}

/**
 * Applies a dotted override such as "fit.degree" = "3". The text is parsed as
 * JSON when possible (numbers, arrays, booleans, null) and otherwise taken as
 * a string; string-valued keys always keep the raw text.
 */
inline void apply_override(json& cfg, const std::string& key, const std::string& text) {
  detail::require(!key.empty(), "config override: empty key");
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    detail::require(node->is_object() && node->contains(part), "config: unknown key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_string()) {
    *node = text;
    return;
  }
  try {
    *node = json::parse(text);
  } catch (const json::exception&) {
    *node = text;
  }
}

struct ReferenceSpec {
  std::vector<double> times;
  std::vector<std::vector<double>> levels;

  ReferenceFn make(std::size_t n_tracked) const {
    detail::require(levels.size() == times.size() + 1, "reference: need one more level than switch times");
    for (std::size_t i = 1; i < times.size(); ++i) {
      detail::require(times[i] > times[i - 1], "reference: switch times must increase");
    }
    std::vector<Eigen::VectorXd> lv;
    for (const auto& l : levels) {
      detail::require(l.size() == 1 || l.size() == n_tracked,
                      "reference: each level is a scalar or has one entry per tracked observation");
      if (l.size() == 1) {
        lv.push_back(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n_tracked), l[0]));
      } else {
        lv.push_back(Eigen::Map<const Eigen::VectorXd>(l.data(), static_cast<Eigen::Index>(l.size())));
      }
    }
    return [times = times, lv = std::move(lv)](double t) {
      const auto piece = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
      return lv[piece];
    };
  }
};

struct ExperimentConfig {
  json resolved;
  std::uint64_t seed = 1;

  std::string plant_kind;
  BurgersConfig burgers;
  VdpConfig vdp;
  int linear_dim = 2;
  double linear_radius = 0.9;
  std::vector<std::string> imported;

  std::vector<double> controls;

  std::vector<json> initial_conditions;
  std::vector<double> switching_cycle;
  double switching_hold = 5.0;
  double collect_duration = 60.0;
  double dt_sample = 0.005;
  double lag = 0.5;
  long stride = 1;
  bool export_trajectories = false;

  int degree = 2;
  long data_volume = 0;
  double pinv_rtol = kDefaultPinvRtol;
  /// Snapshot manifest to fit from; empty means <output dir>/collect.json.
  std::string snapshots;

  int horizon = 3;
  std::string surrogate = "switched";
  json run_initial_condition;
  double run_duration = 60.0;
  double window = 10.0;
  bool baseline = true;
  /// Ensemble file to run; empty means <output dir>/ensemble.json.
  std::string ensemble;
  std::vector<std::size_t> tracked;
  std::optional<std::pair<double, double>> control_bounds;
  ReferenceSpec reference;

  bool online = false;
  OnlineUpdatePolicy online_policy;

  std::vector<int> sweep_degrees;
  std::vector<long> sweep_volumes;
  int timing_steps = 50;

  std::string out_dir = "kmpc_out";
  bool record_timing = true;
};

namespace detail {

template <class T>
T field(const json& j, const std::string& path) {
  const json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(node->contains(part), "config: missing key '" + path + "'");
    node = &node->at(part);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception& e) {
    throw ValidationError("config: '" + path + "' has the wrong type (" + e.what() + ")");
  }
}

}  // namespace detail

/// Parses and validates a resolved (defaults + file + overrides) config.
inline ExperimentConfig parse_config(const json& j) {
  using detail::field;
  using detail::require;
  ExperimentConfig c;
  c.resolved = j;
  c.seed = field<std::uint64_t>(j, "seed");

  c.plant_kind = field<std::string>(j, "plant.kind");
  require(c.plant_kind == "burgers" || c.plant_kind == "vdp" || c.plant_kind == "linear" ||
              c.plant_kind == "imported",
          "config: plant.kind must be burgers, vdp, linear or imported");
  c.burgers.viscosity = field<double>(j, "plant.burgers.viscosity");
  c.burgers.grid_points = field<int>(j, "plant.burgers.grid_points");
  c.burgers.domain_length = field<double>(j, "plant.burgers.domain_length");
  c.burgers.dt_sim = field<double>(j, "plant.burgers.dt_sim");
  c.burgers.chi_centers = field<std::vector<double>>(j, "plant.burgers.chi_centers");
  c.burgers.chi_width = field<double>(j, "plant.burgers.chi_width");
  c.burgers.obs_points = field<std::vector<double>>(j, "plant.burgers.obs_points");
  c.vdp.dt_sim = field<double>(j, "plant.vdp.dt_sim");
  c.linear_dim = field<int>(j, "plant.linear.dim");
  c.linear_radius = field<double>(j, "plant.linear.radius");
  require(c.linear_dim >= 1, "config: plant.linear.dim must be >= 1");
  c.imported = field<std::vector<std::string>>(j, "plant.imported.trajectories");
  if (c.plant_kind == "imported") require(!c.imported.empty(), "config: plant.imported.trajectories is empty");

  c.controls = field<std::vector<double>>(j, "controls");
  require(c.controls.size() >= 2, "config: need at least two control values");
  std::sort(c.controls.begin(), c.controls.end());
  require(std::adjacent_find(c.controls.begin(), c.controls.end()) == c.controls.end(),
          "config: control values must be distinct");

  c.initial_conditions = field<std::vector<json>>(j, "collect.initial_conditions");
  c.switching_cycle = field<std::vector<double>>(j, "collect.switching_cycle");
  c.switching_hold = field<double>(j, "collect.switching_hold");
  c.collect_duration = field<double>(j, "collect.duration");
  c.dt_sample = field<double>(j, "collect.dt_sample");
  c.lag = field<double>(j, "collect.lag");
  c.stride = field<long>(j, "collect.stride");
  c.export_trajectories = field<bool>(j, "collect.export_trajectories");
  require(c.collect_duration >= 0.0, "config: collect.duration must be >= 0");
  require(c.dt_sample > 0.0 && c.lag > 0.0, "config: collect.dt_sample and collect.lag must be positive");
  require(c.stride >= 1, "config: collect.stride must be >= 1");
  for (double u : c.switching_cycle) {
    require(std::find(c.controls.begin(), c.controls.end(), u) != c.controls.end(),
            "config: switching cycle uses a value outside the control set");
  }

  c.degree = field<int>(j, "fit.degree");
  c.data_volume = field<long>(j, "fit.data_volume");
  c.pinv_rtol = field<double>(j, "fit.pinv_rtol");
  c.snapshots = field<std::string>(j, "fit.snapshots");
  require(c.degree >= 0, "config: fit.degree must be >= 0");
  require(c.data_volume >= 0, "config: fit.data_volume must be >= 0 (0 keeps every pair)");
  require(c.pinv_rtol > 0.0, "config: fit.pinv_rtol must be positive");

  c.horizon = field<int>(j, "mpc.horizon");
  c.surrogate = field<std::string>(j, "mpc.surrogate");
  require(c.surrogate == "switched" || c.surrogate == "continuous",
          "config: mpc.surrogate must be switched or continuous");
  c.run_initial_condition = j.at("mpc").at("initial_condition");
  c.run_duration = field<double>(j, "mpc.duration");
  c.window = field<double>(j, "mpc.window");
  c.baseline = field<bool>(j, "mpc.baseline");
  c.ensemble = field<std::string>(j, "mpc.ensemble");
  c.tracked = field<std::vector<std::size_t>>(j, "mpc.tracked");
  require(c.horizon >= 1, "config: mpc.horizon must be >= 1");
  require(c.run_duration >= 0.0 && c.window >= 0.0, "config: mpc.duration and mpc.window must be >= 0");
  if (const json& b = j.at("mpc").at("control_bounds"); !b.is_null()) {
    const auto v = field<std::vector<double>>(j, "mpc.control_bounds");
    require(v.size() == 2 && v[0] < v[1], "config: mpc.control_bounds must be [lo, hi] with lo < hi");
    c.control_bounds = std::make_pair(v[0], v[1]);
  }
  c.reference.times = field<std::vector<double>>(j, "mpc.reference.times");
  for (const auto& l : j.at("mpc").at("reference").at("levels")) {
    if (l.is_number()) {
      c.reference.levels.push_back({l.get<double>()});
    } else {
      require(l.is_array(), "config: reference levels must be numbers or arrays");
      c.reference.levels.push_back(l.get<std::vector<double>>());
    }
  }

  c.online = field<bool>(j, "online.enabled");
  c.online_policy.epsilon = field<double>(j, "online.epsilon");
  c.online_policy.period = field<double>(j, "online.period");
  require(!c.online || c.surrogate == "switched", "config: online updates need the switched surrogate");

  c.sweep_degrees = field<std::vector<int>>(j, "sweep.degrees");
  c.sweep_volumes = field<std::vector<long>>(j, "sweep.volumes");
  c.timing_steps = field<int>(j, "sweep.timing_steps");
  require(c.timing_steps >= 1, "config: sweep.timing_steps must be >= 1");
  c.out_dir = field<std::string>(j, "output.dir");
  require(!c.out_dir.empty(), "config: output.dir is empty");
  c.record_timing = field<bool>(j, "output.timing");
  return c;
}

inline ExperimentConfig default_config() { return parse_config(default_config_json()); }

// ---------------------------------------------------------------------------
// Plants
// ---------------------------------------------------------------------------

using AnyPlant = std::variant<BurgersPlant, VanDerPolPlant, LinearTestPlant>;

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

inline AnyPlant make_plant(const ExperimentConfig& c) {
  if (c.plant_kind == "burgers") return BurgersPlant(c.burgers);
  if (c.plant_kind == "vdp") return VanDerPolPlant(c.vdp);
  if (c.plant_kind == "linear") {
    auto rng = stream(c.seed, 0x11);
    return LinearTestPlant::random(c.linear_dim, rng, c.lag, c.linear_radius);
  }
  throw ValidationError("imported trajectories have no plant model; this step needs plant.kind = burgers, vdp "
                        "or linear");
}

inline std::size_t plant_obs_dim(const AnyPlant& p) {
  return std::visit([](const auto& pl) { return pl.obs_dim(); }, p);
}

/// Initial state from a name (Burgers) or an explicit state vector.
inline Eigen::VectorXd initial_state(const AnyPlant& plant, const json& spec) {
  return std::visit(
      [&](const auto& p) -> Eigen::VectorXd {
        if (spec.is_string()) {
          if constexpr (std::is_same_v<std::decay_t<decltype(p)>, BurgersPlant>) {
            return p.initial_condition(spec.get<std::string>());
          }
          throw ValidationError("initial condition '" + spec.get<std::string>() +
                                "': named initial conditions exist only for Burgers");
        }
        detail::require(spec.is_array(), "initial condition must be a name or a state vector");
        const auto v = spec.get<std::vector<double>>();
        detail::require(static_cast<Eigen::Index>(v.size()) == p.state_dim(),
                        "initial condition has " + std::to_string(v.size()) + " entries, state dimension is " +
                            std::to_string(p.state_dim()));
        return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
      },
      plant);
}

inline std::vector<CollectionRun> collection_runs(const ExperimentConfig& c, const AnyPlant& plant) {
  std::vector<CollectionRun> runs;
  for (const auto& ic : c.initial_conditions) {
    const Eigen::VectorXd y0 = initial_state(plant, ic);
    for (double u : c.controls) runs.push_back({y0, InputSchedule::constant(u)});
    if (!c.switching_cycle.empty()) runs.push_back({y0, InputSchedule{c.switching_cycle, c.switching_hold}});
  }
  return runs;
}

// ---------------------------------------------------------------------------
// Data and fitting
// ---------------------------------------------------------------------------

/// One snapshot set per control value (sorted), from simulation or imported trajectories.
inline std::vector<SnapshotSet> collect_snapshots(const ExperimentConfig& c, const std::filesystem::path& base = {}) {
  if (c.plant_kind == "imported") {
    std::vector<std::vector<Eigen::VectorXd>> obs;
    std::vector<std::vector<double>> controls;
    for (const auto& f : c.imported) {
      const std::filesystem::path p = base.empty() ? std::filesystem::path(f) : io::resolve(base, f);
      auto tr = io::read_trajectory(p).trajectory;
      for (std::size_t k = 1; k < tr.times.size(); ++k) {
        const double dt = tr.times[k] - tr.times[k - 1];
        detail::require(std::abs(dt - c.dt_sample) <= 1e-9 * std::max(1.0, c.dt_sample),
                        p.string() + ": sample spacing differs from collect.dt_sample");
      }
      obs.push_back(std::move(tr.states));
      controls.push_back(std::move(tr.controls));
    }
    return snapshots_from_observed_runs(obs, controls, c.controls, c.dt_sample, c.lag, c.stride);
  }
  const AnyPlant plant = make_plant(c);
  const auto runs = collection_runs(c, plant);
  return std::visit(
      [&](const auto& p) {
        return generate_snapshots(p, c.controls, std::span<const CollectionRun>(runs), c.collect_duration,
                                  c.dt_sample, c.lag, c.stride);
      },
      plant);
}

/// Uniform subsample of `volume` pairs without replacement (order preserved); volume 0 keeps all.
inline SnapshotSet subsample(const SnapshotSet& s, long volume, std::mt19937_64& rng) {
  detail::require(volume >= 0, "subsample: negative volume");
  if (volume == 0 || volume >= s.size()) return s;
  std::vector<Eigen::Index> all(static_cast<std::size_t>(s.size()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  std::vector<Eigen::Index> pick;
  pick.reserve(static_cast<std::size_t>(volume));
  std::sample(all.begin(), all.end(), std::back_inserter(pick), volume, rng);
  SnapshotSet out{s.lag_time_h, s.control_value, Eigen::MatrixXd(s.Z.rows(), volume),
                  Eigen::MatrixXd(s.Z.rows(), volume)};
  for (Eigen::Index c = 0; c < volume; ++c) {
    out.Z.col(c) = s.Z.col(pick[static_cast<std::size_t>(c)]);
    out.Ztilde.col(c) = s.Ztilde.col(pick[static_cast<std::size_t>(c)]);
  }
  return out;
}

/// Subsamples every control's set with its own stream derived from (seed, cell, control index).
inline std::vector<SnapshotSet> subsample_all(const std::vector<SnapshotSet>& sets, long volume,
                                              std::uint64_t seed, std::uint64_t cell) {
  std::vector<SnapshotSet> out;
  for (std::size_t j = 0; j < sets.size(); ++j) {
    auto rng = stream(seed, cell, j + 1);
    out.push_back(subsample(sets[j], volume, rng));
  }
  return out;
}

inline std::vector<KoopmanModel> fit_models(const std::vector<SnapshotSet>& sets, int degree, double rtol) {
  detail::require(!sets.empty(), "fit: no snapshot sets");
  const Dictionary dict = build_dictionary(static_cast<std::size_t>(sets.front().Z.rows()), degree);
  std::vector<KoopmanModel> models;
  for (const auto& s : sets) models.push_back(edmd_fit(s, dict, rtol));
  return models;
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

inline MpcConfig mpc_config(const ExperimentConfig& c, std::size_t obs_dim) {
  MpcConfig m;
  m.horizon = c.horizon;
  m.sample_time = c.lag;
  if (c.tracked.empty()) {
    for (std::size_t i = 0; i < obs_dim; ++i) m.tracked.push_back(i);
  } else {
    m.tracked = c.tracked;
  }
  m.reference = c.reference.make(m.tracked.size());
  m.control_bounds = c.control_bounds;
  m.continuous.seed = c.seed;
  m.validate(obs_dim);
  return m;
}

/// Time integral (trapezoid) of |c_a - c_b| over the common rows.
inline double delta_j(const ClosedLoopResult& a, const ClosedLoopResult& b) {
  detail::require(a.rows.size() == b.rows.size(), "delta_j: traces have different lengths");
  CostTrace d;
  for (std::size_t k = 0; k < a.rows.size(); ++k) {
    detail::require(a.rows[k].t == b.rows[k].t, "delta_j: traces are sampled at different times");
    d.times.push_back(a.rows[k].t);
    d.costs.push_back(std::abs(a.rows[k].stage_cost - b.rows[k].stage_cost));
  }
  if (d.times.size() < 2) return 0.0;
  return running_cost_window(d, d.times.back(), d.times.back() - d.times.front());
}

struct RunOutcome {
  ClosedLoopResult krom;
  std::optional<ClosedLoopResult> oracle;
  std::optional<double> delta_j;
};

/// Closed loop with the surrogate built from `models`; the oracle baseline uses the plant as predictor.
inline ClosedLoopResult run_surrogate(const ExperimentConfig& c, const AnyPlant& plant,
                                      const std::vector<KoopmanModel>& models,
                                      const std::vector<SnapshotSet>* online_data = nullptr) {
  const MpcConfig m = mpc_config(c, plant_obs_dim(plant));
  const Eigen::VectorXd y0 = initial_state(plant, c.run_initial_condition);
  SwitchedBank bank(models);
  return std::visit(
      [&](const auto& p) {
        if (c.surrogate == "continuous") {
          ContinuousKromController ctl{LocalizedBilinear(bank)};
          return closed_loop(p, ctl, m, y0, c.run_duration, c.window);
        }
        SwitchedKromController ctl(bank);
        if (c.online) {
          detail::require(online_data != nullptr, "online updates need the training snapshots");
          std::vector<OnlineAccumulator> accs;
          for (const auto& s : *online_data) accs.push_back(OnlineAccumulator::from_snapshots(s, bank.dict()));
          std::sort(accs.begin(), accs.end(),
                    [](const auto& a, const auto& b) { return a.control_value() < b.control_value(); });
          ctl.enable_online(std::move(accs), c.online_policy);
        }
        return closed_loop(p, ctl, m, y0, c.run_duration, c.window);
      },
      plant);
}

inline ClosedLoopResult run_oracle(const ExperimentConfig& c, const AnyPlant& plant) {
  const MpcConfig m = mpc_config(c, plant_obs_dim(plant));
  const Eigen::VectorXd y0 = initial_state(plant, c.run_initial_condition);
  return std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if (c.surrogate == "continuous") {
          PlantContinuousController<P> ctl(p, c.controls);
          return closed_loop(p, ctl, m, y0, c.run_duration, c.window);
        }
        PlantSwitchedController<P> ctl(p, c.controls);
        return closed_loop(p, ctl, m, y0, c.run_duration, c.window);
      },
      plant);
}

inline RunOutcome run_experiment(const ExperimentConfig& c, const AnyPlant& plant,
                                 const std::vector<KoopmanModel>& models,
                                 const std::vector<SnapshotSet>* online_data = nullptr) {
  RunOutcome out{run_surrogate(c, plant, models, online_data), std::nullopt, std::nullopt};
  if (c.baseline) {
    out.oracle = run_oracle(c, plant);
    out.delta_j = delta_j(out.krom, *out.oracle);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Timing
// ---------------------------------------------------------------------------

struct SpeedupMeasurement {
  double plant_step_seconds = 0.0;
  double krom_step_seconds = 0.0;
  double factor() const { return plant_step_seconds / krom_step_seconds; }
};

/**
 * Mean wall time of one plant step over the lag time versus one krom_step,
 * both starting from y0 and cycling through the control values.
 */
inline SpeedupMeasurement measure_speedup(const AnyPlant& plant, const std::vector<KoopmanModel>& models,
                                          const Eigen::VectorXd& y0, double lag, int steps) {
  using clock = std::chrono::steady_clock;
  detail::require(steps >= 1, "measure_speedup: steps must be >= 1");
  SpeedupMeasurement m;
  volatile double sink = 0.0;
  std::visit(
      [&](const auto& p) {
        Eigen::VectorXd y = y0;
        const auto t0 = clock::now();
        for (int k = 0; k < steps; ++k) y = p.step(y, models[static_cast<std::size_t>(k) % models.size()].control_value, lag);
        m.plant_step_seconds = std::chrono::duration<double>(clock::now() - t0).count() / steps;
        sink = sink + y.sum();
        const Eigen::VectorXd psi0 = models.front().dict.lift(p.observe(y0));
        // enough repetitions for a measurable interval
        const long reps = 1000L * steps;
        Eigen::VectorXd psi = psi0;
        const auto t1 = clock::now();
        for (long k = 0; k < reps; ++k) {
          psi = krom_step(models[static_cast<std::size_t>(k) % models.size()], psi);
          if ((k & 63) == 63) psi = psi0;
        }
        m.krom_step_seconds = std::chrono::duration<double>(clock::now() - t1).count() / static_cast<double>(reps);
        sink = sink + psi.sum();
      },
      plant);
  detail::require(m.krom_step_seconds > 0.0, "measure_speedup: timer resolution too coarse");
  return m;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  int degree = 0;
  long volume = 0;
  std::size_t k = 0;
  long pairs = 0;
  bool ok = false;
  double total_cost = std::numeric_limits<double>::quiet_NaN();
  double oracle_cost = std::numeric_limits<double>::quiet_NaN();
  double delta_j = std::numeric_limits<double>::quiet_NaN();
  double speedup = std::numeric_limits<double>::quiet_NaN();
  std::string message;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  ClosedLoopResult oracle;
};

/**
 * Runs every (degree, volume) cell on a pool of `jobs` threads. Cells draw
 * their subsamples from streams keyed by (seed, cell index), so results do not
 * depend on the number of jobs; rows come back in grid order.
 */
inline SweepResult run_sweep(const ExperimentConfig& c, const std::vector<SnapshotSet>& sets, unsigned jobs = 1) {
  detail::require(!c.sweep_degrees.empty() && !c.sweep_volumes.empty(), "sweep: empty grid");
  const AnyPlant plant = make_plant(c);
  SweepResult res;
  res.oracle = run_oracle(c, plant);
  const double oracle_cost = res.oracle.total_cost();
  std::vector<std::pair<int, long>> cells;
  for (int d : c.sweep_degrees) {
    for (long v : c.sweep_volumes) cells.emplace_back(d, v);
  }
  res.rows.resize(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepRow& row = res.rows[i];
      row.degree = cells[i].first;
      row.volume = cells[i].second;
      row.oracle_cost = oracle_cost;
      try {
        const auto sub = subsample_all(sets, row.volume, c.seed, i);
        row.pairs = static_cast<long>(sub.front().size());
        for (const auto& s : sub) row.pairs = std::min<long>(row.pairs, static_cast<long>(s.size()));
        const auto models = fit_models(sub, row.degree, c.pinv_rtol);
        row.k = models.front().size();
        const auto loop = run_surrogate(c, plant, models, &sub);
        row.total_cost = loop.total_cost();
        row.delta_j = delta_j(loop, res.oracle);
        if (c.record_timing) {
          row.speedup = measure_speedup(plant, models, initial_state(plant, c.run_initial_condition), c.lag,
                                        c.timing_steps)
                            .factor();
        }
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.message = e.what();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return res;
}

inline io::Table sweep_table(const SweepResult& r) {
  io::Table t;
  t.header = {"degree", "volume", "k", "pairs", "ok", "total_cost", "oracle_cost", "delta_j", "speedup"};
  for (const auto& row : r.rows) {
    t.rows.push_back({static_cast<double>(row.degree), static_cast<double>(row.volume), static_cast<double>(row.k),
                      static_cast<double>(row.pairs), row.ok ? 1.0 : 0.0, row.total_cost, row.oracle_cost,
                      row.delta_j, row.speedup});
  }
  return t;
}

}  // namespace kmpc
