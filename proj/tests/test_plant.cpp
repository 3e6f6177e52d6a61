#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"

namespace {

kmpc::BurgersConfig burgers_grid(int n, double nu, double dt) {
  kmpc::BurgersConfig c;
  c.grid_points = n;
  c.viscosity = nu;
  c.dt_sim = dt;
  return c;
}

Eigen::VectorXd advance(const kmpc::BurgersPlant& p, Eigen::VectorXd y, double u, int steps, double dt) {
  for (int k = 0; k < steps; ++k) y = p.step(y, u, dt);
  return y;
}

}  // namespace

TEST(Burgers, ConstantStateIsSteadyWithoutInput) {
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  const Eigen::VectorXd y0 = p.initial_condition("const:0.3");
  const Eigen::VectorXd y = advance(p, y0, 0.0, 200, 0.05);
  EXPECT_LE((y - y0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Burgers, MeanConservedWithoutInput) {
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  const Eigen::VectorXd y0 = p.initial_condition("sin_2pi_gauss") + p.initial_condition("const:0.2");
  const Eigen::VectorXd y = advance(p, y0, 0.0, 1000, 0.005);
  EXPECT_NEAR(y.mean(), y0.mean(), 1e-10);
}

TEST(Burgers, InputShiftsMeanLinearly) {
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  const Eigen::VectorXd y0 = p.initial_condition("sin_pi");
  for (double u : {-0.075, 0.075, 0.5}) {
    const Eigen::VectorXd y = advance(p, y0, u, 400, 0.005);
    EXPECT_NEAR(y.mean() - y0.mean(), u * 2.0 * p.chi().mean(), 1e-10) << "u=" << u;
  }
}

TEST(Burgers, EnergyDecaysWithoutInput) {
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  Eigen::VectorXd y = p.initial_condition("sin_pi");
  double e = y.squaredNorm();
  for (int k = 0; k < 100; ++k) {
    y = p.step(y, 0.0, 0.1);
    EXPECT_LT(y.squaredNorm(), e) << "interval " << k;
    e = y.squaredNorm();
  }
}

TEST(Burgers, SecondOrderSpatialConvergence) {
  const double dt = 0.0005;
  std::vector<Eigen::VectorXd> sol;
  for (int n : {49, 98, 196}) {
    const kmpc::BurgersPlant p{burgers_grid(n, 0.1, dt)};
    sol.push_back(p.step(p.initial_condition("sin_pi"), 0.2, 0.5));
  }
  double d1 = 0.0, d2 = 0.0;
  for (Eigen::Index i = 0; i < 49; ++i) {
    d1 = std::max(d1, std::abs(sol[0](i) - sol[1](2 * i)));
    d2 = std::max(d2, std::abs(sol[1](2 * i) - sol[2](4 * i)));
  }
  const double order = std::log2(d1 / d2);
  EXPECT_GE(order, 1.7);
  EXPECT_LE(order, 2.3);
}

TEST(Burgers, ObservationNodesAndSnapping) {
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  EXPECT_EQ(p.obs_nodes(), (std::vector<Eigen::Index>{0, 12, 24, 37}));
  EXPECT_EQ(p.warnings().size(), 3u);
  const Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(49, 0.0, 48.0);
  EXPECT_EQ(p.observe(y), Eigen::Vector4d(0, 12, 24, 37));

  auto c = burgers_grid(40, 0.01, 0.005);
  const kmpc::BurgersPlant exact{c};
  EXPECT_TRUE(exact.warnings().empty());
  EXPECT_EQ(exact.obs_nodes(), (std::vector<Eigen::Index>{0, 10, 20, 30}));

  c.obs_points = {1.5, 0.0, 1.0};
  const kmpc::BurgersPlant permuted{c};
  const Eigen::VectorXd y40 = Eigen::VectorXd::LinSpaced(40, 0.0, 39.0);
  EXPECT_EQ(permuted.observe(y40), Eigen::Vector3d(30, 0, 20));
}

TEST(Burgers, ValidatesConfigurationAndInputs) {
  EXPECT_THROW(kmpc::BurgersPlant{burgers_grid(300, 0.01, 0.005)}, kmpc::ValidationError);
  auto c = kmpc::BurgersConfig{};
  c.obs_points = {2.0};
  EXPECT_THROW(kmpc::BurgersPlant{c}, kmpc::ValidationError);
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  EXPECT_THROW(p.step(p.initial_condition("zero"), 0.0, 0.0033), kmpc::ValidationError);
  EXPECT_THROW(p.step(Eigen::VectorXd::Zero(10), 0.0, 0.005), kmpc::ValidationError);
  EXPECT_THROW(p.initial_condition("cos"), kmpc::ValidationError);
  EXPECT_THROW(p.initial_condition("const:abc"), kmpc::ValidationError);
  EXPECT_EQ(p.step(p.initial_condition("zero"), 0.0, 0.0), p.initial_condition("zero"));
}

TEST(Burgers, BlowUpIsNumericalFailure) {
  const kmpc::BurgersPlant p{kmpc::BurgersConfig{}};
  EXPECT_THROW(advance(p, p.initial_condition("const:1e200"), 1e300, 10, 0.005), kmpc::NumericalError);
}

TEST(VanDerPol, ShiftedEquilibrium) {
  const kmpc::VanDerPolPlant p;
  for (double u : {-1.0, 0.0, 0.5}) {
    const Eigen::VectorXd eq = Eigen::Vector2d(u, 0.0);
    EXPECT_LE((p.step(eq, u, 5.0) - eq).norm(), 1e-14);
  }
}

TEST(VanDerPol, FourthOrderIntegrator) {
  const Eigen::VectorXd y0 = Eigen::Vector2d(1.0, 1.0);
  const Eigen::VectorXd ref = kmpc::VanDerPolPlant{{0.0005}}.step(y0, 0.3, 2.0);
  const double e1 = (kmpc::VanDerPolPlant{{0.1}}.step(y0, 0.3, 2.0) - ref).norm();
  const double e2 = (kmpc::VanDerPolPlant{{0.05}}.step(y0, 0.3, 2.0) - ref).norm();
  const double order = std::log2(e1 / e2);
  EXPECT_GE(order, 3.5);
  EXPECT_LE(order, 4.5);
}

TEST(VanDerPol, BoundedTrajectories) {
  const kmpc::VanDerPolPlant p;
  for (double u : {-1.0, 0.0, 1.0}) {
    const auto tr = kmpc::simulate(p, Eigen::Vector2d(1.0, 1.0), kmpc::InputSchedule::constant(u), 20.0, 0.05);
    for (const auto& y : tr.states) EXPECT_LT(y.cwiseAbs().maxCoeff(), 10.0);
  }
}

namespace {

/// Scalar observations equal to the sample index, so each pair encodes its start.
std::vector<Eigen::VectorXd> index_observations(std::size_t n) {
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(Eigen::VectorXd::Constant(1, static_cast<double>(i)));
  return out;
}

/// Brute-force eligibility: every interval in [i, i + lag) carries u.
std::size_t eligible_count(const std::vector<double>& controls, double u, std::size_t lag, std::size_t stride) {
  std::size_t n = 0;
  for (std::size_t i = 0; i + lag <= controls.size(); i += stride) {
    bool ok = true;
    for (std::size_t k = i; k < i + lag; ++k) ok = ok && controls[k] == u;
    n += ok ? 1 : 0;
  }
  return n;
}

const std::vector<double> kControls{-0.075, 0.0, 0.075};

}  // namespace

TEST(Snapshots, ConstantRunPairCount) {
  const auto controls = kmpc::InputSchedule::constant(0.0).per_interval(12000, 0.005);
  const auto sets = kmpc::snapshots_from_observed_runs({index_observations(12001)}, {controls}, kControls,
                                                       0.005, 0.5, 1, true);
  EXPECT_EQ(sets[0].Z.cols(), 0);
  EXPECT_EQ(sets[1].Z.cols(), 11901);
  EXPECT_EQ(sets[2].Z.cols(), 0);
  EXPECT_EQ(sets[1].Ztilde - sets[1].Z, Eigen::MatrixXd::Constant(1, 11901, 100.0));
}

TEST(Snapshots, FastSwitchingYieldsNoPairs) {
  const kmpc::InputSchedule sched{kControls, 0.25};
  const auto controls = sched.per_interval(12000, 0.005);
  const std::vector<std::vector<Eigen::VectorXd>> obs{index_observations(12001)};
  const auto sets = kmpc::snapshots_from_observed_runs(obs, {controls}, kControls, 0.005, 0.5, 1, true);
  for (const auto& s : sets) EXPECT_EQ(s.Z.cols(), 0);
  EXPECT_THROW(kmpc::snapshots_from_observed_runs(obs, {controls}, kControls, 0.005, 0.5), kmpc::ValidationError);
}

TEST(Snapshots, TwelveRunBookkeeping) {
  const kmpc::InputSchedule cycle{{0.075, 0.0, -0.075, -0.075, 0.0, 0.075}, 5.0};
  std::vector<std::vector<Eigen::VectorXd>> obs;
  std::vector<std::vector<double>> ctl;
  for (int ic = 0; ic < 3; ++ic) {
    for (double u : kControls) {
      obs.push_back(index_observations(12001));
      ctl.push_back(kmpc::InputSchedule::constant(u).per_interval(12000, 0.005));
    }
    obs.push_back(index_observations(12001));
    ctl.push_back(cycle.per_interval(12000, 0.005));
  }
  for (std::size_t stride : {1u, 100u}) {
    const auto sets = kmpc::snapshots_from_observed_runs(obs, ctl, kControls, 0.005, 0.5,
                                                         static_cast<long>(stride));
    for (std::size_t j = 0; j < kControls.size(); ++j) {
      std::size_t expect = 0;
      for (const auto& c : ctl) expect += eligible_count(c, kControls[j], 100, stride);
      EXPECT_EQ(static_cast<std::size_t>(sets[j].Z.cols()), expect) << "u=" << kControls[j];
      for (Eigen::Index c = 0; c < sets[j].Z.cols(); ++c) {
        const auto start = static_cast<std::size_t>(sets[j].Z(0, c));
        EXPECT_EQ(start % stride, 0u);
        EXPECT_EQ(sets[j].Ztilde(0, c), static_cast<double>(start + 100));
      }
    }
    if (stride == 100) EXPECT_EQ(sets[1].Z.cols(), 3 * (120 + eligible_count(ctl[3], 0.0, 100, 100)));
  }
}

TEST(Snapshots, StridedPairsAreSubset) {
  const kmpc::InputSchedule cycle{{0.075, 0.0, -0.075}, 2.0};
  const auto controls = cycle.per_interval(12000, 0.005);
  const std::vector<std::vector<Eigen::VectorXd>> obs{index_observations(12001)};
  const auto all = kmpc::snapshots_from_observed_runs(obs, {controls}, kControls, 0.005, 0.5, 1);
  const auto sub = kmpc::snapshots_from_observed_runs(obs, {controls}, kControls, 0.005, 0.5, 100);
  for (std::size_t j = 0; j < kControls.size(); ++j) {
    std::set<double> starts(all[j].Z.data(), all[j].Z.data() + all[j].Z.cols());
    for (Eigen::Index c = 0; c < sub[j].Z.cols(); ++c) EXPECT_TRUE(starts.count(sub[j].Z(0, c)));
    EXPECT_LT(sub[j].Z.cols(), all[j].Z.cols());
  }
}

TEST(Snapshots, GeneratedPairsMatchSimulation) {
  const kmpc::VanDerPolPlant p{{0.05}};
  const Eigen::VectorXd y0 = Eigen::Vector2d(1.0, 0.5);
  const std::vector<double> values{-1.0, 1.0};
  const kmpc::InputSchedule sched{{-1.0, 1.0}, 2.0};
  const std::vector<kmpc::CollectionRun> runs{{y0, sched}};
  const auto sets = kmpc::generate_snapshots(p, values, runs, 10.0, 0.05, 0.5);
  const auto tr = kmpc::simulate(p, y0, sched, 10.0, 0.05);
  EXPECT_EQ(sets[0].Z.cols(), 3 * 31);
  EXPECT_EQ(sets[1].Z.cols(), 2 * 31);
  for (const auto& s : sets) {
    for (Eigen::Index c = 0; c < s.Z.cols(); ++c) {
      const auto it = std::find_if(tr.states.begin(), tr.states.end(),
                                   [&](const Eigen::VectorXd& y) { return y == s.Z.col(c); });
      ASSERT_NE(it, tr.states.end());
      const auto i = static_cast<std::size_t>(it - tr.states.begin());
      EXPECT_EQ(tr.controls[i], s.control_value);
      EXPECT_EQ(tr.states[i + 10], s.Ztilde.col(c));
    }
  }
  const std::vector<kmpc::CollectionRun> bad{{y0, kmpc::InputSchedule::constant(0.5)}};
  EXPECT_THROW(kmpc::generate_snapshots(p, values, bad, 10.0, 0.05, 0.5), kmpc::ValidationError);
}
