// Van der Pol tracking with a continuous input through the localized bilinear K-ROM.

#include <cstdio>

#include <kmpc/kmpc.hpp>

int main() {
  const kmpc::VanDerPolPlant plant;
  const std::vector<double> anchors{-1.0, 0.0, 1.0};

  std::vector<kmpc::CollectionRun> runs;
  for (const auto& y0 : {Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(-0.5, 0.5), Eigen::Vector2d(0.0, -1.5)}) {
    for (double u : anchors) runs.push_back({y0, kmpc::InputSchedule::constant(u)});
  }
  const auto sets = kmpc::generate_snapshots(plant, anchors, runs, 40.0, 0.05, 0.5);
  const auto models = kmpc::fit_models(sets, 3, kmpc::kDefaultPinvRtol);
  const kmpc::LocalizedBilinear surrogate{kmpc::SwitchedBank(models)};
  std::printf("%zu anchors, k = %zu\n", anchors.size(), models.front().size());

  kmpc::MpcConfig mpc;
  mpc.horizon = 4;
  mpc.sample_time = 0.5;
  mpc.tracked = {0};
  mpc.reference = [](double t) { return Eigen::VectorXd::Constant(1, t < 10.0 ? 0.5 : -0.5); };

  kmpc::ContinuousKromController ctl(surrogate);
  const auto res = kmpc::closed_loop(plant, ctl, mpc, Eigen::Vector2d(1.0, 0.0), 20.0, 5.0);
  std::printf("\n%6s %8s %9s %9s %8s\n", "t", "u", "x1", "ref", "J_5s");
  for (const auto& r : res.rows) {
    std::printf("%6.1f %+8.3f %+9.4f %+9.4f %8.4f\n", r.t, r.u, r.z(0), r.reference(0), r.window_cost);
  }
  std::printf("\ntotal cost %.4f, mean solve %.2e s\n", res.total_cost(), res.mean_solve_seconds());
}
