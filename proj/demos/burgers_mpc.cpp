// Burgers tracking with a switched K-ROM controller next to the plant-as-predictor baseline.

#include <cstdio>

#include <kmpc/kmpc.hpp>

int main() {
  const auto cfg = kmpc::default_config();
  const auto plant = kmpc::make_plant(cfg);

  const auto sets = kmpc::collect_snapshots(cfg);
  for (const auto& s : sets) std::printf("u = %+.3f: %ld pairs\n", s.control_value, static_cast<long>(s.size()));

  const auto models = kmpc::fit_models(sets, cfg.degree, cfg.pinv_rtol);
  std::printf("degree %d dictionary, k = %zu\n", cfg.degree, models.front().size());

  const auto out = kmpc::run_experiment(cfg, plant, models);
  std::printf("\n%6s %8s %8s %10s %10s\n", "t", "u_krom", "u_full", "z0_krom", "ref");
  for (std::size_t k = 0; k < out.krom.rows.size(); k += 10) {
    const auto& a = out.krom.rows[k];
    const auto& b = out.oracle->rows[k];
    std::printf("%6.1f %+8.3f %+8.3f %+10.4f %+10.4f\n", a.t, a.u, b.u, a.z(0), a.reference(0));
  }
  std::printf("\ntotal cost: K-ROM %.4f, full model %.4f\n", out.krom.total_cost(), out.oracle->total_cost());
  std::printf("mean solve time: K-ROM %.2e s, full model %.2e s\n", out.krom.mean_solve_seconds(),
              out.oracle->mean_solve_seconds());
  std::printf("delta J = %.4f\n", *out.delta_j);
}
