// kmpc: data collection, EDMD fitting, closed-loop runs, sweeps and trace audits.

#include <CLI11.hpp>
#include <kmpc/kmpc.hpp>

#include <cmath>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using kmpc::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  unsigned jobs = 1;
};

void add_common(CLI::App* sub, CommonArgs& a) {
  sub->add_option("--config", a.config, "JSON config file (defaults are used for missing keys)");
  sub->add_option("--seed", a.seed, "RNG seed (overrides the config)");
  sub->add_option("--out-dir", a.out_dir, "output directory (overrides output.dir)");
  sub->add_option("--jobs", a.jobs, "worker threads for sweeps")->check(CLI::PositiveNumber);
  sub->allow_extras();
}

/// Defaults, then the config file, then --key=value overrides, then the dedicated flags.
kmpc::ExperimentConfig resolve_config(const CommonArgs& a, const std::vector<std::string>& extras) {
  json j = kmpc::default_config_json();
  if (!a.config.empty()) j = kmpc::merge_config(j, kmpc::io::read_json(a.config));
  for (const auto& arg : extras) {
    if (arg.rfind("--", 0) != 0 || arg.find('=') == std::string::npos) {
      throw kmpc::ValidationError("unrecognized argument '" + arg + "' (config overrides look like --key=value)");
    }
    const auto eq = arg.find('=');
    kmpc::apply_override(j, arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
  if (a.seed) j["seed"] = *a.seed;
  if (!a.out_dir.empty()) j["output"]["dir"] = a.out_dir;
  return kmpc::parse_config(j);
}

std::string control_tag(std::size_t j) { return "u" + std::to_string(j); }

fs::path collect_manifest_path(const kmpc::ExperimentConfig& c) {
  return c.snapshots.empty() ? fs::path(c.out_dir) / "collect.json" : fs::path(c.snapshots);
}

std::vector<kmpc::SnapshotSet> read_collected(const fs::path& manifest) {
  if (!fs::exists(manifest)) {
    throw kmpc::ValidationError("no snapshot manifest at " + manifest.string() + "; run `kmpc collect` first");
  }
  const json m = kmpc::io::read_json(manifest);
  std::vector<kmpc::SnapshotSet> sets;
  for (const auto& s : m.at("sets")) {
    sets.push_back(kmpc::io::read_snapshots(kmpc::io::resolve(manifest, s.at("file").get<std::string>())));
  }
  return sets;
}

/// The fit subsample: stream (seed, 0) per control, shared by fit and online runs.
std::vector<kmpc::SnapshotSet> training_sets(const kmpc::ExperimentConfig& c) {
  return kmpc::subsample_all(read_collected(collect_manifest_path(c)), c.data_volume, c.seed, 0);
}

// ---------------------------------------------------------------------------

int cmd_collect(const kmpc::ExperimentConfig& c, const std::string& config_path) {
  const fs::path out(c.out_dir);
  fs::create_directories(out / "snapshots");
  const auto sets = kmpc::collect_snapshots(c, config_path);
  const std::size_t q = static_cast<std::size_t>(sets.front().Z.rows());
  const auto names = kmpc::io::default_obs_names(q);
  json manifest{{"config", c.resolved}, {"seed", c.seed}, {"sets", json::array()}};
  long total = 0;
  for (std::size_t j = 0; j < sets.size(); ++j) {
    const fs::path rel = fs::path("snapshots") / (control_tag(j) + ".csv");
    kmpc::io::write_snapshots(out / rel, sets[j], names);
    manifest["sets"].push_back(
        {{"file", rel.generic_string()}, {"control_value", sets[j].control_value}, {"pairs", sets[j].size()}});
    total += static_cast<long>(sets[j].size());
    std::cout << "u = " << kmpc::io::format_number(sets[j].control_value) << ": " << sets[j].size() << " pairs\n";
  }
  manifest["total_pairs"] = total;

  if (c.export_trajectories && c.plant_kind != "imported") {
    fs::create_directories(out / "trajectories");
    const auto plant = kmpc::make_plant(c);
    const auto runs = kmpc::collection_runs(c, plant);
    manifest["trajectories"] = json::array();
    for (std::size_t r = 0; r < runs.size(); ++r) {
      const fs::path rel = fs::path("trajectories") / ("run" + std::to_string(r) + ".csv");
      std::visit(
          [&](const auto& p) {
            auto tr = kmpc::simulate(p, runs[r].y0, runs[r].schedule, c.collect_duration, c.dt_sample);
            for (auto& y : tr.states) y = p.observe(y);
            kmpc::io::write_trajectory(out / rel, tr, names, "observation",
                                       json{{"dt_sample", c.dt_sample}, {"run", r}});
          },
          plant);
      manifest["trajectories"].push_back(rel.generic_string());
    }
  }
  kmpc::io::write_json(out / "collect.json", manifest);
  std::cout << "total pairs: " << total << "\n";
  return kExitOk;
}

int cmd_fit(const kmpc::ExperimentConfig& c) {
  const fs::path out(c.out_dir);
  fs::create_directories(out / "models");
  const auto sets = training_sets(c);
  const auto models = kmpc::fit_models(sets, c.degree, c.pinv_rtol);
  std::vector<fs::path> files;
  json manifest{{"config", c.resolved}, {"seed", c.seed}, {"degree", c.degree},
                {"k", models.front().size()}, {"models", json::array()}};
  for (std::size_t j = 0; j < models.size(); ++j) {
    const fs::path rel = fs::path("models") / ("model_" + control_tag(j) + ".json");
    kmpc::io::write_model(out / rel, models[j]);
    files.push_back(rel);
    manifest["models"].push_back({{"file", rel.generic_string()},
                                  {"control_value", models[j].control_value},
                                  {"sample_count_m", models[j].sample_count}});
  }
  std::string kind = "switched";
  if (c.surrogate == "continuous") kind = models.size() == 2 ? "bilinear" : "localized";
  kmpc::io::write_ensemble(out / "ensemble.json", kind, files);
  manifest["ensemble"] = "ensemble.json";
  manifest["ensemble_kind"] = kind;
  kmpc::io::write_json(out / "fit.json", manifest);
  std::cout << models.size() << " models, degree " << c.degree << ", k = " << models.front().size()
            << ", ensemble " << kind << "\n";
  return kExitOk;
}

json loop_summary(const kmpc::ClosedLoopResult& r, bool timing) {
  json s{{"steps", r.rows.size()}, {"total_cost", r.total_cost()}};
  s["mean_solve_seconds"] = timing ? json(r.mean_solve_seconds()) : json(nullptr);
  return s;
}

int cmd_run(const kmpc::ExperimentConfig& c) {
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  const fs::path ens_path = c.ensemble.empty() ? out / "ensemble.json" : fs::path(c.ensemble);
  if (!fs::exists(ens_path)) {
    throw kmpc::ValidationError("no ensemble at " + ens_path.string() + "; run `kmpc fit` first");
  }
  const auto ensemble = kmpc::io::read_ensemble(ens_path);
  const auto plant = kmpc::make_plant(c);
  std::optional<std::vector<kmpc::SnapshotSet>> online_data;
  if (c.online) online_data = training_sets(c);
  const auto outcome = kmpc::run_experiment(c, plant, ensemble.members, online_data ? &*online_data : nullptr);

  const auto names = kmpc::io::default_obs_names(kmpc::plant_obs_dim(plant));
  kmpc::io::write_csv(out / "trace_krom.csv", kmpc::io::trace_table(outcome.krom, names, c.record_timing));
  json manifest{{"config", c.resolved},
                {"seed", c.seed},
                {"ensemble", fs::absolute(ens_path).lexically_normal().generic_string()},
                {"ensemble_kind", ensemble.kind},
                {"surrogate", c.surrogate},
                {"traces", {{"krom", "trace_krom.csv"}}},
                {"krom", loop_summary(outcome.krom, c.record_timing)}};
  json updates = json::array();
  for (const auto& u : outcome.krom.updates) updates.push_back({{"time", u.time}, {"sample_counts", u.sample_counts}});
  manifest["updates"] = updates;
  std::cout << "K-ROM total cost " << kmpc::io::format_number(outcome.krom.total_cost());
  if (c.record_timing) std::cout << ", mean solve " << outcome.krom.mean_solve_seconds() << " s";
  std::cout << "\n";
  if (outcome.oracle) {
    kmpc::io::write_csv(out / "trace_oracle.csv", kmpc::io::trace_table(*outcome.oracle, names, c.record_timing));
    manifest["traces"]["oracle"] = "trace_oracle.csv";
    manifest["oracle"] = loop_summary(*outcome.oracle, c.record_timing);
    manifest["delta_j"] = *outcome.delta_j;
    std::cout << "oracle total cost " << kmpc::io::format_number(outcome.oracle->total_cost());
    if (c.record_timing) std::cout << ", mean solve " << outcome.oracle->mean_solve_seconds() << " s";
    std::cout << "\ndelta J " << kmpc::io::format_number(*outcome.delta_j) << "\n";
  }
  kmpc::io::write_json(out / "run.json", manifest);
  return kExitOk;
}

int cmd_sweep(const kmpc::ExperimentConfig& c, unsigned jobs, const std::string& config_path) {
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  const auto sets = kmpc::collect_snapshots(c, config_path);
  const auto res = kmpc::run_sweep(c, sets, jobs);
  kmpc::io::write_csv(out / "sweep.csv", kmpc::sweep_table(res));
  json cells = json::array();
  int failed = 0;
  for (const auto& r : res.rows) {
    json cell{{"degree", r.degree}, {"volume", r.volume}, {"k", r.k}, {"ok", r.ok}};
    if (r.ok) {
      cell["total_cost"] = r.total_cost;
      cell["delta_j"] = r.delta_j;
    } else {
      cell["error"] = r.message;
      ++failed;
    }
    cells.push_back(cell);
    std::cout << "degree " << r.degree << " volume " << r.volume << ": "
              << (r.ok ? "total cost " + kmpc::io::format_number(r.total_cost) : "failed: " + r.message) << "\n";
  }
  kmpc::io::write_json(out / "sweep.json", json{{"config", c.resolved},
                                                {"seed", c.seed},
                                                {"table", "sweep.csv"},
                                                {"oracle_total_cost", res.oracle.total_cost()},
                                                {"cells", cells},
                                                {"failed_cells", failed}});
  std::cout << "oracle total cost " << kmpc::io::format_number(res.oracle.total_cost()) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// audit: recompute every summary number from the exported tables

struct Auditor {
  int checks = 0;
  int mismatches = 0;

  void expect(const std::string& what, double recomputed, double recorded) {
    ++checks;
    const double tol = 1e-9 * std::max(1.0, std::abs(recorded));
    if (!(std::abs(recomputed - recorded) <= tol)) {
      ++mismatches;
      std::cout << "MISMATCH " << what << ": recorded " << kmpc::io::format_number(recorded) << ", recomputed "
                << kmpc::io::format_number(recomputed) << "\n";
    }
  }
};

struct TraceAudit {
  double total = 0.0;
  double mean_solve = 0.0;
  kmpc::CostTrace costs;
};

TraceAudit audit_trace(const fs::path& csv, const json& cfg, Auditor& a) {
  const kmpc::io::Table t = kmpc::io::read_csv(csv);
  const auto cols = t.column("stage_cost");
  std::vector<std::size_t> tracked = cfg.at("mpc").at("tracked").get<std::vector<std::size_t>>();
  std::size_t q = 0;
  while (std::find(t.header.begin(), t.header.end(), "z" + std::to_string(q)) != t.header.end()) ++q;
  if (tracked.empty()) {
    for (std::size_t i = 0; i < q; ++i) tracked.push_back(i);
  }
  const double window = cfg.at("mpc").at("window").get<double>();
  TraceAudit r;
  const auto ct = t.column("t");
  const auto cw = t.column("window_cost");
  const auto cs = t.column("solve_seconds");
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    double stage = 0.0;
    for (std::size_t i = 0; i < tracked.size(); ++i) {
      const double e = row[t.column("z" + std::to_string(tracked[i]))] - row[t.column("ref" + std::to_string(i))];
      stage += e * e;
    }
    a.expect(csv.filename().string() + " row " + std::to_string(k) + " stage_cost", stage, row[cols]);
    r.costs.times.push_back(row[ct]);
    r.costs.costs.push_back(row[cols]);
    const double w = kmpc::running_cost_window(r.costs, row[ct], std::min(window, row[ct]));
    a.expect(csv.filename().string() + " row " + std::to_string(k) + " window_cost", w, row[cw]);
    r.total += row[cols];
    r.mean_solve += row[cs];
  }
  if (!t.rows.empty()) r.mean_solve /= static_cast<double>(t.rows.size());
  return r;
}

double integrated_abs_difference(const kmpc::CostTrace& a, const kmpc::CostTrace& b) {
  kmpc::detail::require(a.times.size() == b.times.size(), "audit: traces have different lengths");
  double s = 0.0;
  for (std::size_t k = 0; k + 1 < a.times.size(); ++k) {
    const double d0 = std::abs(a.costs[k] - b.costs[k]);
    const double d1 = std::abs(a.costs[k + 1] - b.costs[k + 1]);
    s += 0.5 * (a.times[k + 1] - a.times[k]) * (d0 + d1);
  }
  return s;
}

int cmd_audit(const kmpc::ExperimentConfig& c) {
  const fs::path out(c.out_dir);
  Auditor a;
  bool any = false;
  if (fs::exists(out / "collect.json")) {
    any = true;
    const json m = kmpc::io::read_json(out / "collect.json");
    double total = 0.0;
    for (const auto& s : m.at("sets")) {
      const auto t = kmpc::io::read_csv(out / s.at("file").get<std::string>());
      a.expect(s.at("file").get<std::string>() + " pairs", static_cast<double>(t.rows.size()),
               s.at("pairs").get<double>());
      total += static_cast<double>(t.rows.size());
    }
    a.expect("collect total_pairs", total, m.at("total_pairs").get<double>());
  }
  if (fs::exists(out / "fit.json")) {
    any = true;
    const json m = kmpc::io::read_json(out / "fit.json");
    for (const auto& f : m.at("models")) {
      const auto model = kmpc::io::read_model(out / f.at("file").get<std::string>());
      a.expect(f.at("file").get<std::string>() + " k", static_cast<double>(model.size()), m.at("k").get<double>());
      a.expect(f.at("file").get<std::string>() + " sample_count_m", static_cast<double>(model.sample_count),
               f.at("sample_count_m").get<double>());
    }
  }
  if (fs::exists(out / "run.json")) {
    any = true;
    const json m = kmpc::io::read_json(out / "run.json");
    const json& cfg = m.at("config");
    const auto krom = audit_trace(out / m.at("traces").at("krom").get<std::string>(), cfg, a);
    a.expect("krom total_cost", krom.total, m.at("krom").at("total_cost").get<double>());
    a.expect("krom steps", static_cast<double>(krom.costs.times.size()), m.at("krom").at("steps").get<double>());
    if (!m.at("krom").at("mean_solve_seconds").is_null()) {
      a.expect("krom mean_solve_seconds", krom.mean_solve, m.at("krom").at("mean_solve_seconds").get<double>());
    }
    if (m.at("traces").contains("oracle")) {
      const auto oracle = audit_trace(out / m.at("traces").at("oracle").get<std::string>(), cfg, a);
      a.expect("oracle total_cost", oracle.total, m.at("oracle").at("total_cost").get<double>());
      if (!m.at("oracle").at("mean_solve_seconds").is_null()) {
        a.expect("oracle mean_solve_seconds", oracle.mean_solve,
                 m.at("oracle").at("mean_solve_seconds").get<double>());
      }
      a.expect("delta_j", integrated_abs_difference(krom.costs, oracle.costs), m.at("delta_j").get<double>());
    }
  }
  if (fs::exists(out / "sweep.json")) {
    any = true;
    const json m = kmpc::io::read_json(out / "sweep.json");
    const auto t = kmpc::io::read_csv(out / m.at("table").get<std::string>());
    const auto& cells = m.at("cells");
    kmpc::detail::require(cells.size() == t.rows.size(), "audit: sweep table and manifest differ in length");
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& row = t.rows[i];
      const std::string tag = "sweep cell " + std::to_string(i);
      a.expect(tag + " degree", row[t.column("degree")], cells[i].at("degree").get<double>());
      a.expect(tag + " volume", row[t.column("volume")], cells[i].at("volume").get<double>());
      a.expect(tag + " oracle_cost", row[t.column("oracle_cost")], m.at("oracle_total_cost").get<double>());
      if (cells[i].at("ok").get<bool>()) {
        a.expect(tag + " total_cost", row[t.column("total_cost")], cells[i].at("total_cost").get<double>());
        a.expect(tag + " delta_j", row[t.column("delta_j")], cells[i].at("delta_j").get<double>());
      }
    }
  }
  if (!any) throw kmpc::ValidationError("nothing to audit in " + out.string());
  std::cout << a.checks << " checks, " << a.mismatches << " mismatches\n";
  return a.mismatches == 0 ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman reduced-order models for model predictive control"};
  app.require_subcommand(1);
  CommonArgs args;
  auto* collect = app.add_subcommand("collect", "simulate the plant and write per-control snapshot sets");
  auto* fit = app.add_subcommand("fit", "fit one K-ROM per control and write the ensemble");
  auto* run = app.add_subcommand("run", "closed-loop MPC with the fitted surrogate (and the plant baseline)");
  auto* sweep = app.add_subcommand("sweep", "closed-loop cost over a (degree, data volume) grid");
  auto* audit = app.add_subcommand("audit", "recompute manifest numbers from the exported tables");
  for (auto* sub : {collect, fit, run, sweep, audit}) add_common(sub, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const auto cfg = resolve_config(args, sub->remaining());
    if (sub == collect) return cmd_collect(cfg, args.config);
    if (sub == fit) return cmd_fit(cfg);
    if (sub == run) return cmd_run(cfg);
    if (sub == sweep) return cmd_sweep(cfg, args.jobs, args.config);
    return cmd_audit(cfg);
  } catch (const kmpc::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const kmpc::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}
