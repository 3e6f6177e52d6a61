#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "kmpc/closed_loop.hpp"
#include "kmpc/dictionary.hpp"
#include "kmpc/edmd.hpp"
#include "kmpc/errors.hpp"
#include "kmpc/krom.hpp"
#include "kmpc/plant.hpp"

namespace kmpc::io {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Plain CSV tables (numeric cells, header row, empty cell = NaN)
// ---------------------------------------------------------------------------

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (header[c] == name) return c;
    }
    throw ValidationError("csv: missing column '" + name + "'");
  }
};

/// Shortest text that round-trips the double exactly; NaN becomes an empty cell.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_csv(const fs::path& path, const Table& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (std::size_t c = 0; c < t.header.size(); ++c) out << (c ? "," : "") << t.header[c];
  out << '\n';
  for (const auto& row : t.rows) {
    kmpc::detail::require(row.size() == t.header.size(), "csv: row width differs from header");
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << format_number(row[c]);
    out << '\n';
  }
  if (!out) throw ValidationError("write failed: " + path.string());
}

namespace detail {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

}  // namespace detail

inline Table read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: empty file " + path.string());
  for (auto& h : detail::split_line(line)) t.header.push_back(detail::trim(h));
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_line(line);
    if (cells.size() != t.header.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " cells, found " + std::to_string(cells.size()));
    }
    std::vector<double> row;
    row.reserve(cells.size());
    for (auto& c : cells) {
      c = detail::trim(c);
      if (c.empty()) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (end == c.c_str() || *end != '\0') {
        throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": not a number '" + c + "'");
      }
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("write failed: " + path.string());
}

inline json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

template <class T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ValidationError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(where + ": field '" + key + "': " + e.what());
  }
}

/// Resolves `p` against the directory of `base` unless it is absolute.
inline fs::path resolve(const fs::path& base, const fs::path& p) {
  return p.is_absolute() ? p : base.parent_path() / p;
}

// ---------------------------------------------------------------------------
// Models and ensembles
// ---------------------------------------------------------------------------

inline json model_to_json(const KoopmanModel& m) {
  json d;
  d["obs_dim"] = m.dict.obs_dim();
  d["max_degree"] = m.dict.max_degree();
  d["exponents"] = m.dict.exponents();
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(m.U_transpose.size()));
  for (Eigen::Index r = 0; r < m.U_transpose.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.U_transpose.cols(); ++c) flat.push_back(m.U_transpose(r, c));
  }
  return json{{"dictionary", d},
              {"lag_time_h", m.lag_time_h},
              {"control_value", m.control_value},
              {"U_transpose", flat},
              {"sample_count_m", m.sample_count}};
}

inline KoopmanModel model_from_json(const json& j, const std::string& where = "model") {
  const json d = get_field<json>(j, "dictionary", where);
  const auto q = get_field<std::size_t>(d, "obs_dim", where + ".dictionary");
  const auto exps = get_field<std::vector<Exponent>>(d, "exponents", where + ".dictionary");
  Dictionary dict(q, exps);
  if (d.contains("max_degree")) {
    kmpc::detail::require(get_field<int>(d, "max_degree", where) == dict.max_degree(),
                    where + ": max_degree disagrees with the exponents");
  }
  KoopmanModel m{dict, get_field<double>(j, "lag_time_h", where), get_field<double>(j, "control_value", where),
                 Eigen::MatrixXd(), get_field<long>(j, "sample_count_m", where)};
  const auto flat = get_field<std::vector<double>>(j, "U_transpose", where);
  const auto k = static_cast<Eigen::Index>(dict.size());
  kmpc::detail::require(flat.size() == static_cast<std::size_t>(k * k),
                  where + ": U_transpose has " + std::to_string(flat.size()) + " entries, expected " +
                      std::to_string(k * k));
  m.U_transpose.resize(k, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) m.U_transpose(r, c) = flat[static_cast<std::size_t>(r * k + c)];
  }
  kmpc::detail::require(m.lag_time_h > 0.0, where + ": lag_time_h must be positive");
  return m;
}

inline void write_model(const fs::path& path, const KoopmanModel& m) { write_json(path, model_to_json(m)); }

inline KoopmanModel read_model(const fs::path& path) { return model_from_json(read_json(path), path.string()); }

/// switched: a bank; bilinear: exactly two members; localized: two or more members.
struct Ensemble {
  std::string kind;
  std::vector<KoopmanModel> members;
};

inline void write_ensemble(const fs::path& path, const std::string& kind, const std::vector<fs::path>& member_files) {
  kmpc::detail::require(kind == "switched" || kind == "bilinear" || kind == "localized",
                  "ensemble: unknown kind '" + kind + "'");
  std::vector<std::string> files;
  for (const auto& f : member_files) files.push_back(f.generic_string());
  write_json(path, json{{"kind", kind}, {"members", files}});
}

inline Ensemble read_ensemble(const fs::path& path) {
  const json j = read_json(path);
  Ensemble e;
  e.kind = get_field<std::string>(j, "kind", path.string());
  kmpc::detail::require(e.kind == "switched" || e.kind == "bilinear" || e.kind == "localized",
                  path.string() + ": unknown ensemble kind '" + e.kind + "'");
  for (const auto& f : get_field<std::vector<std::string>>(j, "members", path.string())) {
    e.members.push_back(read_model(resolve(path, f)));
  }
  if (e.kind == "bilinear") {
    kmpc::detail::require(e.members.size() == 2, path.string() + ": a bilinear ensemble needs exactly two members");
  } else {
    kmpc::detail::require(e.members.size() >= 2, path.string() + ": an ensemble needs at least two members");
  }
  return e;
}

// ---------------------------------------------------------------------------
// Snapshot sets: CSV with z_<name> and zt_<name> columns plus a JSON sidecar
// ---------------------------------------------------------------------------

inline std::vector<std::string> default_obs_names(std::size_t q) {
  std::vector<std::string> n;
  for (std::size_t i = 0; i < q; ++i) n.push_back("z" + std::to_string(i));
  return n;
}

inline fs::path sidecar(const fs::path& csv) {
  fs::path p = csv;
  p.replace_extension(".json");
  return p;
}

inline void write_snapshots(const fs::path& csv, const SnapshotSet& s, std::vector<std::string> obs_names = {}) {
  const auto q = static_cast<std::size_t>(s.Z.rows());
  if (obs_names.empty()) obs_names = default_obs_names(q);
  kmpc::detail::require(obs_names.size() == q, "snapshots: obs_names length differs from observation dimension");
  Table t;
  for (const auto& n : obs_names) t.header.push_back(n);
  for (const auto& n : obs_names) t.header.push_back(n + "_next");
  for (Eigen::Index c = 0; c < s.Z.cols(); ++c) {
    std::vector<double> row;
    for (Eigen::Index r = 0; r < s.Z.rows(); ++r) row.push_back(s.Z(r, c));
    for (Eigen::Index r = 0; r < s.Z.rows(); ++r) row.push_back(s.Ztilde(r, c));
    t.rows.push_back(std::move(row));
  }
  write_csv(csv, t);
  write_json(sidecar(csv), json{{"lag_time_h", s.lag_time_h},
                                {"control_value", s.control_value},
                                {"obs_names", obs_names},
                                {"pairs", s.Z.cols()},
                                {"csv", csv.filename().generic_string()}});
}

inline SnapshotSet read_snapshots(const fs::path& csv) {
  const json meta = read_json(sidecar(csv));
  const std::string where = sidecar(csv).string();
  const auto names = get_field<std::vector<std::string>>(meta, "obs_names", where);
  const Table t = read_csv(csv);
  SnapshotSet s;
  s.lag_time_h = get_field<double>(meta, "lag_time_h", where);
  s.control_value = get_field<double>(meta, "control_value", where);
  const auto q = static_cast<Eigen::Index>(names.size());
  const auto m = static_cast<Eigen::Index>(t.rows.size());
  s.Z.resize(q, m);
  s.Ztilde.resize(q, m);
  for (Eigen::Index r = 0; r < q; ++r) {
    const auto cz = t.column(names[static_cast<std::size_t>(r)]);
    const auto ct = t.column(names[static_cast<std::size_t>(r)] + "_next");
    for (Eigen::Index c = 0; c < m; ++c) {
      s.Z(r, c) = t.rows[static_cast<std::size_t>(c)][cz];
      s.Ztilde(r, c) = t.rows[static_cast<std::size_t>(c)][ct];
    }
  }
  s.validate(names.size());
  return s;
}

// ---------------------------------------------------------------------------
// Trajectories: time, one column per state/observation entry, control
// ---------------------------------------------------------------------------

/// The control cell of the last row is empty (no interval follows the final sample).
inline void write_trajectory(const fs::path& csv, const Trajectory& tr, std::vector<std::string> names,
                             const std::string& columns_kind, const json& extra = json::object()) {
  tr.validate();
  const std::size_t n = tr.states.empty() ? names.size() : static_cast<std::size_t>(tr.states.front().size());
  if (names.empty()) names = default_obs_names(n);
  kmpc::detail::require(names.size() == n, "trajectory: column names differ from state dimension");
  Table t;
  t.header.push_back("time");
  for (const auto& nm : names) t.header.push_back(nm);
  t.header.push_back("control");
  for (std::size_t k = 0; k < tr.states.size(); ++k) {
    std::vector<double> row{tr.times[k]};
    for (Eigen::Index i = 0; i < tr.states[k].size(); ++i) row.push_back(tr.states[k](i));
    row.push_back(k < tr.controls.size() ? tr.controls[k] : std::numeric_limits<double>::quiet_NaN());
    t.rows.push_back(std::move(row));
  }
  write_csv(csv, t);
  json meta = extra;
  meta["columns"] = columns_kind;
  meta["names"] = names;
  meta["samples"] = tr.states.size();
  meta["csv"] = csv.filename().generic_string();
  write_json(sidecar(csv), meta);
}

struct ImportedTrajectory {
  Trajectory trajectory;
  std::vector<std::string> names;
  std::string columns_kind;
};

/**
 * Reads a trajectory CSV (and its sidecar manifest when present). Without a
 * manifest every column between "time" and "control" is taken as an
 * observation entry.
 */
inline ImportedTrajectory read_trajectory(const fs::path& csv) {
  const Table t = read_csv(csv);
  ImportedTrajectory out;
  out.columns_kind = "observation";
  if (fs::exists(sidecar(csv))) {
    const json meta = read_json(sidecar(csv));
    out.names = get_field<std::vector<std::string>>(meta, "names", sidecar(csv).string());
    if (meta.contains("columns")) out.columns_kind = meta.at("columns").get<std::string>();
  } else {
    for (const auto& h : t.header) {
      if (h != "time" && h != "control") out.names.push_back(h);
    }
  }
  const auto ct = t.column("time");
  const auto cu = t.column("control");
  std::vector<std::size_t> cols;
  for (const auto& nm : out.names) cols.push_back(t.column(nm));
  auto& tr = out.trajectory;
  for (std::size_t k = 0; k < t.rows.size(); ++k) {
    const auto& row = t.rows[k];
    tr.times.push_back(row[ct]);
    Eigen::VectorXd s(static_cast<Eigen::Index>(cols.size()));
    for (std::size_t i = 0; i < cols.size(); ++i) s(static_cast<Eigen::Index>(i)) = row[cols[i]];
    tr.states.push_back(std::move(s));
    if (k + 1 < t.rows.size()) {
      kmpc::detail::require(std::isfinite(row[cu]), csv.string() + ": missing control before the last row");
      tr.controls.push_back(row[cu]);
    }
  }
  tr.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Closed-loop traces
// ---------------------------------------------------------------------------

inline Table trace_table(const ClosedLoopResult& r, const std::vector<std::string>& obs_names,
                         bool record_timing = true) {
  Table t;
  t.header = {"t", "u"};
  for (const auto& n : obs_names) t.header.push_back(n);
  const std::size_t n_ref = r.rows.empty() ? 0 : static_cast<std::size_t>(r.rows.front().reference.size());
  for (std::size_t i = 0; i < n_ref; ++i) t.header.push_back("ref" + std::to_string(i));
  for (const char* h : {"stage_cost", "window_cost", "solve_seconds"}) t.header.emplace_back(h);
  for (const auto& row : r.rows) {
    kmpc::detail::require(static_cast<std::size_t>(row.z.size()) == obs_names.size(),
                    "trace: observation names differ from observation dimension");
    std::vector<double> v{row.t, row.u};
    for (Eigen::Index i = 0; i < row.z.size(); ++i) v.push_back(row.z(i));
    for (Eigen::Index i = 0; i < row.reference.size(); ++i) v.push_back(row.reference(i));
    v.push_back(row.stage_cost);
    v.push_back(row.window_cost);
    v.push_back(record_timing ? row.solve_seconds : 0.0);
    t.rows.push_back(std::move(v));
  }
  return t;
}

}  // namespace kmpc::io
