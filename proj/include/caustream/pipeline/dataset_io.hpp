#pragma once

// Dataset directory format:
//   forcings.csv    date,station_id,<forcing names...>
//   streamflow.csv  date,station_id,q
//   mask.json       {"station": ["downstream station", ...], ...}
//   schema.json     dimensions, station ids, forcing names
// Synthetic datasets additionally carry truth_graphs.json and truth_runoff.csv.
//
// Missing values (empty cells, NaN) and missing calendar days are filled by
// linear interpolation when a run is at most `max_interpolated_gap` days;
// longer missing-value runs mark the affected days unusable, and longer
// calendar gaps are a load error.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "caustream/core/io.hpp"
#include "caustream/graph/aggregate.hpp"
#include "caustream/scm/generator.hpp"
#include "json.hpp"

namespace caustream::pipeline {

namespace fs = std::filesystem;

struct GapPolicy {
  Index max_interpolated_gap = 3;
};

struct GapEvent {
  std::string station, variable;
  std::string first_date;
  Index length = 0;
  bool interpolated = false;  // false: days marked unusable
};

struct LoadedDataset {
  scm::SpatioTemporalDataset dataset;
  std::vector<GapEvent> gaps;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline Table read_csv(const fs::path& path) {
  std::stringstream in(io::read_file(path));
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw LoadError(path.string() + " is empty");
  t.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw LoadError(path.filename().string() + ": row with " + std::to_string(cells.size()) +
                      " cells, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double parse_cell(const std::string& s) {
  if (s.empty() || s == "NaN" || s == "nan" || s == "NA") return std::nan("");
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw InputError("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw InputError("bad number '" + s + "'");
  }
}

/// Fills NaN runs in place. Returns the runs found (start index, length).
inline std::vector<std::pair<Index, Index>> fill_gaps(Eigen::Ref<Eigen::VectorXd> v, Index max_gap,
                                                      std::vector<bool>& unusable) {
  std::vector<std::pair<Index, Index>> runs;
  const Index n = v.size();
  for (Index i = 0; i < n;) {
    if (!std::isnan(v(i))) {
      ++i;
      continue;
    }
    Index j = i;
    while (j < n && std::isnan(v(j))) ++j;
    runs.emplace_back(i, j - i);
    const bool left = i > 0, right = j < n;
    for (Index k = i; k < j; ++k) {
      if (left && right) {
        const double w = static_cast<double>(k - i + 1) / static_cast<double>(j - i + 1);
        v(k) = (1.0 - w) * v(i - 1) + w * v(j);
      } else if (left) {
        v(k) = v(i - 1);
      } else if (right) {
        v(k) = v(j);
      } else {
        throw LoadError("series has no observed values");
      }
    }
    // Edge runs cannot be interpolated; they are held constant and dropped.
    if (j - i > max_gap || !left || !right)
      for (Index k = i; k < j; ++k) unusable[static_cast<std::size_t>(k)] = true;
    i = j;
  }
  return runs;
}

}  // namespace detail

inline nlohmann::json schema_json(const scm::DatasetSchema& s) {
  return {{"n_stations", s.n_stations},   {"n_forcings", s.n_forcings},     {"runoff_dim", s.runoff_dim},
          {"max_lag", s.max_lag},         {"n_timesteps", s.n_timesteps},   {"station_ids", s.station_ids},
          {"forcing_names", s.forcing_names}};
}

inline scm::DatasetSchema schema_from_json(const nlohmann::json& j) {
  scm::DatasetSchema s;
  try {
    s.n_stations = j.at("n_stations").get<Index>();
    s.n_forcings = j.at("n_forcings").get<Index>();
    s.runoff_dim = j.value("runoff_dim", Index{2});
    s.max_lag = j.value("max_lag", Index{1});
    s.n_timesteps = j.value("n_timesteps", Index{0});
    s.station_ids = j.at("station_ids").get<std::vector<std::string>>();
    s.forcing_names = j.at("forcing_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("schema.json: ") + e.what());
  }
  return s;
}

inline nlohmann::json mask_json(const Matrix& mask, const std::vector<std::string>& ids) {
  nlohmann::json j = nlohmann::json::object();
  for (Index j_src = 0; j_src < mask.cols(); ++j_src) {
    std::vector<std::string> down;
    for (Index k = 0; k < mask.rows(); ++k)
      if (k != j_src && mask(k, j_src) != 0.0) down.push_back(ids[static_cast<std::size_t>(k)]);
    j[ids[static_cast<std::size_t>(j_src)]] = down;
  }
  return j;
}

inline Matrix mask_from_json(const nlohmann::json& j, const std::vector<std::string>& ids) {
  std::map<std::string, Index> pos;
  for (std::size_t i = 0; i < ids.size(); ++i) pos[ids[i]] = static_cast<Index>(i);
  const Index n = static_cast<Index>(ids.size());
  Matrix m = Matrix::Identity(n, n);
  if (!j.is_object()) throw SchemaError("mask.json must be an object of adjacency lists");
  for (const auto& [src, downs] : j.items()) {
    auto it = pos.find(src);
    if (it == pos.end()) throw SchemaError("mask.json names unknown station " + src);
    for (const auto& d : downs) {
      const auto name = d.get<std::string>();
      auto jt = pos.find(name);
      if (jt == pos.end()) throw SchemaError("mask.json names unknown station " + name);
      m(jt->second, it->second) = 1.0;
    }
  }
  return m;
}

inline std::string forcings_csv(const scm::SpatioTemporalDataset& ds) {
  std::ostringstream os;
  os << "date,station_id";
  for (const auto& f : ds.schema.forcing_names) os << ',' << f;
  os << '\n';
  for (Index t = 0; t < ds.times(); ++t)
    for (Index k = 0; k < ds.stations(); ++k) {
      os << format_date(ds.timestamps[static_cast<std::size_t>(t)]) << ',' << ds.schema.station_ids[static_cast<std::size_t>(k)];
      for (Index i = 0; i < ds.schema.n_forcings; ++i) os << ',' << io::format_double(ds.forcings(t, k, i));
      os << '\n';
    }
  return os.str();
}

inline std::string streamflow_csv(const scm::SpatioTemporalDataset& ds) {
  std::ostringstream os;
  os << "date,station_id,q\n";
  for (Index t = 0; t < ds.times(); ++t)
    for (Index k = 0; k < ds.stations(); ++k)
      os << format_date(ds.timestamps[static_cast<std::size_t>(t)]) << ','
         << ds.schema.station_ids[static_cast<std::size_t>(k)] << ',' << io::format_double(ds.streamflow(t, k)) << '\n';
  return os.str();
}

inline nlohmann::json truth_json(const scm::GroundTruthScm& truth, const scm::DatasetSchema& s) {
  nlohmann::json j;
  j["forcing"] = graph::graph_json("forcing", s.forcing_names, truth.forcing_dag.slices, truth.forcing_dag, nlohmann::json::object());
  j["routing"] = graph::graph_json("routing", s.station_ids, truth.routing_weights, truth.routing_dag, nlohmann::json::object());
  return j;
}

inline std::string truth_runoff_csv(const Panel& r, const scm::SpatioTemporalDataset& ds) {
  std::ostringstream os;
  os << "date,station_id";
  for (Index i = 0; i < r.features(); ++i) os << ",r" << i;
  os << '\n';
  for (Index t = 0; t < r.times(); ++t)
    for (Index k = 0; k < r.stations(); ++k) {
      os << format_date(ds.timestamps[static_cast<std::size_t>(t)]) << ',' << ds.schema.station_ids[static_cast<std::size_t>(k)];
      for (Index i = 0; i < r.features(); ++i) os << ',' << io::format_double(r(t, k, i));
      os << '\n';
    }
  return os.str();
}

inline void write_dataset(const fs::path& dir, const scm::SpatioTemporalDataset& ds) {
  ds.validate();
  io::write_atomic(dir / "forcings.csv", forcings_csv(ds));
  io::write_atomic(dir / "streamflow.csv", streamflow_csv(ds));
  io::write_atomic(dir / "mask.json", mask_json(ds.river_mask, ds.schema.station_ids).dump(2) + "\n");
  io::write_atomic(dir / "schema.json", schema_json(ds.schema).dump(2) + "\n");
}

inline void write_generated(const fs::path& dir, const scm::GeneratedData& g) {
  write_dataset(dir, g.dataset);
  io::write_atomic(dir / "truth_graphs.json", truth_json(g.truth, g.dataset.schema).dump(2) + "\n");
  io::write_atomic(dir / "truth_runoff.csv", truth_runoff_csv(g.truth_runoff, g.dataset));
}

/// Reads truth_runoff.csv into a T x N x d_r panel aligned with `ds`.
inline Panel load_truth_runoff(const fs::path& dir, const scm::SpatioTemporalDataset& ds) {
  auto t = detail::read_csv(dir / "truth_runoff.csv");
  const Index dr = static_cast<Index>(t.header.size()) - 2;
  std::map<std::string, Index> spos, tpos;
  for (std::size_t i = 0; i < ds.schema.station_ids.size(); ++i) spos[ds.schema.station_ids[i]] = static_cast<Index>(i);
  for (std::size_t i = 0; i < ds.timestamps.size(); ++i) tpos[format_date(ds.timestamps[i])] = static_cast<Index>(i);
  Panel p(ds.times(), ds.stations(), dr, std::nan(""));
  for (const auto& row : t.rows) {
    auto ti = tpos.find(row[0]);
    auto si = spos.find(row[1]);
    if (ti == tpos.end() || si == spos.end()) continue;
    for (Index i = 0; i < dr; ++i) p(ti->second, si->second, i) = detail::parse_cell(row[static_cast<std::size_t>(i + 2)]);
  }
  return p;
}

inline scm::GroundTruthScm load_truth_graphs(const fs::path& dir) {
  auto j = nlohmann::json::parse(io::read_file(dir / "truth_graphs.json"));
  scm::GroundTruthScm g;
  for (const auto& s : j.at("forcing").at("binary")) g.forcing_dag.slices.push_back(graph::matrix_from_json(s));
  for (const auto& s : j.at("routing").at("binary")) g.routing_dag.slices.push_back(graph::matrix_from_json(s));
  return g;
}

inline LoadedDataset load_dataset(const fs::path& dir, const GapPolicy& policy = {}) {
  for (const char* f : {"forcings.csv", "streamflow.csv", "mask.json", "schema.json"})
    if (!fs::exists(dir / f)) throw LoadError(std::string("missing ") + f + " in " + dir.string());
  scm::DatasetSchema schema;
  try {
    schema = schema_from_json(nlohmann::json::parse(io::read_file(dir / "schema.json")));
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("schema.json: ") + e.what());
  }
  const auto& ids = schema.station_ids;
  std::map<std::string, Index> spos;
  for (std::size_t i = 0; i < ids.size(); ++i) spos[ids[i]] = static_cast<Index>(i);

  auto ft = detail::read_csv(dir / "forcings.csv");
  auto qt = detail::read_csv(dir / "streamflow.csv");
  if (ft.header.size() < 3 || ft.header[0] != "date" || ft.header[1] != "station_id")
    throw SchemaError("forcings.csv header must start with date,station_id");
  if (qt.header.size() != 3 || qt.header[0] != "date" || qt.header[1] != "station_id")
    throw SchemaError("streamflow.csv header must be date,station_id,q");
  std::vector<std::string> fnames(ft.header.begin() + 2, ft.header.end());
  if (fnames != schema.forcing_names) throw SchemaError("forcings.csv columns do not match schema.json forcing_names");

  // Calendar: every date present in either file, then daily continuity.
  std::set<Date> dates;
  for (const auto& r : ft.rows) dates.insert(parse_date(r[0]));
  for (const auto& r : qt.rows) dates.insert(parse_date(r[0]));
  if (dates.empty()) throw LoadError("dataset has no rows");
  std::vector<std::string> too_long;
  std::vector<Date> calendar;
  for (auto it = dates.begin(); it != dates.end(); ++it) {
    if (!calendar.empty()) {
      const long gap = days_between(calendar.back(), *it) - 1;
      if (gap > policy.max_interpolated_gap) {
        for (long g = 1; g <= gap; ++g) too_long.push_back(format_date(calendar.back() + std::chrono::days{g}));
      } else {
        const Date last = calendar.back();
        for (long g = 1; g <= gap; ++g) calendar.push_back(last + std::chrono::days{g});
      }
    }
    calendar.push_back(*it);
  }
  if (!too_long.empty()) {
    std::string list;
    for (std::size_t i = 0; i < too_long.size() && i < 20; ++i) list += (i ? ", " : "") + too_long[i];
    if (too_long.size() > 20) list += ", ...";
    throw LoadError("calendar gaps longer than " + std::to_string(policy.max_interpolated_gap) + " days: " + list);
  }
  std::map<Date, Index> tpos;
  for (std::size_t i = 0; i < calendar.size(); ++i) tpos[calendar[i]] = static_cast<Index>(i);
  const Index t_len = static_cast<Index>(calendar.size()), n = schema.n_stations, d = schema.n_forcings;

  std::vector<Eigen::VectorXd> fser(static_cast<std::size_t>(n * d), Eigen::VectorXd::Constant(t_len, std::nan("")));
  std::vector<Eigen::VectorXd> qser(static_cast<std::size_t>(n), Eigen::VectorXd::Constant(t_len, std::nan("")));
  std::set<std::string> in_forcings, in_flow;
  for (const auto& r : ft.rows) {
    auto s = spos.find(r[1]);
    if (s == spos.end()) throw SchemaError("forcings.csv names unknown station " + r[1]);
    in_forcings.insert(r[1]);
    const Index t = tpos.at(parse_date(r[0]));
    for (Index i = 0; i < d; ++i) fser[static_cast<std::size_t>(s->second * d + i)](t) = detail::parse_cell(r[static_cast<std::size_t>(i + 2)]);
  }
  for (const auto& r : qt.rows) {
    auto s = spos.find(r[1]);
    if (s == spos.end()) throw SchemaError("streamflow.csv names unknown station " + r[1]);
    in_flow.insert(r[1]);
    qser[static_cast<std::size_t>(s->second)](tpos.at(parse_date(r[0]))) = detail::parse_cell(r[2]);
  }
  for (const auto& id : ids) {
    if (!in_forcings.count(id)) throw SchemaError("forcings.csv is missing station " + id);
    if (!in_flow.count(id)) throw SchemaError("streamflow.csv is missing station " + id);
  }

  LoadedDataset out;
  auto& ds = out.dataset;
  std::vector<bool> unusable(static_cast<std::size_t>(t_len), false);
  auto fill = [&](Eigen::VectorXd& v, const std::string& station, const std::string& var) {
    for (auto [start, len] : detail::fill_gaps(v, policy.max_interpolated_gap, unusable)) {
      const bool interior = start > 0 && start + len < t_len;
      out.gaps.push_back({station, var, format_date(calendar[static_cast<std::size_t>(start)]), len,
                          interior && len <= policy.max_interpolated_gap});
    }
  };
  ds.forcings = Panel(t_len, n, d);
  ds.streamflow = Matrix(t_len, n);
  for (Index k = 0; k < n; ++k) {
    for (Index i = 0; i < d; ++i) {
      auto& v = fser[static_cast<std::size_t>(k * d + i)];
      fill(v, ids[static_cast<std::size_t>(k)], schema.forcing_names[static_cast<std::size_t>(i)]);
      for (Index t = 0; t < t_len; ++t) ds.forcings(t, k, i) = v(t);
    }
    auto& q = qser[static_cast<std::size_t>(k)];
    fill(q, ids[static_cast<std::size_t>(k)], "q");
    ds.streamflow.col(k) = q;
  }
  schema.n_timesteps = t_len;
  ds.schema = schema;
  ds.timestamps = calendar;
  ds.usable.resize(static_cast<std::size_t>(t_len));
  for (Index t = 0; t < t_len; ++t) ds.usable[static_cast<std::size_t>(t)] = !unusable[static_cast<std::size_t>(t)];
  try {
    ds.river_mask = mask_from_json(nlohmann::json::parse(io::read_file(dir / "mask.json")), ids);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("mask.json: ") + e.what());
  }
  ds.validate();
  return out;
}

}  // namespace caustream::pipeline
