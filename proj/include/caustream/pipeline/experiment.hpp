#pragma once

// Stages of an experiment and the full run. Output layout under output_dir:
//
//   dataset/                 synthetic runs only; written by generate
//   checkpoint/              bundle.json, params.bin, manifest.json
//   train_log.jsonl
//   graphs/forcing.json      one DAG per station
//   graphs/routing.json      lag-indexed routing DAG
//   graphs/*.dot
//   forecasts/forecasts.csv  date,station_id,horizon_step,prediction
//   forecasts/manifest.json
//   report/report.json, report/report.csv
//   plots/hydrograph.svg, plots/adjacency.svg
//   manifest.json            every artifact with its sha256

#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "caustream/eval/report.hpp"
#include "caustream/pipeline/config.hpp"
#include "caustream/pipeline/dataset_io.hpp"
#include "caustream/pipeline/plots.hpp"
#include "caustream/train/discover.hpp"

namespace caustream::pipeline {

/// Failure inside a named stage; keeps the error kind of the cause.
class StageError : public Error {
 public:
  StageError(const std::string& stage, const Error& cause)
      : Error(cause.kind(), "stage " + stage + ": " + cause.what()), stage_(stage) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

template <class F>
auto run_stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

struct Truth {
  std::optional<scm::GroundTruthScm> graphs;
  std::optional<Panel> runoff;
};

struct DatasetBundle {
  scm::SpatioTemporalDataset dataset;
  std::vector<GapEvent> gaps;
  Truth truth;
};

inline DatasetBundle load_with_truth(const fs::path& dir, const GapPolicy& policy = {}) {
  DatasetBundle out;
  auto loaded = load_dataset(dir, policy);
  out.dataset = std::move(loaded.dataset);
  out.gaps = std::move(loaded.gaps);
  if (fs::exists(dir / "truth_graphs.json")) out.truth.graphs = load_truth_graphs(dir);
  if (fs::exists(dir / "truth_runoff.csv")) out.truth.runoff = load_truth_runoff(dir, out.dataset);
  return out;
}

inline train::Split split_for(const PipelineConfig& c, Index t) {
  return train::chronological_split(t, c.train_frac, c.val_frac);
}

// ---------------------------------------------------------------------------
// Discovery.

struct Graphs {
  std::vector<graph::AggregateResult> forcing;  // per station
  graph::AggregateResult routing;
};

inline Graphs discover(const train::ModelBundle& b, const train::Prepared& p, double tau, double max_condition) {
  Graphs g;
  const auto& s = p.split;
  g.forcing = train::discover_forcing(b, p, s.train_begin, s.train_end, tau, max_condition).per_station;
  const auto ends = train::window_ends(p, b.spec.window, s.train_begin, s.train_end);
  g.routing = train::discover_routing(b, p, ends, tau).graph;
  return g;
}

inline nlohmann::json aggregation_meta(const graph::AggregateResult& r) {
  nlohmann::json broken = nlohmann::json::array();
  for (auto [i, j] : r.broken) broken.push_back({{"target", i}, {"source", j}});
  return {{"statistic", "time mean of per-step max-normalized |J|"}, {"broken_cycle_edges", broken}};
}

inline nlohmann::json forcing_graphs_json(const Graphs& g, const scm::DatasetSchema& s) {
  nlohmann::json j;
  j["stations"] = nlohmann::json::object();
  for (std::size_t k = 0; k < g.forcing.size(); ++k)
    j["stations"][s.station_ids[k]] =
        graph::graph_json("forcing", s.forcing_names, g.forcing[k].mean, g.forcing[k].binary, aggregation_meta(g.forcing[k]));
  return j;
}

inline nlohmann::json routing_graph_json(const Graphs& g, const scm::DatasetSchema& s) {
  return graph::graph_json("routing", s.station_ids, g.routing.mean, g.routing.binary, aggregation_meta(g.routing));
}

inline void write_graphs(const fs::path& dir, const Graphs& g, const scm::DatasetSchema& s) {
  io::write_atomic(dir / "forcing.json", forcing_graphs_json(g, s).dump(2) + "\n");
  io::write_atomic(dir / "routing.json", routing_graph_json(g, s).dump(2) + "\n");
  io::write_atomic(dir / "routing.dot", graph::graph_dot("routing", s.station_ids, g.routing.binary));
  for (std::size_t k = 0; k < g.forcing.size(); ++k)
    io::write_atomic(dir / ("forcing_" + s.station_ids[k] + ".dot"),
                     graph::graph_dot("forcing " + s.station_ids[k], s.forcing_names, g.forcing[k].binary));
}

inline scm::BinaryDag read_routing_graph(const fs::path& path) {
  auto j = nlohmann::json::parse(io::read_file(path));
  scm::BinaryDag g;
  for (const auto& s : j.at("binary")) g.slices.push_back(graph::matrix_from_json(s));
  g.threshold_used = j.value("tau", 0.5);
  return g;
}

// ---------------------------------------------------------------------------
// Forecasting.

struct Forecasts {
  std::vector<Index> ends;     // last observed step of each window
  std::vector<Matrix> values;  // H matrices of B x N, physical units
};

/// Test-split rollouts. When `routing` is given, messages are gated by it.
inline Forecasts forecast_test(train::ModelBundle& b, const train::Prepared& p,
                               const std::optional<scm::BinaryDag>& routing = std::nullopt) {
  if (routing) b.forecaster.set_gate(routing->slices);
  Forecasts f;
  f.ends = train::window_ends(p, b.spec.window, p.split.val_end, p.split.test_end);
  if (f.ends.empty()) throw LoadError("no complete test windows");
  f.values = train::predict_windows(b, p, f.ends);
  for (auto& m : f.values)
    for (Index k = 0; k < m.cols(); ++k)
      m.col(k) = (m.col(k).array() * p.stats.flow_std(k) + p.stats.flow_mean(k)).matrix();
  return f;
}

inline std::string forecasts_csv(const Forecasts& f, const scm::SpatioTemporalDataset& ds) {
  std::ostringstream os;
  os << "date,station_id,horizon_step,prediction\n";
  for (std::size_t i = 0; i < f.ends.size(); ++i)
    for (Index k = 0; k < ds.stations(); ++k)
      for (std::size_t h = 0; h < f.values.size(); ++h)
        os << format_date(ds.timestamps[static_cast<std::size_t>(f.ends[i]) + 1 + h]) << ','
           << ds.schema.station_ids[static_cast<std::size_t>(k)] << ',' << (h + 1) << ','
           << io::format_double(f.values[h](static_cast<Index>(i), k)) << '\n';
  return os.str();
}

struct ForecastTable {
  Matrix obs, pred;  // rows = (date, horizon) pairs, cols = stations
  std::vector<std::string> keys;
  Index horizon = 0;
};

/// Joins a forecasts CSV against observed flow. Every (date, horizon) row
/// must carry a value for every station.
inline ForecastTable join_forecasts(const std::string& csv, const scm::SpatioTemporalDataset& ds) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || detail::split_csv_line(line) !=
                                     std::vector<std::string>{"date", "station_id", "horizon_step", "prediction"})
    throw SchemaError("forecasts CSV header must be date,station_id,horizon_step,prediction");
  std::map<std::string, Index> spos, tpos;
  for (std::size_t i = 0; i < ds.schema.station_ids.size(); ++i) spos[ds.schema.station_ids[i]] = static_cast<Index>(i);
  for (std::size_t i = 0; i < ds.timestamps.size(); ++i) tpos[format_date(ds.timestamps[i])] = static_cast<Index>(i);
  std::map<std::pair<Index, Index>, std::vector<double>> rows;  // (horizon, time) -> per station
  ForecastTable t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto c = detail::split_csv_line(line);
    if (c.size() != 4) throw SchemaError("forecasts CSV row with " + std::to_string(c.size()) + " cells");
    auto ti = tpos.find(c[0]);
    if (ti == tpos.end()) throw SchemaError("forecast date " + c[0] + " is outside the dataset");
    auto si = spos.find(c[1]);
    if (si == spos.end()) throw SchemaError("forecast names unknown station " + c[1]);
    const Index h = detail::to_long("horizon_step", c[2]);
    t.horizon = std::max(t.horizon, h);
    auto& v = rows[{h, ti->second}];
    if (v.empty()) v.assign(static_cast<std::size_t>(ds.stations()), std::nan(""));
    v[static_cast<std::size_t>(si->second)] = detail::parse_cell(c[3]);
  }
  if (rows.empty()) throw SchemaError("forecasts CSV has no rows");
  t.obs.resize(static_cast<Index>(rows.size()), ds.stations());
  t.pred.resize(static_cast<Index>(rows.size()), ds.stations());
  Index r = 0;
  for (const auto& [key, v] : rows) {
    for (Index k = 0; k < ds.stations(); ++k) {
      if (std::isnan(v[static_cast<std::size_t>(k)]))
        throw SchemaError("forecast missing for station " + ds.schema.station_ids[static_cast<std::size_t>(k)] +
                          " on " + format_date(ds.timestamps[static_cast<std::size_t>(key.second)]));
      t.pred(r, k) = v[static_cast<std::size_t>(k)];
      t.obs(r, k) = ds.streamflow(key.second, k);
    }
    t.keys.push_back(format_date(ds.timestamps[static_cast<std::size_t>(key.second)]) + "+" + std::to_string(key.first));
    ++r;
  }
  return t;
}

// ---------------------------------------------------------------------------
// Evaluation extras that need truth.

struct Alignment {
  double mcc = 0.0;
  std::optional<double> r2;
};

/// Learned runoff against true runoff on [begin, end), per station, averaged.
inline Alignment runoff_alignment(const train::ModelBundle& b, const train::Prepared& p, const Panel& truth,
                                  Index begin, Index end, std::vector<std::string>* warnings = nullptr) {
  std::vector<Index> times;
  for (Index t = begin; t < end; ++t)
    if (p.usable[static_cast<std::size_t>(t)]) times.push_back(t);
  const Index m = static_cast<Index>(times.size()), n = b.spec.n_stations, d = b.spec.n_forcings;
  Matrix rows(n * m, d);
  for (Index k = 0; k < n; ++k)
    for (Index i = 0; i < m; ++i) rows.row(k * m + i) = p.forcings.row(times[static_cast<std::size_t>(i)], k);
  const Matrix emb = repr::generate_runoff(b.runoff, b.params, rows);
  Alignment a;
  std::vector<Matrix> es, ts;
  for (Index k = 0; k < n; ++k) {
    Matrix tr(m, truth.features());
    for (Index i = 0; i < m; ++i) tr.row(i) = truth.row(times[static_cast<std::size_t>(i)], k);
    es.push_back(emb.middleRows(k * m, m));
    ts.push_back(tr);
    a.mcc += eval::mcc_alignment(es.back(), tr) / static_cast<double>(n);
  }
  try {
    auto r2 = eval::r2_alignment(es, ts);
    a.r2 = r2.r2;
    if (warnings && !r2.skipped.empty())
      warnings->push_back("r2 skipped " + std::to_string(r2.skipped.size()) + " stations with too few points");
  } catch (const UndefinedMetricError& e) {
    if (warnings) warnings->push_back(e.what());
  }
  return a;
}

/// Mean forcing score over stations, plus the routing score.
inline void score_graphs(eval::EvaluationReport& r, const Graphs& g, const scm::GroundTruthScm& truth) {
  eval::GraphScore f{};
  for (const auto& s : g.forcing) {
    auto one = eval::graph_recovery(s.binary, truth.forcing_dag);
    const double w = 1.0 / static_cast<double>(g.forcing.size());
    f.precision += w * one.precision;
    f.recall += w * one.recall;
    f.f1 += w * one.f1;
    f.shd += one.shd;
    f.true_positive += one.true_positive;
    f.false_positive += one.false_positive;
    f.false_negative += one.false_negative;
  }
  r.graph_scores["forcing"] = f;
  r.graph_scores["routing"] = eval::graph_recovery(g.routing.binary, truth.routing_dag);
}

// ---------------------------------------------------------------------------
// Full run.

struct ArtifactEntry {
  std::string kind, path, sha256;
};

struct RunResult {
  fs::path output_dir;
  train::TrainResult training;
  Graphs graphs;
  eval::EvaluationReport report;
  std::vector<ArtifactEntry> artifacts;
  std::string checkpoint_id;
};

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path root) : root_(std::move(root)) {}

  void write(const std::string& kind, const std::string& rel, const std::string& content) {
    io::write_atomic(root_ / rel, content);
    entries_.push_back({kind, rel, io::sha256_hex(content)});
  }

  void record(const std::string& kind, const std::string& rel) {
    entries_.push_back({kind, rel, io::sha256_hex(io::read_file(root_ / rel))});
  }

  void finish(const nlohmann::json& extra) {
    nlohmann::json j = extra;
    j["artifacts"] = nlohmann::json::array();
    for (const auto& e : entries_) j["artifacts"].push_back({{"kind", e.kind}, {"path", e.path}, {"sha256", e.sha256}});
    io::write_atomic(root_ / "manifest.json", j.dump(2) + "\n");
  }

  const std::vector<ArtifactEntry>& entries() const { return entries_; }

 private:
  fs::path root_;
  std::vector<ArtifactEntry> entries_;
};

inline std::string forecast_manifest(const forecast::WindowConfig& w, const std::string& ckpt) {
  return nlohmann::json{{"preset", forecast::to_string(w.preset)},
                        {"history_len", w.history_len},
                        {"horizon", w.horizon},
                        {"checkpoint_id", ckpt},
                        {"units", "physical"}}
             .dump(2) +
         "\n";
}

inline std::string adjacency_plot(const Graphs& g, const scm::DatasetSchema& s) {
  std::vector<Heatmap> maps;
  Matrix forcing = Matrix::Zero(s.n_forcings, s.n_forcings);
  for (const auto& f : g.forcing) forcing += f.mean[0] / static_cast<double>(g.forcing.size());
  maps.push_back({"forcing (station mean)", forcing, s.forcing_names});
  for (std::size_t l = 0; l < g.routing.mean.size(); ++l)
    maps.push_back({"routing lag " + std::to_string(l), g.routing.mean[l], s.station_ids});
  return heatmap_svg(maps);
}

inline std::string hydrograph_plot(const Forecasts& f, const scm::SpatioTemporalDataset& ds) {
  Matrix obs(static_cast<Index>(f.ends.size()), ds.stations());
  for (std::size_t i = 0; i < f.ends.size(); ++i) obs.row(static_cast<Index>(i)) = ds.streamflow.row(f.ends[i] + 1);
  return hydrograph_svg(obs, f.values[0], ds.schema.station_ids, "test split, one step ahead");
}

inline RunResult run_experiment(const PipelineConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  RunResult res;
  res.output_dir = cfg.output_dir;
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  ArtifactWriter aw(out);
  auto say = [&](const std::string& s) {
    if (progress) *progress << s << std::endl;
  };

  DatasetBundle data = run_stage("load", [&] {
    if (!cfg.dataset_path.empty()) return load_with_truth(cfg.dataset_path, {cfg.max_interpolated_gap});
    say("generating synthetic dataset");
    auto gen = scm::generate_dataset(cfg.generator);
    write_generated(out / "dataset", gen);
    return load_with_truth(out / "dataset", {cfg.max_interpolated_gap});
  });
  const auto& ds = data.dataset;
  std::vector<std::string> warnings;
  for (const auto& g : data.gaps)
    warnings.push_back("gap " + g.station + "/" + g.variable + " from " + g.first_date + " length " +
                       std::to_string(g.length) + (g.interpolated ? " interpolated" : " dropped"));

  const auto split = split_for(cfg, ds.times());
  const train::Prepared prep = run_stage("prepare", [&] { return train::prepare(ds, split); });

  say("training");
  res.training = run_stage("train", [&] {
    std::ostringstream log;
    train::TrainOptions to;
    to.log_stream = &log;
    to.checkpoint_dir = out / "checkpoint";
    auto spec = train::bundle_spec_for(ds, cfg.window, cfg.training, cfg.forecaster);
    auto r = train::train(prep, spec, cfg.training, to);
    if (r.best_epoch < 0) throw TrainingError("no epoch qualified for checkpoint selection");
    aw.write("train_log", "train_log.jsonl", log.str());
    return r;
  });
  for (const char* f : {"bundle.json", "params.bin", "manifest.json"}) aw.record("checkpoint", std::string("checkpoint/") + f);
  res.checkpoint_id = train::checkpoint_id(out / "checkpoint");
  auto& bundle = res.training.bundle;

  say("discovering graphs");
  res.graphs = run_stage("discover", [&] {
    auto g = discover(bundle, prep, cfg.tau, cfg.training.max_condition);
    aw.write("graphs", "graphs/forcing.json", forcing_graphs_json(g, ds.schema).dump(2) + "\n");
    aw.write("graphs", "graphs/routing.json", routing_graph_json(g, ds.schema).dump(2) + "\n");
    aw.write("graphs", "graphs/routing.dot", graph::graph_dot("routing", ds.schema.station_ids, g.routing.binary));
    return g;
  });

  say("forecasting test split");
  Forecasts fc = run_stage("forecast", [&] {
    auto f = forecast_test(bundle, prep, res.graphs.routing.binary);
    aw.write("forecasts", "forecasts/forecasts.csv", forecasts_csv(f, ds));
    aw.write("forecasts", "forecasts/manifest.json", forecast_manifest(cfg.window, res.checkpoint_id));
    return f;
  });

  say("evaluating");
  res.report = run_stage("evaluate", [&] {
    auto table = join_forecasts(forecasts_csv(fc, ds), ds);
    auto r = eval::evaluate_forecasts(table.obs, table.pred, ds.schema.station_ids, cfg.window);
    r.warnings = warnings;
    if (data.truth.graphs) score_graphs(r, res.graphs, *data.truth.graphs);
    if (data.truth.runoff) {
      auto a = runoff_alignment(bundle, prep, *data.truth.runoff, split.val_end, split.test_end, &r.warnings);
      r.mcc = a.mcc;
      r.r2 = a.r2;
    }
    aw.write("report", "report/report.json", eval::report_json(r).dump(2) + "\n");
    aw.write("report", "report/report.csv", eval::report_csv(r));
    return r;
  });

  run_stage("plot", [&] {
    aw.write("plots", "plots/hydrograph.svg", hydrograph_plot(fc, ds));
    aw.write("plots", "plots/adjacency.svg", adjacency_plot(res.graphs, ds.schema));
    return 0;
  });

  aw.finish({{"config", config_json(cfg)},
             {"checkpoint_id", res.checkpoint_id},
             {"best_epoch", res.training.best_epoch},
             {"best_val_nse", res.training.best_val_nse}});
  res.artifacts = aw.entries();
  return res;
}

}  // namespace caustream::pipeline
