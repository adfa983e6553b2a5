// caustream command line: generate, fetch-nwis, train, discover, forecast,
// evaluate, run.
//
// Exit codes: 0 success, 2 usage, 3 data, 4 training, 5 network.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "caustream/pipeline/experiment.hpp"
#include "caustream/pipeline/nwis.hpp"

using namespace caustream;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kTraining = 4, kNetwork = 5 };

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::kUsage: return kUsage;
    case ErrorKind::kData: return kData;
    case ErrorKind::kTraining: return kTraining;
    case ErrorKind::kNetwork: return kNetwork;
  }
  return kData;
}

struct Common {
  std::string config;
  std::vector<std::string> sets;  // key=value overrides
  std::optional<long> seed;
  std::optional<double> tau;
  std::optional<std::string> window, ablation;
  std::optional<int> epochs;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value configuration file");
  app->add_option("--set", c.sets, "override one key, e.g. --set epochs=5");
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--tau", c.tau, "aggregation threshold in (0, 1]");
  app->add_option("--window", c.window, "window preset")->check(CLI::IsMember({"short", "medium", "long"}));
  app->add_option("--ablation", c.ablation, "full, no_causal_losses, no_forcing_vae, shared_runoff, local_runoff");
  app->add_option("--epochs", c.epochs, "training epochs");
}

pipeline::PipelineConfig resolve(const Common& c) {
  pipeline::PipelineConfig cfg;
  if (!c.config.empty()) cfg = pipeline::load_config(c.config);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + s + "'");
    pipeline::apply_key(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) pipeline::apply_key(cfg, "seed", std::to_string(*c.seed));
  if (c.tau) cfg.tau = *c.tau;
  if (c.window) pipeline::apply_key(cfg, "window", *c.window);
  if (c.ablation) pipeline::apply_key(cfg, "ablation", *c.ablation);
  if (c.epochs) cfg.training.epochs = *c.epochs;
  cfg.validate();
  return cfg;
}

void report_gaps(const std::vector<pipeline::GapEvent>& gaps) {
  for (const auto& g : gaps)
    std::fprintf(stderr, "gap: %s %s from %s, %ld days, %s\n", g.station.c_str(), g.variable.c_str(),
                 g.first_date.c_str(), static_cast<long>(g.length), g.interpolated ? "interpolated" : "dropped");
}

struct Loaded {
  pipeline::DatasetBundle data;
  train::Split split;
};

Loaded load(const std::string& dir, const pipeline::PipelineConfig& cfg) {
  Loaded l;
  l.data = pipeline::load_with_truth(dir, {cfg.max_interpolated_gap});
  report_gaps(l.data.gaps);
  l.split = pipeline::split_for(cfg, l.data.dataset.times());
  return l;
}

int cmd_generate(const Common& c, const std::string& out) {
  auto cfg = resolve(c);
  auto g = scm::generate_dataset(cfg.generator);
  pipeline::write_generated(out, g);
  std::printf("wrote %s (%ld stations, %ld steps)\n", out.c_str(), static_cast<long>(g.dataset.stations()),
              static_cast<long>(g.dataset.times()));
  return kOk;
}

int cmd_fetch(const std::vector<std::string>& sites, const std::string& start, const std::string& end,
              const std::string& out, const std::string& endpoint, int concurrency) {
  pipeline::NwisOptions opt;
  opt.endpoint = endpoint;
  opt.concurrency = concurrency;
  Date s, e;
  try {
    s = parse_date(start);
    e = parse_date(end);
  } catch (const Error& err) {
    throw ArgumentError(err.what());
  }
  if (e < s) throw ArgumentError("date range end " + end + " is before start " + start);
  auto r = pipeline::fetch_nwis(sites, s, e, opt);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  for (const auto& er : r.errors) std::fprintf(stderr, "site %s: %s\n", er.site.c_str(), er.message.c_str());
  if (!sites.empty() && r.provenance.empty()) throw NetworkError("every site failed");
  pipeline::write_nwis(out, r);
  std::printf("wrote %s (%zu sites)\n", out.c_str(), r.provenance.size());
  return kOk;
}

int cmd_train(const Common& c, const std::string& dataset, const std::string& out) {
  auto cfg = resolve(c);
  auto l = load(dataset, cfg);
  auto prep = train::prepare(l.data.dataset, l.split);
  std::ostringstream log;
  train::TrainOptions to;
  to.log_stream = &log;
  to.checkpoint_dir = fs::path(out) / "checkpoint";
  to.verbose = true;
  auto spec = train::bundle_spec_for(l.data.dataset, cfg.window, cfg.training, cfg.forecaster);
  auto r = train::train(prep, spec, cfg.training, to);
  if (r.best_epoch < 0) throw TrainingError("no epoch qualified for checkpoint selection");
  io::write_atomic(fs::path(out) / "train_log.jsonl", log.str());
  std::printf("best epoch %d, validation NSE %.4f, checkpoint %s\n", r.best_epoch, r.best_val_nse,
              train::checkpoint_id(fs::path(out) / "checkpoint").c_str());
  return kOk;
}

train::ModelBundle restore_for(const std::string& ckpt, const scm::SpatioTemporalDataset& ds) {
  train::BundleSpec expected;
  expected.n_stations = ds.stations();
  expected.n_forcings = ds.schema.n_forcings;
  expected.runoff_dim = ds.schema.runoff_dim;
  expected.max_lag = ds.schema.max_lag;
  expected.river_mask = ds.river_mask;
  return train::restore(ckpt, &expected);
}

int cmd_discover(const Common& c, const std::string& dataset, const std::string& ckpt, const std::string& out) {
  auto cfg = resolve(c);
  auto l = load(dataset, cfg);
  auto b = restore_for(ckpt, l.data.dataset);
  auto prep = train::prepare(l.data.dataset, l.split, b.stats);
  auto g = pipeline::discover(b, prep, cfg.tau, cfg.training.max_condition);
  pipeline::write_graphs(out, g, l.data.dataset.schema);
  std::printf("routing edges %ld\n", static_cast<long>(g.routing.binary.edge_count()));
  return kOk;
}

int cmd_forecast(const Common& c, const std::string& dataset, const std::string& ckpt, const std::string& graph,
                 const std::string& out) {
  auto cfg = resolve(c);
  auto l = load(dataset, cfg);
  auto b = restore_for(ckpt, l.data.dataset);
  auto prep = train::prepare(l.data.dataset, l.split, b.stats);
  std::optional<scm::BinaryDag> routing;
  if (!graph.empty()) routing = pipeline::read_routing_graph(graph);
  auto f = pipeline::forecast_test(b, prep, routing);
  io::write_atomic(out, pipeline::forecasts_csv(f, l.data.dataset));
  fs::path side = out;
  side.replace_extension(".manifest.json");
  io::write_atomic(side, pipeline::forecast_manifest(b.spec.window, train::checkpoint_id(ckpt)));
  std::printf("wrote %s (%zu windows)\n", out.c_str(), f.ends.size());
  return kOk;
}

int cmd_evaluate(const Common& c, const std::string& dataset, const std::string& forecasts, const std::string& out) {
  auto cfg = resolve(c);
  auto l = load(dataset, cfg);
  auto table = pipeline::join_forecasts(io::read_file(forecasts), l.data.dataset);
  forecast::WindowConfig w = cfg.window;
  fs::path side = forecasts;
  side.replace_extension(".manifest.json");
  if (!fs::exists(side)) side = fs::path(forecasts).parent_path() / "manifest.json";
  if (fs::exists(side)) {
    auto m = nlohmann::json::parse(io::read_file(side));
    w.history_len = m.value("history_len", w.history_len);
    w.horizon = m.value("horizon", w.horizon);
    w.preset = forecast::parse_preset(m.value("preset", std::string("custom")));
  }
  auto r = eval::evaluate_forecasts(table.obs, table.pred, l.data.dataset.schema.station_ids, w);
  io::write_atomic(fs::path(out) / "report.json", eval::report_json(r).dump(2) + "\n");
  io::write_atomic(fs::path(out) / "report.csv", eval::report_csv(r));
  std::printf("mean NSE %.4f  KGE %.4f  VE %.4f\n", r.aggregate.nse, r.aggregate.kge, r.aggregate.ve);
  return kOk;
}

int cmd_run(const Common& c, const std::string& dataset, const std::string& out) {
  auto cfg = resolve(c);
  if (!dataset.empty()) cfg.dataset_path = dataset;
  if (!out.empty()) cfg.output_dir = out;
  auto r = pipeline::run_experiment(cfg, &std::cerr);
  std::printf("test NSE %.4f", r.report.aggregate.nse);
  if (r.report.graph_scores.count("forcing"))
    std::printf("  forcing F1 %.3f  routing F1 %.3f", r.report.graph_scores["forcing"].f1,
                r.report.graph_scores["routing"].f1);
  if (r.report.mcc) std::printf("  MCC %.3f", *r.report.mcc);
  std::printf("\nartifacts in %s\n", r.output_dir.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caustream: causal spatio-temporal streamflow forecasting"};
  app.require_subcommand(1);

  Common common;
  std::string out, dataset, ckpt, graph, forecasts, start, end, endpoint;
  std::vector<std::string> sites;
  int concurrency = 4;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset with ground truth");
  add_common(gen, common);
  gen->add_option("--out", out, "dataset directory")->required();

  auto* fetch = app.add_subcommand("fetch-nwis", "download daily discharge as streamflow.csv");
  fetch->add_option("--sites", sites, "site numbers")->delimiter(',');
  fetch->add_option("--start", start, "first day, YYYY-MM-DD")->required();
  fetch->add_option("--end", end, "last day, YYYY-MM-DD")->required();
  fetch->add_option("--out", out, "output CSV")->required();
  fetch->add_option("--endpoint", endpoint, std::string("service URL; default $") + pipeline::kNwisEndpointEnv);
  fetch->add_option("--concurrency", concurrency, "parallel requests")->check(CLI::Range(1, 16));

  auto* tr = app.add_subcommand("train", "train and checkpoint the best epoch");
  add_common(tr, common);
  tr->add_option("--dataset", dataset)->required();
  tr->add_option("--out", out, "output directory")->required();

  auto* disc = app.add_subcommand("discover", "export forcing and routing graphs");
  add_common(disc, common);
  disc->add_option("--dataset", dataset)->required();
  disc->add_option("--checkpoint", ckpt)->required();
  disc->add_option("--out", out, "graph directory")->required();

  auto* fc = app.add_subcommand("forecast", "forecast the test split");
  add_common(fc, common);
  fc->add_option("--dataset", dataset)->required();
  fc->add_option("--checkpoint", ckpt)->required();
  fc->add_option("--graph", graph, "routing.json used to gate messages");
  fc->add_option("--out", out, "forecasts CSV")->required();

  auto* ev = app.add_subcommand("evaluate", "score a forecasts CSV");
  add_common(ev, common);
  ev->add_option("--dataset", dataset)->required();
  ev->add_option("--forecasts", forecasts)->required();
  ev->add_option("--out", out, "report directory")->required();

  auto* run = app.add_subcommand("run", "full pipeline");
  add_common(run, common);
  run->add_option("--dataset", dataset, "dataset directory; default generates one");
  run->add_option("--out", out, "artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_generate(common, out);
    if (*fetch) return cmd_fetch(sites, start, end, out, endpoint, concurrency);
    if (*tr) return cmd_train(common, dataset, out);
    if (*disc) return cmd_discover(common, dataset, ckpt, out);
    if (*fc) return cmd_forecast(common, dataset, ckpt, graph, out);
    if (*ev) return cmd_evaluate(common, dataset, forecasts, out);
    if (*run) return cmd_run(common, dataset, out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: malformed JSON: %s\n", e.what());
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
