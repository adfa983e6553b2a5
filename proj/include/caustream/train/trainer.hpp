#pragma once

// Total objective, curriculum-annealed training loop and batch prediction.

#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "caustream/core/nn.hpp"
#include "caustream/graph/jacobian.hpp"
#include "caustream/graph/penalties.hpp"
#include "caustream/train/bundle.hpp"
#include "caustream/train/config.hpp"
#include "json.hpp"

namespace caustream::train {

struct LossComponents {
  double forecast = 0.0, elbo = 0.0, sparse = 0.0, dag = 0.0;
};

struct Weights {
  double elbo = 0.0, sparse = 0.0, dag = 0.0;
};

/// forecast + w_elbo elbo + m_s w_sparse sparse + m_d w_dag dag.
inline double combine(const LossComponents& c, const Weights& w, const Multipliers& m) {
  return c.forecast + w.elbo * c.elbo + m.sparse * w.sparse * c.sparse + m.dag * w.dag * c.dag;
}

inline Weights effective_weights(const TrainingConfig& cfg) {
  return {cfg.uses_codec() ? cfg.lambda_elbo : 0.0, cfg.lambda_sparse, cfg.lambda_dag};
}

struct LossTerms {
  ad::Var total;
  LossComponents parts;
  Multipliers multipliers;
  std::vector<forecast::StepOutput> steps;
};

namespace detail {
inline void check_finite(double v, const char* name) {
  if (!std::isfinite(v)) throw TrainingError(std::string("non-finite ") + name + " component");
}
}  // namespace detail

/// Differentiable total objective on one batch.
inline LossTerms total_loss(nn::Binding& bind, const ModelBundle& b, const WindowBatch& wb,
                            const TrainingConfig& cfg, int epoch, std::uint64_t sample_seed) {
  ad::Tape& tape = bind.tape();
  const Index n = wb.stations, nb = wb.batch;
  LossTerms out;
  out.multipliers = cfg.multipliers(epoch);
  const Weights w = effective_weights(cfg);

  ad::Var runoff = b.runoff.forward(bind, tape.constant(wb.forcing_rows));
  auto r = runoff_positions(runoff, n, wb.positions, nb);
  std::vector<ad::Var> q, targets;
  for (const auto& c : wb.q) q.push_back(tape.constant(c));
  for (const auto& c : wb.targets) targets.push_back(tape.constant(c));
  auto adj = b.forecaster.adjacency(bind);
  out.steps = b.forecaster.rollout(bind, q, r, static_cast<Index>(targets.size()), adj,
                                   cfg.teacher_instantaneous ? &targets : nullptr);
  std::vector<ad::Var> preds;
  for (const auto& s : out.steps) preds.push_back(s.prediction);
  ad::Var total = forecast::forecast_loss(preds, targets);
  out.parts.forecast = total.item();
  detail::check_finite(out.parts.forecast, "forecast");

  ad::Var xf = tape.constant(wb.elbo_rows);
  if (cfg.uses_codec() && w.elbo > 0.0) {
    auto terms = b.codec.elbo_loss(bind, xf, sample_seed);
    out.parts.elbo = terms.total.item();
    detail::check_finite(out.parts.elbo, "elbo");
    total = ad::add(total, ad::scale(terms.total, w.elbo));
  }

  // Structural terms exist only once their multiplier is positive; an early
  // ill-conditioned J_m would otherwise turn 0 * inf into NaN.
  const bool sparse_on = out.multipliers.sparse > 0.0 && w.sparse > 0.0;
  const bool dag_on = out.multipliers.dag > 0.0 && w.dag > 0.0;
  if (sparse_on || dag_on) {
    std::vector<ad::Var> routing = b.forecaster.routing_sensitivity(bind, out.steps.front(), adj);
    ad::Var sparse, dag;
    ad::Var af;
    if (cfg.uses_codec()) {
      auto q_loc = b.codec.encode(bind, xf, sample_seed).loc;
      auto [dec, tan] = b.codec.decode_with_jacobian(bind, q_loc);
      af = graph::causal_adjacency_op(tan, xf.rows(), cfg.max_condition);
    }
    if (sparse_on) {
      sparse = graph::sparsity_loss(af.valid() ? af : tape.constant(Matrix::Zero(1, 1)), routing,
                                    b.spec.river_mask);
      out.parts.sparse = sparse.item();
      detail::check_finite(out.parts.sparse, "sparsity");
      total = ad::add(total, ad::scale(sparse, out.multipliers.sparse * w.sparse));
    }
    if (dag_on) {
      dag = graph::acyclicity_penalty(routing.front());
      if (af.valid()) dag = ad::add(dag, graph::acyclicity_penalty(af));
      out.parts.dag = dag.item();
      detail::check_finite(out.parts.dag, "acyclicity");
      total = ad::add(total, ad::scale(dag, out.multipliers.dag * w.dag));
    }
  }
  out.total = total;
  return out;
}

// ---------------------------------------------------------------------------
// Prediction and validation.

/// Rollout predictions for many windows in standardized units: H matrices of
/// shape B x N. Lag-0 parents are solved, never read from targets.
inline std::vector<Matrix> predict_windows(const ModelBundle& b, const Prepared& p,
                                           const std::vector<Index>& ends, Index chunk = 512) {
  const auto& w = b.spec.window;
  const Index n = b.spec.n_stations, nb = static_cast<Index>(ends.size());
  std::vector<Matrix> out(static_cast<std::size_t>(w.horizon), Matrix(nb, n));
  for (Index s = 0; s < nb; s += chunk) {
    const Index m = std::min(chunk, nb - s);
    std::vector<Index> part(ends.begin() + s, ends.begin() + s + m);
    WindowBatch wb = make_batch(p, w, part);
    ad::Tape tape;
    nn::Binding bind(tape, b.params, false);
    ad::Var runoff = b.runoff.forward(bind, tape.constant(wb.forcing_rows));
    auto r = runoff_positions(runoff, n, wb.positions, m);
    std::vector<ad::Var> q;
    for (const auto& c : wb.q) q.push_back(tape.constant(c));
    auto adj = b.forecaster.adjacency(bind);
    auto steps = b.forecaster.rollout(bind, q, r, w.horizon, adj);
    for (Index h = 0; h < w.horizon; ++h) {
      const Matrix& v = steps[static_cast<std::size_t>(h)].prediction.value();
      for (Index k = 0; k < n; ++k)
        for (Index i = 0; i < m; ++i) out[static_cast<std::size_t>(h)](s + i, k) = v(k * m + i, 0);
    }
  }
  return out;
}

/// Targets matching predict_windows.
inline std::vector<Matrix> window_targets(const Prepared& p, const forecast::WindowConfig& w,
                                          const std::vector<Index>& ends) {
  const Index n = p.flow.cols(), nb = static_cast<Index>(ends.size());
  std::vector<Matrix> out(static_cast<std::size_t>(w.horizon), Matrix(nb, n));
  for (Index h = 0; h < w.horizon; ++h)
    for (Index i = 0; i < nb; ++i)
      out[static_cast<std::size_t>(h)].row(i) = p.flow.row(ends[static_cast<std::size_t>(i)] + 1 + h);
  return out;
}

/// NSE per station and horizon step, averaged. The standardization is affine
/// per station, so NSE is the same as in physical units.
inline double mean_nse(const std::vector<Matrix>& pred, const std::vector<Matrix>& obs) {
  double acc = 0.0;
  Index count = 0;
  for (std::size_t h = 0; h < pred.size(); ++h)
    for (Index k = 0; k < pred[h].cols(); ++k) {
      const auto y = obs[h].col(k);
      const double mu = y.mean();
      const double sst = (y.array() - mu).square().sum();
      if (!(sst > 0.0)) continue;
      acc += 1.0 - (pred[h].col(k) - y).squaredNorm() / sst;
      ++count;
    }
  if (count == 0) throw UndefinedMetricError("validation targets are constant");
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Training loop.

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_nse = 0.0;
  Multipliers multipliers;
};

struct TrainResult {
  ModelBundle bundle;  // best checkpoint by validation NSE
  int best_epoch = -1;
  double best_val_nse = -std::numeric_limits<double>::infinity();
  std::vector<EpochRecord> epochs;
  std::vector<nlohmann::json> log;  // one record per step
};

struct TrainOptions {
  std::ostream* log_stream = nullptr;            // JSON-lines sink
  std::optional<std::filesystem::path> checkpoint_dir;  // best bundle written here
  bool verbose = false;
};

inline BundleSpec bundle_spec_for(const scm::SpatioTemporalDataset& ds, const forecast::WindowConfig& w,
                                  const TrainingConfig& cfg, forecast::ForecasterOptions fopt = {},
                                  repr::RunoffMode mode = repr::RunoffMode::kLocal) {
  BundleSpec s;
  s.n_stations = ds.stations();
  s.n_forcings = ds.schema.n_forcings;
  s.runoff_dim = ds.schema.runoff_dim;
  s.max_lag = ds.schema.max_lag;
  s.river_mask = ds.river_mask;
  s.window = w;
  s.runoff_mode = mode;
  if (cfg.ablation == Ablation::kSharedRunoff) s.runoff_mode = repr::RunoffMode::kShared;
  if (cfg.ablation == Ablation::kLocalRunoff) s.runoff_mode = repr::RunoffMode::kLocal;
  s.codec.recon_weight = cfg.recon_weight;
  s.forecaster = fopt;
  s.seed = cfg.seed;
  return s;
}

inline TrainResult train(const Prepared& data, const BundleSpec& spec, const TrainingConfig& cfg,
                         const TrainOptions& opt = {}) {
  cfg.validate();
  TrainResult res;
  ModelBundle b = make_bundle(spec);
  b.stats = data.stats;
  const auto& w = spec.window;
  auto train_ends = window_ends(data, w, data.split.train_begin, data.split.train_end);
  auto val_ends = window_ends(data, w, data.split.train_end, data.split.val_end);
  if (train_ends.empty()) throw LoadError("no complete training windows");
  if (val_ends.empty()) throw LoadError("no complete validation windows");
  if (cfg.validation_windows > 0 && static_cast<Index>(val_ends.size()) > cfg.validation_windows)
    val_ends.resize(static_cast<std::size_t>(cfg.validation_windows));
  const auto val_targets = window_targets(data, w, val_ends);

  nn::Adam adam(b.params, {.learning_rate = cfg.learning_rate});
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedULL);
  const int select_from = cfg.curriculum.final_epoch(cfg.epochs);
  const Weights wts = effective_weights(cfg);
  long step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<Index> order = train_ends;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double acc = 0.0;
    int nbat = 0;
    Multipliers mult = cfg.multipliers(e);
    for (std::size_t s = 0; s + static_cast<std::size_t>(cfg.batch_size) <= order.size();
         s += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps_per_epoch > 0 && nbat >= cfg.max_steps_per_epoch) break;
      std::vector<Index> part(order.begin() + static_cast<long>(s),
                              order.begin() + static_cast<long>(s) + cfg.batch_size);
      WindowBatch wb = make_batch(data, w, part);
      ad::Tape tape;
      nn::Binding bind(tape, b.params);
      LossTerms lt = total_loss(bind, b, wb, cfg, e, cfg.seed * 1000003ULL + static_cast<std::uint64_t>(step));
      tape.backward(lt.total);
      auto grads = bind.gradients();
      const double gn = nn::clip_global_norm(grads, cfg.clip_norm);
      if (!std::isfinite(gn)) throw TrainingError("non-finite gradient norm at step " + std::to_string(step));
      const double clipped = nn::global_norm(grads);
      adam.step(b.params, grads);
      nlohmann::json rec = {{"epoch", e},
                            {"step", step},
                            {"total", lt.total.item()},
                            {"forecast", lt.parts.forecast},
                            {"elbo", lt.parts.elbo},
                            {"sparse", lt.parts.sparse},
                            {"dag", lt.parts.dag},
                            {"weights", {{"elbo", wts.elbo}, {"sparse", wts.sparse}, {"dag", wts.dag}}},
                            {"multiplier_sparse", lt.multipliers.sparse},
                            {"multiplier_dag", lt.multipliers.dag},
                            {"grad_norm", gn},
                            {"grad_norm_clipped", clipped}};
      if (opt.log_stream) *opt.log_stream << rec.dump() << "\n";
      res.log.push_back(std::move(rec));
      acc += lt.total.item();
      ++nbat;
      ++step;
    }
    const double val = mean_nse(predict_windows(b, data, val_ends), val_targets);
    res.epochs.push_back({e, acc / std::max(nbat, 1), val, mult});
    if (opt.verbose)
      std::fprintf(stderr, "epoch %d loss %.5f val_nse %.4f m %.2f\n", e, acc / std::max(nbat, 1), val, mult.sparse);
    if (e >= select_from && val > res.best_val_nse) {
      res.best_val_nse = val;
      res.best_epoch = e;
      res.bundle = b;
      if (opt.checkpoint_dir) checkpoint(b, *opt.checkpoint_dir);
    }
  }
  return res;
}

}  // namespace caustream::train
