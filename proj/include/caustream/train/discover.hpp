#pragma once

// Graph extraction from a trained bundle: one forcing DAG per station and
// the lag-indexed routing DAG.

#include <vector>

#include "caustream/graph/aggregate.hpp"
#include "caustream/graph/jacobian.hpp"
#include "caustream/graph/routing.hpp"
#include "caustream/train/trainer.hpp"

namespace caustream::train {

struct ForcingDiscovery {
  std::vector<graph::AggregateResult> per_station;
  std::vector<Matrix> raw_mean;  // mean |J_g| per station before normalization
};

/// Per-step J_g at the posterior location for every usable t in [begin, end).
inline ForcingDiscovery discover_forcing(const ModelBundle& b, const Prepared& p, Index begin, Index end,
                                         double tau, double max_condition = 1e8) {
  ForcingDiscovery out;
  const Index d = b.spec.n_forcings, n = b.spec.n_stations;
  std::vector<Index> times;
  for (Index t = begin; t < end; ++t)
    if (p.usable[static_cast<std::size_t>(t)]) times.push_back(t);
  require(!times.empty(), "no usable rows for forcing discovery");
  const Index rows = static_cast<Index>(times.size());
  for (Index k = 0; k < n; ++k) {
    Matrix x(rows, d);
    for (Index i = 0; i < rows; ++i) x.row(i) = p.forcings.row(times[static_cast<std::size_t>(i)], k);
    auto post = repr::encode(b.codec, b.params, x, 0);
    ad::Tape tape;
    nn::Binding bind(tape, b.params, false);
    auto [dec, tan] = b.codec.decode_with_jacobian(bind, tape.constant(post.loc));
    std::vector<Matrix> jm;
    jm.reserve(static_cast<std::size_t>(rows));
    for (Index r = 0; r < rows; ++r) jm.push_back(graph::detail::instance(tan.value(), r, rows, d));
    auto jg = graph::causal_jacobians(jm, max_condition);
    std::vector<std::vector<Matrix>> steps;
    Matrix raw = Matrix::Zero(d, d);
    for (auto& g : jg) {
      g.diagonal().setZero();
      raw += g.cwiseAbs() / static_cast<double>(rows);
      steps.push_back(graph::normalize_by_max({g}));
    }
    out.per_station.push_back(graph::aggregate_dags_detailed(steps, tau));
    out.raw_mean.push_back(raw);
  }
  return out;
}

struct RoutingDiscovery {
  graph::AggregateResult graph;
  std::vector<Matrix> raw_mean;  // mean physical-unit sensitivity per slice
};

/// Routing Jacobian of the one-step map over the given windows, in physical
/// flow units, normalized per window and aggregated at tau.
inline RoutingDiscovery discover_routing(const ModelBundle& b, const Prepared& p, const std::vector<Index>& ends,
                                         double tau, Index chunk = 256) {
  require(!ends.empty(), "no windows for routing discovery");
  const auto& w = b.spec.window;
  const Index n = b.spec.n_stations, lag = b.spec.max_lag, len = w.history_len;
  forecast::WindowConfig one = w;
  one.horizon = 1;
  std::vector<std::vector<Matrix>> per_step;
  std::vector<Matrix> raw(static_cast<std::size_t>(lag + 1), Matrix::Zero(n, n));
  for (std::size_t s = 0; s < ends.size(); s += static_cast<std::size_t>(chunk)) {
    std::vector<Index> part(ends.begin() + static_cast<long>(s),
                            ends.begin() + static_cast<long>(std::min(ends.size(), s + static_cast<std::size_t>(chunk))));
    const Index m = static_cast<Index>(part.size());
    WindowBatch wb = make_batch(p, one, part);
    const Matrix runoff = repr::generate_runoff(b.runoff, b.params, wb.forcing_rows);
    Matrix context(n * m, lag + 1);
    context.col(0) = wb.targets[0];
    for (Index l = 1; l <= lag; ++l) context.col(l) = wb.q[static_cast<std::size_t>(len - l)];
    graph::ContextMap fn = [&](ad::Tape& tape, const ad::Var& ctx) {
      nn::Binding bind(tape, b.params, false);
      auto r = runoff_positions(tape.constant(runoff), n, wb.positions, m);
      forecast::StepInputs in;
      for (Index pos = 0; pos < len; ++pos) {
        const Index l = len - pos;
        in.q.push_back(l <= lag ? ad::slice_cols(ctx, l, 1) : tape.constant(wb.q[static_cast<std::size_t>(pos)]));
        in.r.push_back(r[static_cast<std::size_t>(pos)]);
      }
      in.r_next = b.forecaster.mode() == forecast::ConditioningMode::kForecastForcings
                      ? r[static_cast<std::size_t>(len)]
                      : r[static_cast<std::size_t>(len - 1)];
      auto adj = b.forecaster.adjacency(bind);
      return b.forecaster.step(bind, in, adj, ad::slice_cols(ctx, 0, 1)).prediction;
    };
    auto slices = graph::routing_jacobian(fn, context, b.spec.river_mask, lag);
    for (auto& step : slices) {
      for (auto& sl : step)
        for (Index k = 0; k < n; ++k)
          for (Index j = 0; j < n; ++j) sl(k, j) *= p.stats.flow_std(k) / p.stats.flow_std(j);
      for (std::size_t l = 0; l < step.size(); ++l) raw[l] += step[l].cwiseAbs() / static_cast<double>(ends.size());
      per_step.push_back(graph::normalize_by_max(step));
    }
  }
  RoutingDiscovery out;
  out.graph = graph::aggregate_dags_detailed(per_step, tau);
  out.raw_mean = raw;
  return out;
}

}  // namespace caustream::train
