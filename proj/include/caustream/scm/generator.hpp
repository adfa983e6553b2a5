#pragma once

// Synthetic basins drawn from a known structural causal model.
//
// Every draw satisfies the identifiability assumptions by construction:
// non-Gaussian independent noises and structural functions whose partial
// derivatives along every edge are bounded away from zero on average.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "caustream/core/date.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/linalg.hpp"
#include "caustream/scm/structural.hpp"
#include "caustream/scm/types.hpp"

namespace caustream::scm {

enum class ForcingGraphKind { kChain, kRandom, kEmpty };
enum class NetworkKind { kLine, kTree };

struct GeneratorConfig {
  Index n_stations = 5;
  Index n_forcings = 4;
  Index runoff_dim = 2;
  Index max_lag = 1;
  Index n_timesteps = 5000;
  ForcingGraphKind forcing_graph = ForcingGraphKind::kChain;
  double forcing_edge_prob = 0.5;
  NetworkKind network = NetworkKind::kLine;
  bool transitive_mask = true;        // mask = all upstream stations, not only neighbours
  Index travel_lag = 1;               // lag carried by station-to-station routing edges
  double instantaneous_edge_prob = 0.0;
  double routing_weight_min = 0.4;    // self persistence and river edges share this range
  double routing_weight_max = 0.6;
  bool heterogeneous_runoff = false;  // per-station runoff functions
  NoiseFamily noise_family = NoiseFamily::kLaplace;
  double relative_noise = 0.1;
  double forcing_noise = -1.0;  // relative noise of forcing children; < 0 uses relative_noise
  Index hidden_units = 4;
  double weight_floor = 0.3;
  double weight_ceiling = 1.0;
  std::uint64_t seed = 0;
  Date start = make_date(1973, 10, 1);

  void validate() const {
    if (n_stations <= 0 || n_forcings <= 0 || runoff_dim <= 0 || n_timesteps <= 0)
      throw ConfigError("generator dimensions must be positive");
    if (max_lag < 0 || max_lag >= n_timesteps) throw ConfigError("need 0 <= max_lag < T");
    if (travel_lag < 0 || travel_lag > max_lag) throw ConfigError("travel_lag must be in [0, L]");
    if (travel_lag == 0 && instantaneous_edge_prob > 0.0)
      throw ConfigError("travel_lag 0 already places every edge instantaneously");
    if (routing_weight_min <= 0.0 || routing_weight_max < routing_weight_min)
      throw ConfigError("routing weight range must satisfy 0 < min <= max");
    if (weight_floor <= 0.0 || weight_ceiling < weight_floor)
      throw ConfigError("weight range must satisfy 0 < floor <= ceiling");
    if (noise_family == NoiseFamily::kGaussian)
      throw AssumptionError("gaussian exogenous noise breaks identifiability; use laplace, "
                            "uniform or gumbel");
  }
};

struct GeneratedData {
  SpatioTemporalDataset dataset;
  GroundTruthScm truth;
  Panel truth_runoff;  // T x N x d_r
};

namespace detail {

inline Rng stage_rng(std::uint64_t seed, std::uint64_t stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(stage),
                    0x5eedu};
  return Rng(seq);
}

inline double dead_zone_weight(Rng& rng, double lo, double hi, bool positive = false) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  const double m = mag(rng);
  return positive || sign(rng) ? m : -m;
}

inline Matrix dead_zone_matrix(Index r, Index c, Rng& rng, double lo, double hi) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = dead_zone_weight(rng, lo, hi);
  return m;
}

/// Mean |d f / d x_p| over standard-normal inputs, per input.
inline Eigen::VectorXd mean_abs_sensitivity(const StructuralFunction& f, Rng& rng, int draws = 256) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(f.in_dim);
  for (int s = 0; s < draws; ++s) {
    Matrix x(1, f.in_dim);
    for (Index i = 0; i < f.in_dim; ++i) x(0, i) = z(rng);
    acc += f.jacobian(x).cwiseAbs().colwise().sum().transpose();
  }
  return acc / static_cast<double>(draws);
}

/// Random tanh perceptron in -> out, resampled until every input has a
/// mean absolute effect of at least `floor` (functional faithfulness).
inline StructuralFunction faithful_perceptron(Index in, Index out, Index hidden, Rng& rng,
                                              double lo, double hi) {
  std::uniform_real_distribution<double> bias(-0.5, 0.5);
  StructuralFunction best;
  double best_min = -1.0;
  for (int attempt = 0; attempt < 200; ++attempt) {
    StructuralFunction f = StructuralFunction::zero(in, out);
    f.w1 = dead_zone_matrix(in, hidden, rng, lo, hi);
    f.b1 = Matrix(1, hidden);
    for (Index h = 0; h < hidden; ++h) f.b1(0, h) = bias(rng);
    f.w2 = dead_zone_matrix(hidden, out, rng, lo, hi);
    if (in == 0) return f;
    const double m = mean_abs_sensitivity(f, rng).minCoeff();
    if (m >= lo) return f;
    if (m > best_min) {
      best_min = m;
      best = f;
    }
  }
  return best;
}

inline std::vector<std::string> default_forcing_names(Index d) {
  static const char* kNames[] = {"precipitation", "tmin", "tmax", "wind"};
  std::vector<std::string> names;
  for (Index i = 0; i < d; ++i)
    names.push_back(i < 4 ? std::string(kNames[i]) : "forcing_" + std::to_string(i));
  return names;
}

inline std::vector<std::string> default_station_ids(Index n) {
  std::vector<std::string> ids;
  for (Index i = 0; i < n; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%02ld", static_cast<long>(i + 1));
    ids.emplace_back(buf);
  }
  return ids;
}

/// downstream[j] for each station (-1 for the outlet).
inline std::vector<Index> river_network(NetworkKind kind, Index n) {
  std::vector<Index> down(static_cast<std::size_t>(n), -1);
  for (Index j = 0; j + 1 < n; ++j) {
    Index d = kind == NetworkKind::kLine ? j + 1 : j + 2 - (j % 2);
    down[static_cast<std::size_t>(j)] = std::min(d, n - 1);
  }
  return down;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sampling operations. Each is a pure function of its inputs and seed.

inline Panel sample_forcing_panel(const GroundTruthScm& scm, const DatasetSchema& schema,
                                  std::uint64_t seed) {
  const Index d = scm.forcings();
  if (d != schema.n_forcings) throw SchemaError("scm forcing count differs from schema");
  auto order = linalg::topological_order(scm.forcing_dag.slices.front());
  if (!order) throw StructuralError("forcing_dag has a cycle");
  scm.noise.validate();
  Rng rng = detail::stage_rng(seed, 1);
  const Index t_max = schema.n_timesteps, n = schema.n_stations;
  Panel out(t_max, n, d);
  Matrix parents_row;
  for (Index t = 0; t < t_max; ++t) {
    for (Index k = 0; k < n; ++k) {
      for (Index node : *order) {
        const auto& pa = scm.forcing_parents[static_cast<std::size_t>(node)];
        parents_row.resize(1, static_cast<Index>(pa.size()));
        for (std::size_t p = 0; p < pa.size(); ++p)
          parents_row(0, static_cast<Index>(p)) = out(t, k, pa[p]);
        double v = scm.forcing_functions[static_cast<std::size_t>(node)](parents_row)(0, 0);
        v += scm.noise.forcing_scale(node) * draw_noise(scm.noise.family, rng);
        if (!std::isfinite(v))
          throw GenerationError("non-finite forcing at node " + std::to_string(node) +
                                ", timestep " + std::to_string(t));
        out(t, k, node) = v;
      }
    }
  }
  return out;
}

inline Panel sample_runoff(const Panel& forcings, const GroundTruthScm& scm,
                           std::uint64_t seed) {
  const Index n = forcings.stations();
  if (static_cast<Index>(scm.runoff_functions.size()) != n)
    throw SchemaError("runoff functions do not match station count");
  if (forcings.features() != scm.forcings())
    throw SchemaError("forcing width does not match the scm");
  if (!forcings.all_finite()) throw InputError("non-finite forcings");
  scm.noise.validate();
  const Index dr = scm.runoff_dim();
  Rng rng = detail::stage_rng(seed, 2);
  Panel out(forcings.times(), n, dr);
  for (Index t = 0; t < forcings.times(); ++t) {
    for (Index k = 0; k < n; ++k) {
      Matrix r = scm.runoff_functions[static_cast<std::size_t>(k)](forcings.row(t, k));
      for (Index i = 0; i < dr; ++i)
        out(t, k, i) = r(0, i) + scm.noise.runoff_scale(k, i) * draw_noise(scm.noise.family, rng);
    }
  }
  return out;
}

inline Matrix route_streamflow(const Panel& runoff, const GroundTruthScm& scm,
                               std::uint64_t seed) {
  const Index n = runoff.stations();
  const Index lag = scm.max_lag();
  if (scm.stations() != n) throw SchemaError("routing dag does not match station count");
  auto order = linalg::topological_order(scm.routing_dag.slices.front());
  if (!order) throw StructuralError("instantaneous routing slice has a cycle");
  scm.noise.validate();
  Rng rng = detail::stage_rng(seed, 3);
  const Index t_max = runoff.times();
  Matrix q = Matrix::Zero(t_max, n);
  for (Index t = 0; t < std::min(lag, t_max); ++t)
    for (Index k = 0; k < n; ++k)
      q(t, k) = scm.noise.streamflow_scale(k) * draw_noise(scm.noise.family, rng);
  for (Index t = lag; t < t_max; ++t) {
    for (Index k : *order) {
      double v = scm.runoff_to_flow[static_cast<std::size_t>(k)](runoff.row(t, k))(0, 0);
      for (Index l = 0; l <= lag; ++l) {
        const Matrix& w = scm.routing_weights[static_cast<std::size_t>(l)];
        for (Index j = 0; j < n; ++j)
          if (w(k, j) != 0.0) v += w(k, j) * q(t - l, j);
      }
      v += scm.noise.streamflow_scale(k) * draw_noise(scm.noise.family, rng);
      if (!std::isfinite(v))
        throw GenerationError("non-finite streamflow at station " + std::to_string(k) +
                              ", timestep " + std::to_string(t));
      q(t, k) = v;
    }
  }
  return q;
}

// ---------------------------------------------------------------------------

inline DatasetSchema schema_for(const GeneratorConfig& cfg) {
  DatasetSchema s;
  s.n_stations = cfg.n_stations;
  s.n_forcings = cfg.n_forcings;
  s.runoff_dim = cfg.runoff_dim;
  s.max_lag = cfg.max_lag;
  s.n_timesteps = cfg.n_timesteps;
  s.station_ids = detail::default_station_ids(cfg.n_stations);
  s.forcing_names = detail::default_forcing_names(cfg.n_forcings);
  return s;
}

inline Matrix river_mask_for(const GeneratorConfig& cfg) {
  const Index n = cfg.n_stations;
  auto down = detail::river_network(cfg.network, n);
  Matrix direct = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j)
    if (down[static_cast<std::size_t>(j)] >= 0) direct(down[static_cast<std::size_t>(j)], j) = 1.0;
  Matrix mask = cfg.transitive_mask ? linalg::transitive_closure(direct) : direct;
  mask.diagonal().setOnes();
  return mask;
}

/// Draws the SCM structure and calibrates its noise scales and intercepts.
inline GroundTruthScm draw_scm(const GeneratorConfig& cfg) {
  cfg.validate();
  Rng rng = detail::stage_rng(cfg.seed, 0);
  const Index d = cfg.n_forcings, n = cfg.n_stations, dr = cfg.runoff_dim, lag = cfg.max_lag;
  const double lo = cfg.weight_floor, hi = cfg.weight_ceiling;
  GroundTruthScm scm;

  // Forcing DAG over a random topological order (identity order for chains).
  std::vector<Index> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  if (cfg.forcing_graph == ForcingGraphKind::kRandom) std::shuffle(perm.begin(), perm.end(), rng);
  Matrix fdag = Matrix::Zero(d, d);
  std::bernoulli_distribution edge(cfg.forcing_edge_prob);
  for (Index a = 0; a < d; ++a)
    for (Index b = a + 1; b < d; ++b) {
      const Index src = perm[static_cast<std::size_t>(a)], dst = perm[static_cast<std::size_t>(b)];
      bool on = false;
      if (cfg.forcing_graph == ForcingGraphKind::kChain) on = b == a + 1;
      if (cfg.forcing_graph == ForcingGraphKind::kRandom) on = edge(rng);
      if (on) fdag(dst, src) = 1.0;
    }
  scm.forcing_dag.slices = {fdag};
  scm.forcing_dag.threshold_used = 1.0;
  for (Index i = 0; i < d; ++i) {
    std::vector<Index> pa;
    for (Index j = 0; j < d; ++j)
      if (fdag(i, j) != 0.0) pa.push_back(j);
    scm.forcing_parents.push_back(pa);
    scm.forcing_functions.push_back(detail::faithful_perceptron(
        static_cast<Index>(pa.size()), 1, cfg.hidden_units, rng, lo, hi));
  }

  // Runoff generation: one shared function unless the basin is heterogeneous.
  StructuralFunction shared = detail::faithful_perceptron(d, dr, 2 * cfg.hidden_units, rng, lo, hi);
  for (Index k = 0; k < n; ++k)
    scm.runoff_functions.push_back(
        cfg.heterogeneous_runoff ? detail::faithful_perceptron(d, dr, 2 * cfg.hidden_units, rng, lo, hi)
                                 : shared);

  // Routing: self persistence plus river edges at the travel lag.
  const Matrix mask = river_mask_for(cfg);
  auto down = detail::river_network(cfg.network, n);
  scm.routing_weights.assign(static_cast<std::size_t>(lag + 1), Matrix::Zero(n, n));
  std::uniform_real_distribution<double> persist(cfg.routing_weight_min, cfg.routing_weight_max);
  std::bernoulli_distribution inst(cfg.instantaneous_edge_prob);
  if (lag >= 1)
    for (Index k = 0; k < n; ++k) scm.routing_weights[1](k, k) = persist(rng);
  for (Index j = 0; j < n; ++j) {
    const Index k = down[static_cast<std::size_t>(j)];
    if (k < 0) continue;
    scm.routing_weights[static_cast<std::size_t>(cfg.travel_lag)](k, j) =
        detail::dead_zone_weight(rng, cfg.routing_weight_min, cfg.routing_weight_max, true);
    if (cfg.travel_lag > 0 && inst(rng))
      scm.routing_weights[0](k, j) =
          detail::dead_zone_weight(rng, cfg.routing_weight_min, cfg.routing_weight_max, true);
  }
  scm.routing_dag.threshold_used = 1.0;
  for (const auto& w : scm.routing_weights)
    scm.routing_dag.slices.push_back((w.array() != 0.0).cast<double>().matrix());

  for (Index k = 0; k < n; ++k) {
    Matrix c(dr, 1);
    std::uniform_real_distribution<double> u(0.5, 1.0);
    for (Index i = 0; i < dr; ++i) c(i, 0) = u(rng);
    scm.runoff_to_flow.push_back(StructuralFunction::linear_map(c));
  }

  // Noise calibration on a pilot sample: children get relative_noise times
  // the standard deviation of their structural signal; roots are unit scale.
  scm.noise.family = cfg.noise_family;
  scm.noise.relative_scale = cfg.relative_noise;
  scm.noise.seed = cfg.seed;
  scm.noise.forcing_scale = Eigen::VectorXd::Ones(d);
  scm.noise.runoff_scale = Matrix::Zero(n, dr);
  scm.noise.streamflow_scale = Eigen::VectorXd::Zero(n);
  const Index pilot = 2000;
  auto order = linalg::topological_order(fdag);
  Rng prng = detail::stage_rng(cfg.seed, 99);
  Matrix pf(pilot, d);
  for (Index node : *order) {
    const auto& pa = scm.forcing_parents[static_cast<std::size_t>(node)];
    Matrix x(pilot, static_cast<Index>(pa.size()));
    for (std::size_t p = 0; p < pa.size(); ++p) x.col(static_cast<Index>(p)) = pf.col(pa[p]);
    Matrix signal = scm.forcing_functions[static_cast<std::size_t>(node)](x);
    double sd = 1.0;
    if (!pa.empty()) {
      const double mu = signal.mean();
      const double rel = cfg.forcing_noise < 0.0 ? cfg.relative_noise : cfg.forcing_noise;
      sd = rel * std::sqrt((signal.array() - mu).square().mean());
    }
    scm.noise.forcing_scale(node) = sd;
    for (Index r = 0; r < pilot; ++r)
      pf(r, node) = signal(r, 0) + sd * draw_noise(cfg.noise_family, prng);
  }
  for (Index k = 0; k < n; ++k) {
    Matrix r = scm.runoff_functions[static_cast<std::size_t>(k)](pf);
    for (Index i = 0; i < dr; ++i) {
      const double mu = r.col(i).mean();
      scm.noise.runoff_scale(k, i) =
          cfg.relative_noise * std::sqrt((r.col(i).array() - mu).square().mean());
    }
    Matrix g = scm.runoff_to_flow[static_cast<std::size_t>(k)](r);
    const double mu = g.mean();
    scm.noise.streamflow_scale(k) =
        cfg.relative_noise * std::sqrt((g.array() - mu).square().mean());
  }
  scm.validate(&mask);

  // Intercepts keep every station's flow positive.
  DatasetSchema ps = schema_for(cfg);
  ps.n_timesteps = pilot;
  Panel pforc = sample_forcing_panel(scm, ps, cfg.seed ^ 0xabcdefULL);
  Panel prun = sample_runoff(pforc, scm, cfg.seed ^ 0xabcdefULL);
  Matrix pq = route_streamflow(prun, scm, cfg.seed ^ 0xabcdefULL);
  for (Index k = 0; k < n; ++k) {
    const auto col = pq.col(k).tail(pilot - lag);
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    double persistence = 0.0;
    for (const auto& w : scm.routing_weights) persistence += w(k, k);
    const double need = std::max(0.0, -col.minCoeff()) + 2.0 * sd + 1.0;
    scm.runoff_to_flow[static_cast<std::size_t>(k)].bias(0, 0) = (1.0 - persistence) * need;
  }
  return scm;
}

inline GeneratedData generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  GeneratedData out;
  try {
    out.truth = draw_scm(cfg);
    DatasetSchema schema = schema_for(cfg);
    schema.validate();
    auto& ds = out.dataset;
    ds.schema = schema;
    ds.river_mask = river_mask_for(cfg);
    ds.forcings = sample_forcing_panel(out.truth, schema, cfg.seed + 1);
    out.truth_runoff = sample_runoff(ds.forcings, out.truth, cfg.seed + 2);
    ds.streamflow = route_streamflow(out.truth_runoff, out.truth, cfg.seed + 3);
    for (Index t = 0; t < cfg.n_timesteps; ++t) ds.timestamps.push_back(cfg.start + std::chrono::days{t});
    ds.usable.assign(static_cast<std::size_t>(cfg.n_timesteps), true);
    ds.validate();
  } catch (const Error& e) {
    throw GenerationError(std::string("generate_dataset: ") + e.what());
  }
  return out;
}

}  // namespace caustream::scm
