#pragma once

// Standardization, chronological splits and window batches.

#include <algorithm>
#include <cmath>
#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/forecast/window.hpp"
#include "caustream/scm/types.hpp"

namespace caustream::train {

/// Per-variable z-score statistics: forcings per variable, flow per station.
struct Standardization {
  Eigen::VectorXd forcing_mean, forcing_std;  // d_f
  Eigen::VectorXd flow_mean, flow_std;        // N

  bool operator==(const Standardization& o) const {
    return forcing_mean == o.forcing_mean && forcing_std == o.forcing_std &&
           flow_mean == o.flow_mean && flow_std == o.flow_std;
  }
};

/// Chronological split boundaries as half-open time ranges.
struct Split {
  Index train_begin = 0, train_end = 0, val_end = 0, test_end = 0;
};

inline Split chronological_split(Index t, double train_frac = 0.70, double val_frac = 0.15) {
  require(t > 0, "empty time axis");
  require(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0, "bad split fractions");
  Split s;
  s.train_end = static_cast<Index>(std::floor(train_frac * static_cast<double>(t)));
  s.val_end = static_cast<Index>(std::floor((train_frac + val_frac) * static_cast<double>(t)));
  s.test_end = t;
  return s;
}

/// Statistics over usable rows in [begin, end) only.
inline Standardization fit_standardization(const scm::SpatioTemporalDataset& ds, Index begin, Index end) {
  const Index n = ds.stations(), d = ds.schema.n_forcings;
  Standardization st;
  st.forcing_mean = Eigen::VectorXd::Zero(d);
  st.forcing_std = Eigen::VectorXd::Zero(d);
  st.flow_mean = Eigen::VectorXd::Zero(n);
  st.flow_std = Eigen::VectorXd::Zero(n);
  double count = 0.0;
  for (Index t = begin; t < end; ++t) {
    if (!ds.is_usable(t)) continue;
    count += 1.0;
    for (Index k = 0; k < n; ++k) {
      st.flow_mean(k) += ds.streamflow(t, k);
      for (Index i = 0; i < d; ++i) st.forcing_mean(i) += ds.forcings(t, k, i);
    }
  }
  if (count < 2.0) throw LoadError("training split has fewer than two usable rows");
  st.flow_mean /= count;
  st.forcing_mean /= count * static_cast<double>(n);
  for (Index t = begin; t < end; ++t) {
    if (!ds.is_usable(t)) continue;
    for (Index k = 0; k < n; ++k) {
      st.flow_std(k) += std::pow(ds.streamflow(t, k) - st.flow_mean(k), 2);
      for (Index i = 0; i < d; ++i) st.forcing_std(i) += std::pow(ds.forcings(t, k, i) - st.forcing_mean(i), 2);
    }
  }
  st.flow_std = (st.flow_std / count).cwiseSqrt();
  st.forcing_std = (st.forcing_std / (count * static_cast<double>(n))).cwiseSqrt();
  for (Index k = 0; k < n; ++k)
    if (!(st.flow_std(k) > 0.0)) throw LoadError("station " + ds.schema.station_ids[static_cast<std::size_t>(k)] + " has constant training flow");
  for (Index i = 0; i < d; ++i)
    if (!(st.forcing_std(i) > 0.0)) throw LoadError("forcing " + ds.schema.forcing_names[static_cast<std::size_t>(i)] + " is constant on the training split");
  return st;
}

/// Standardized copies of the panels.
struct Prepared {
  Panel forcings;   // T x N x d_f
  Matrix flow;      // T x N
  Standardization stats;
  Split split;
  Index max_lag = 0;
  std::vector<bool> usable;
};

/// Standardizes with given statistics, e.g. those stored in a checkpoint.
inline Prepared prepare(const scm::SpatioTemporalDataset& ds, const Split& split, const Standardization& stats) {
  Prepared p;
  p.split = split;
  p.max_lag = ds.schema.max_lag;
  p.stats = stats;
  if (stats.forcing_mean.size() != ds.schema.n_forcings || stats.flow_mean.size() != ds.stations())
    throw SchemaError("standardization does not match the dataset dimensions");
  p.forcings = ds.forcings;
  p.flow = ds.streamflow;
  const Index n = ds.stations(), d = ds.schema.n_forcings;
  for (Index t = 0; t < ds.times(); ++t)
    for (Index k = 0; k < n; ++k) {
      p.flow(t, k) = (p.flow(t, k) - p.stats.flow_mean(k)) / p.stats.flow_std(k);
      for (Index i = 0; i < d; ++i)
        p.forcings(t, k, i) = (p.forcings(t, k, i) - p.stats.forcing_mean(i)) / p.stats.forcing_std(i);
    }
  p.usable.resize(static_cast<std::size_t>(ds.times()));
  for (Index t = 0; t < ds.times(); ++t) p.usable[static_cast<std::size_t>(t)] = ds.is_usable(t);
  return p;
}

inline Prepared prepare(const scm::SpatioTemporalDataset& ds, const Split& split) {
  return prepare(ds, split, fit_standardization(ds, split.train_begin, split.train_end));
}

inline double destandardize_flow(const Standardization& s, Index k, double z) {
  return z * s.flow_std(k) + s.flow_mean(k);
}

/// Window end indices t (last observed step) whose history [t-l+1, t] and
/// targets [t+1, t+H] lie inside [begin, end), past the first L warm-up steps,
/// and on usable rows only.
inline std::vector<Index> window_ends(const Prepared& p, const forecast::WindowConfig& w, Index begin, Index end) {
  std::vector<Index> out;
  const Index lo = std::max(begin, p.max_lag) + w.history_len - 1;
  for (Index t = lo; t + w.horizon < end; ++t) {
    bool ok = true;
    for (Index s = t - w.history_len + 1; s <= t + w.horizon && ok; ++s) ok = p.usable[static_cast<std::size_t>(s)];
    if (ok) out.push_back(t);
  }
  return out;
}

/// Dense tensors of one batch of windows; station-major rows k*B + b.
struct WindowBatch {
  Index batch = 0, stations = 0, positions = 0;  // positions = l + H
  std::vector<Matrix> q;              // l columns, (N*B) x 1
  std::vector<Matrix> targets;        // H columns, (N*B) x 1
  Matrix forcing_rows;                // (N*P*B) x d_f, row k*P*B + p*B + b
  Matrix elbo_rows;                   // (N*B) x d_f forcings at the last observed step
  std::vector<Index> ends;
};

inline WindowBatch make_batch(const Prepared& p, const forecast::WindowConfig& w, const std::vector<Index>& ends) {
  WindowBatch wb;
  const Index n = p.flow.cols(), d = p.forcings.features(), len = w.history_len, hz = w.horizon;
  const Index nb = static_cast<Index>(ends.size());
  wb.batch = nb;
  wb.stations = n;
  wb.positions = len + hz;
  wb.ends = ends;
  for (Index pos = 0; pos < len; ++pos) {
    Matrix c(n * nb, 1);
    for (Index k = 0; k < n; ++k)
      for (Index b = 0; b < nb; ++b) c(k * nb + b, 0) = p.flow(ends[static_cast<std::size_t>(b)] - len + 1 + pos, k);
    wb.q.push_back(std::move(c));
  }
  for (Index h = 0; h < hz; ++h) {
    Matrix c(n * nb, 1);
    for (Index k = 0; k < n; ++k)
      for (Index b = 0; b < nb; ++b) c(k * nb + b, 0) = p.flow(ends[static_cast<std::size_t>(b)] + 1 + h, k);
    wb.targets.push_back(std::move(c));
  }
  const Index pp = wb.positions;
  wb.forcing_rows.resize(n * pp * nb, d);
  wb.elbo_rows.resize(n * nb, d);
  for (Index k = 0; k < n; ++k)
    for (Index pos = 0; pos < pp; ++pos)
      for (Index b = 0; b < nb; ++b) {
        const Index t = ends[static_cast<std::size_t>(b)] - len + 1 + pos;
        wb.forcing_rows.row(k * pp * nb + pos * nb + b) = p.forcings.row(t, k);
        if (pos == len - 1) wb.elbo_rows.row(k * nb + b) = p.forcings.row(t, k);
      }
  return wb;
}

/// Splits generator output in the forcing_rows layout into per-position
/// (N*B) x d_r tensors.
inline std::vector<ad::Var> runoff_positions(const ad::Var& runoff, Index stations, Index positions, Index batch) {
  std::vector<ad::Var> out;
  for (Index pos = 0; pos < positions; ++pos) {
    std::vector<Index> rows;
    rows.reserve(static_cast<std::size_t>(stations * batch));
    for (Index k = 0; k < stations; ++k)
      for (Index b = 0; b < batch; ++b) rows.push_back(k * positions * batch + pos * batch + b);
    out.push_back(ad::gather_rows(runoff, rows));
  }
  return out;
}

}  // namespace caustream::train
