#pragma once

// Domain types shared by every module.
//
// Adjacency convention everywhere: adj(target, source) != 0 means an edge
// source -> target. Lag-indexed graphs store slice 0 (instantaneous) first,
// slice l for lag l.

#include <set>
#include <string>
#include <vector>

#include "caustream/core/date.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/linalg.hpp"
#include "caustream/core/panel.hpp"

namespace caustream::scm {

struct DatasetSchema {
  Index n_stations = 0;
  Index n_forcings = 0;
  Index runoff_dim = 2;
  Index max_lag = 1;
  Index n_timesteps = 0;
  std::vector<std::string> station_ids;
  std::vector<std::string> forcing_names;

  void validate() const {
    if (n_stations <= 0 || n_forcings <= 0 || runoff_dim <= 0 || n_timesteps <= 0)
      throw SchemaError("dimensions must be positive");
    if (max_lag < 0) throw SchemaError("max_lag must be non-negative");
    if (max_lag >= n_timesteps) throw SchemaError("max_lag must be smaller than n_timesteps");
    if (static_cast<Index>(station_ids.size()) != n_stations)
      throw SchemaError("station_ids must have n_stations entries");
    if (static_cast<Index>(forcing_names.size()) != n_forcings)
      throw SchemaError("forcing_names must have n_forcings entries");
    if (std::set<std::string>(station_ids.begin(), station_ids.end()).size() !=
        station_ids.size())
      throw SchemaError("station_ids are not unique");
    if (std::set<std::string>(forcing_names.begin(), forcing_names.end()).size() !=
        forcing_names.size())
      throw SchemaError("forcing_names are not unique");
  }

  bool operator==(const DatasetSchema&) const = default;
};

struct SpatioTemporalDataset {
  DatasetSchema schema;
  Panel forcings;              // T x N x d_f
  Matrix streamflow;           // T x N
  Matrix river_mask;           // N x N, mask(k, j) = 1 if j may influence k
  std::vector<Date> timestamps;
  std::vector<bool> usable;    // per time step; false inside long data gaps

  Index times() const { return schema.n_timesteps; }
  Index stations() const { return schema.n_stations; }

  void validate() const {
    schema.validate();
    const Index t = schema.n_timesteps, n = schema.n_stations;
    if (forcings.times() != t || forcings.stations() != n ||
        forcings.features() != schema.n_forcings)
      throw SchemaError("forcings panel shape does not match schema");
    if (streamflow.rows() != t || streamflow.cols() != n)
      throw SchemaError("streamflow shape does not match schema");
    if (river_mask.rows() != n || river_mask.cols() != n)
      throw SchemaError("river_mask must be N x N");
    if (static_cast<Index>(timestamps.size()) != t)
      throw SchemaError("timestamps must have T entries");
    if (!usable.empty() && static_cast<Index>(usable.size()) != t)
      throw SchemaError("usable flags must have T entries");
    for (Index i = 0; i < n; ++i)
      if (river_mask(i, i) != 1.0) throw StructuralError("river_mask diagonal must be 1");
    for (Index i = 0; i < river_mask.size(); ++i)
      if (river_mask(i) != 0.0 && river_mask(i) != 1.0)
        throw StructuralError("river_mask must be binary");
    Matrix off = river_mask;
    off.diagonal().setZero();
    if (!linalg::is_acyclic(off)) throw StructuralError("river_mask support has a cycle");
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] <= timestamps[i - 1])
        throw SchemaError("timestamps must be strictly increasing");
    if (!forcings.all_finite()) throw InputError("non-finite forcing values");
    if (!streamflow.allFinite()) throw InputError("non-finite streamflow values");
  }

  bool is_usable(Index t) const {
    return usable.empty() || usable[static_cast<std::size_t>(t)];
  }
};

/// Real-valued, optionally lag-indexed adjacency estimate.
struct WeightedDag {
  std::vector<Matrix> slices;
  std::vector<std::string> node_labels;
  bool lag_indexed = false;

  void validate() const {
    require(!slices.empty(), "weighted dag without slices");
    const auto& s0 = slices.front();
    for (Index i = 0; i < s0.rows(); ++i)
      require(s0(i, i) == 0.0, "instantaneous self-loop in weighted dag");
  }
};

/// Thresholded adjacency; slice 0 must be acyclic.
struct BinaryDag {
  std::vector<Matrix> slices;
  double threshold_used = 0.5;

  Index nodes() const { return slices.empty() ? 0 : slices.front().rows(); }
  bool lag_indexed() const { return slices.size() > 1; }

  void validate() const {
    require(!slices.empty(), "binary dag without slices");
    for (const auto& s : slices)
      for (Index i = 0; i < s.size(); ++i)
        require(s(i) == 0.0 || s(i) == 1.0, "binary dag entries must be 0/1");
    if (!linalg::is_acyclic(slices.front()))
      throw StructuralError("instantaneous slice of binary dag has a cycle");
  }

  Index edge_count() const {
    Index e = 0;
    for (const auto& s : slices) e += static_cast<Index>((s.array() != 0.0).count());
    return e;
  }
};

}  // namespace caustream::scm
