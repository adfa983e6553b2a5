#pragma once

// Per-step normalization, temporal averaging, binarization and export of graphs.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "caustream/core/errors.hpp"
#include "caustream/core/linalg.hpp"
#include "caustream/scm/types.hpp"
#include "json.hpp"

namespace caustream::graph {

/// Divides every slice of one step by the largest |entry| across all slices.
inline std::vector<Matrix> normalize_by_max(const std::vector<Matrix>& slices, double guard = 1e-12) {
  double m = 0.0;
  for (const auto& s : slices) m = std::max(m, s.cwiseAbs().maxCoeff());
  std::vector<Matrix> out;
  for (const auto& s : slices) out.push_back(s.cwiseAbs() / std::max(m, guard));
  return out;
}

/// Removes the weakest edge of slice 0 until its support is acyclic. Returns
/// the removed (target, source) pairs so callers can log them.
inline std::vector<std::pair<Index, Index>> break_cycles(Matrix& binary, const Matrix& weights) {
  std::vector<std::pair<Index, Index>> removed;
  binary.diagonal().setZero();
  while (!linalg::is_acyclic(binary)) {
    // Candidate edges are those lying on some cycle: i -> j with j reaching i.
    Matrix reach = linalg::transitive_closure(binary);
    double best = std::numeric_limits<double>::infinity();
    Index bi = -1, bj = -1;
    for (Index i = 0; i < binary.rows(); ++i)
      for (Index j = 0; j < binary.cols(); ++j)
        if (binary(i, j) != 0.0 && reach(j, i) != 0.0 && weights(i, j) < best) {
          best = weights(i, j);
          bi = i;
          bj = j;
        }
    require(bi >= 0, "cycle without a removable edge");
    binary(bi, bj) = 0.0;
    removed.emplace_back(bi, bj);
  }
  return removed;
}

struct AggregateResult {
  scm::BinaryDag binary;
  std::vector<Matrix> mean;  // time-averaged normalized weights
  std::vector<std::pair<Index, Index>> broken;  // slice-0 edges dropped to restore acyclicity
};

/// Time average of per-step [0,1] adjacencies, then 1[mean >= tau] on entries
/// with positive mass.
inline AggregateResult aggregate_dags_detailed(const std::vector<std::vector<Matrix>>& per_step,
                                              double tau) {
  require(!per_step.empty(), "aggregate_dags of an empty sequence");
  require(tau >= 0.0, "tau must be non-negative");
  const auto& first = per_step.front();
  AggregateResult out;
  for (const auto& s : first) out.mean.push_back(Matrix::Zero(s.rows(), s.cols()));
  for (const auto& step : per_step) {
    require(step.size() == first.size(), "per-step graphs differ in slice count");
    for (std::size_t l = 0; l < step.size(); ++l) {
      require(step[l].rows() == first[l].rows() && step[l].cols() == first[l].cols(),
              "per-step graphs differ in shape");
      require(step[l].minCoeff() >= 0.0 && step[l].maxCoeff() <= 1.0 + 1e-12,
              "per-step entries must be normalized to [0,1]");
      out.mean[l] += step[l];
    }
  }
  for (auto& m : out.mean) m /= static_cast<double>(per_step.size());
  out.binary.threshold_used = tau;
  for (const auto& m : out.mean)
    out.binary.slices.push_back(((m.array() >= tau) && (m.array() > 0.0)).cast<double>().matrix());
  out.broken = break_cycles(out.binary.slices.front(), out.mean.front());
  return out;
}

inline scm::BinaryDag aggregate_dags(const std::vector<std::vector<Matrix>>& per_step, double tau) {
  return aggregate_dags_detailed(per_step, tau).binary;
}

inline scm::BinaryDag aggregate_dags(const std::vector<Matrix>& per_step, double tau) {
  std::vector<std::vector<Matrix>> wrapped;
  for (const auto& m : per_step) wrapped.push_back({m});
  return aggregate_dags(wrapped, tau);
}

// ---------------------------------------------------------------------------
// Export.

inline nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    nlohmann::json r = nlohmann::json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const Index r = static_cast<Index>(j.size());
  const Index c = r == 0 ? 0 : static_cast<Index>(j.front().size());
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index k = 0; k < c; ++k) m(i, k) = j.at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
  return m;
}

/// Edge list (source, target, lag) of a binary graph.
inline nlohmann::json edge_list_json(const scm::BinaryDag& g, const std::vector<std::string>& labels) {
  nlohmann::json edges = nlohmann::json::array();
  for (std::size_t l = 0; l < g.slices.size(); ++l)
    for (Index i = 0; i < g.slices[l].rows(); ++i)
      for (Index j = 0; j < g.slices[l].cols(); ++j)
        if (g.slices[l](i, j) != 0.0)
          edges.push_back({{"source", labels.at(static_cast<std::size_t>(j))},
                           {"target", labels.at(static_cast<std::size_t>(i))},
                           {"lag", l}});
  return edges;
}

inline nlohmann::json graph_json(const std::string& name, const std::vector<std::string>& labels,
                                 const std::vector<Matrix>& weighted, const scm::BinaryDag& binary,
                                 const nlohmann::json& metadata) {
  nlohmann::json g;
  g["name"] = name;
  g["node_labels"] = labels;
  g["lag_indexed"] = weighted.size() > 1;
  g["tau"] = binary.threshold_used;
  nlohmann::json w = nlohmann::json::array(), b = nlohmann::json::array();
  for (const auto& s : weighted) w.push_back(matrix_json(s));
  for (const auto& s : binary.slices) b.push_back(matrix_json(s));
  g["weighted"] = w;
  g["binary"] = b;
  g["edges"] = edge_list_json(binary, labels);
  g["aggregation"] = metadata;
  return g;
}

inline std::string graph_dot(const std::string& name, const std::vector<std::string>& labels,
                             const scm::BinaryDag& g) {
  std::ostringstream os;
  os << "digraph \"" << name << "\" {\n";
  for (const auto& l : labels) os << "  \"" << l << "\";\n";
  for (std::size_t lag = 0; lag < g.slices.size(); ++lag)
    for (Index i = 0; i < g.slices[lag].rows(); ++i)
      for (Index j = 0; j < g.slices[lag].cols(); ++j)
        if (g.slices[lag](i, j) != 0.0) {
          os << "  \"" << labels[static_cast<std::size_t>(j)] << "\" -> \""
             << labels[static_cast<std::size_t>(i)] << "\"";
          if (g.slices.size() > 1) os << " [label=\"lag " << lag << "\"" << (lag ? ", style=dashed" : "") << "]";
          os << ";\n";
        }
  os << "}\n";
  return os.str();
}

}  // namespace caustream::graph
