#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "caustream/core/errors.hpp"

namespace caustream::linalg {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Matrix exponential by scaling and squaring with an 18-term Taylor series.
inline Matrix expm(const Matrix& a) {
  require(a.rows() == a.cols(), "expm of non-square matrix");
  const Index d = a.rows();
  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.5) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.5)));
  const Matrix x = a / std::ldexp(1.0, squarings);
  Matrix result = Matrix::Identity(d, d);
  Matrix term = Matrix::Identity(d, d);
  for (int k = 1; k <= 18; ++k) {
    term = term * x / static_cast<double>(k);
    result += term;
  }
  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

/// Kahn topological order over the support of `adj` where adj(child, parent) != 0.
/// Diagonal entries are ignored. Returns nullopt when the support has a cycle.
inline std::optional<std::vector<Index>> topological_order(const Matrix& adj,
                                                           double tol = 0.0) {
  require(adj.rows() == adj.cols(), "topological order of non-square matrix");
  const Index d = adj.rows();
  std::vector<int> indegree(static_cast<std::size_t>(d), 0);
  for (Index c = 0; c < d; ++c)
    for (Index p = 0; p < d; ++p)
      if (c != p && std::abs(adj(c, p)) > tol) ++indegree[static_cast<std::size_t>(c)];
  std::vector<Index> order;
  std::vector<Index> ready;
  for (Index i = 0; i < d; ++i)
    if (indegree[static_cast<std::size_t>(i)] == 0) ready.push_back(i);
  while (!ready.empty()) {
    // Smallest index first keeps the order deterministic.
    auto it = std::min_element(ready.begin(), ready.end());
    const Index p = *it;
    ready.erase(it);
    order.push_back(p);
    for (Index c = 0; c < d; ++c) {
      if (c == p || std::abs(adj(c, p)) <= tol) continue;
      if (--indegree[static_cast<std::size_t>(c)] == 0) ready.push_back(c);
    }
  }
  if (static_cast<Index>(order.size()) != d) return std::nullopt;
  return order;
}

inline bool is_acyclic(const Matrix& adj, double tol = 0.0) {
  if (adj.rows() != adj.cols()) return false;
  for (Index i = 0; i < adj.rows(); ++i)
    if (std::abs(adj(i, i)) > tol) return false;
  return topological_order(adj, tol).has_value();
}

/// Reachability closure of the off-diagonal support (adj(child, parent) convention).
inline Matrix transitive_closure(const Matrix& adj) {
  const Index d = adj.rows();
  Matrix reach = Matrix::Zero(d, d);
  for (Index c = 0; c < d; ++c)
    for (Index p = 0; p < d; ++p)
      if (c != p && adj(c, p) != 0.0) reach(c, p) = 1.0;
  for (Index k = 0; k < d; ++k)
    for (Index i = 0; i < d; ++i)
      if (reach(i, k) != 0.0)
        for (Index j = 0; j < d; ++j)
          if (reach(k, j) != 0.0 && i != j) reach(i, j) = 1.0;
  return reach;
}

inline double condition_number(const Matrix& a) {
  Eigen::JacobiSVD<Matrix> svd(a);
  const auto& s = svd.singularValues();
  const double smin = s(s.size() - 1);
  if (smin <= 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

}  // namespace caustream::linalg
