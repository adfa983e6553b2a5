#pragma once

// Jacobian extraction and the causal-adjacency transform J_g = I - D_m J_m^-1.

#include <functional>
#include <string>
#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/linalg.hpp"
#include "caustream/scm/types.hpp"

namespace caustream::graph {

using ad::Var;

enum class BatchAggregation { kMeanAbs, kMedianAbs };

/// Row-wise differentiable map evaluated on a fresh tape.
using RowMap = std::function<Var(ad::Tape&, const Var&)>;

/// Per-row Jacobians d out / d in of a row-independent map, by reverse mode.
inline std::vector<Matrix> mixing_jacobian(const RowMap& fn, const Matrix& inputs) {
  const Index rows = inputs.rows(), d = inputs.cols();
  std::vector<Matrix> out;
  Index width = -1;
  std::vector<Matrix> grads;  // one R x d gradient per output column
  for (Index i = 0;; ++i) {
    ad::Tape tape;
    Var x = tape.leaf(inputs);
    Var y = fn(tape, x);
    if (width < 0) {
      width = y.cols();
      require(y.rows() == rows, "mixing_jacobian: map must preserve the row count");
    }
    if (i >= width) break;
    tape.backward(ad::sum(ad::slice_cols(y, i, 1)));
    grads.push_back(tape.grad(x.id()));
  }
  for (Index r = 0; r < rows; ++r) {
    Matrix j(width, d);
    for (Index i = 0; i < width; ++i) j.row(i) = grads[static_cast<std::size_t>(i)].row(r);
    if (!j.allFinite())
      throw NumericalError("non-finite Jacobian at input row " + std::to_string(r));
    out.push_back(std::move(j));
  }
  return out;
}

/// Per-instance J_g = I - diag(J_m) J_m^-1. Raises when any J_m is
/// ill-conditioned; `worst` receives the largest condition number seen.
inline std::vector<Matrix> causal_jacobians(const std::vector<Matrix>& jm, double max_condition = 1e8,
                                            double* worst = nullptr) {
  require(!jm.empty(), "causal_adjacency of an empty batch");
  std::vector<Matrix> out;
  double worst_cond = 0.0;
  Index worst_at = 0;
  for (std::size_t b = 0; b < jm.size(); ++b) {
    const Matrix& j = jm[b];
    require(j.rows() == j.cols(), "mixing Jacobian must be square");
    const double c = linalg::condition_number(j);
    if (!(c <= worst_cond)) {
      worst_cond = c;
      worst_at = static_cast<Index>(b);
    }
  }
  if (worst) *worst = worst_cond;
  if (!(worst_cond <= max_condition))
    throw ConditioningError("mixing Jacobian at instance " + std::to_string(worst_at) +
                            " has condition number " + std::to_string(worst_cond));
  for (const auto& j : jm) {
    const Index d = j.rows();
    for (Index i = 0; i < d; ++i)
      if (j(i, i) == 0.0) throw ConditioningError("mixing Jacobian with a zero diagonal entry");
    Matrix k = j.partialPivLu().inverse();
    out.push_back(Matrix::Identity(d, d) - j.diagonal().asDiagonal() * k);
  }
  return out;
}

/// Batch aggregate of |J_g| with the diagonal zeroed.
inline scm::WeightedDag causal_adjacency(const std::vector<Matrix>& jm,
                                         BatchAggregation agg = BatchAggregation::kMeanAbs,
                                         double max_condition = 1e8) {
  auto jg = causal_jacobians(jm, max_condition);
  const Index d = jg.front().rows();
  Matrix a = Matrix::Zero(d, d);
  if (agg == BatchAggregation::kMeanAbs) {
    for (const auto& g : jg) a += g.cwiseAbs();
    a /= static_cast<double>(jg.size());
  } else {
    std::vector<double> v(jg.size());
    for (Index i = 0; i < a.size(); ++i) {
      for (std::size_t b = 0; b < jg.size(); ++b) v[b] = std::abs(jg[b](i));
      auto mid = v.begin() + static_cast<long>(v.size() / 2);
      std::nth_element(v.begin(), mid, v.end());
      double m = *mid;
      if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), mid));
      a(i) = m;
    }
  }
  a.diagonal().setZero();
  scm::WeightedDag out;
  out.slices = {a};
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable fused version for training.
//
// `tangent` has the layout produced by Mlp::forward_with_jacobian: row
// j * R + r, column i holds d out_{r,i} / d in_{r,j}. The result is the
// d x d matrix mean_r |I - D_r J_r^-1| with the diagonal zeroed.

namespace detail {
inline Matrix instance(const Matrix& tan, Index r, Index rows, Index d) {
  Matrix j(d, d);
  for (Index c = 0; c < d; ++c) j.col(c) = tan.row(c * rows + r).transpose();
  return j;
}
}  // namespace detail

inline Var causal_adjacency_op(const Var& tangent, Index rows, double max_condition = 1e8) {
  const Index d = tangent.cols();
  require(tangent.rows() == d * rows, "tangent layout does not match the row count");
  const Matrix& tan = tangent.value();
  std::vector<Matrix> ks, ys;
  ks.reserve(static_cast<std::size_t>(rows));
  Matrix mean = Matrix::Zero(d, d);
  double worst = 0.0;
  for (Index r = 0; r < rows; ++r) {
    Matrix j = detail::instance(tan, r, rows, d);
    Eigen::JacobiSVD<Matrix> svd(j);
    const auto& s = svd.singularValues();
    const double cond = s(d - 1) > 0.0 ? s(0) / s(d - 1) : std::numeric_limits<double>::infinity();
    worst = std::max(worst, cond);
    if (!(cond <= max_condition))
      throw ConditioningError("mixing Jacobian at row " + std::to_string(r) +
                              " has condition number " + std::to_string(cond));
    Matrix k = j.partialPivLu().inverse();
    Matrix y = Matrix::Identity(d, d) - j.diagonal().asDiagonal() * k;
    mean += y.cwiseAbs();
    ks.push_back(std::move(k));
    ys.push_back(std::move(y));
  }
  mean /= static_cast<double>(rows);
  mean.diagonal().setZero();
  const auto it = tangent.id();
  return tangent.tape()->push(
      std::move(mean), {it},
      [it, rows, d, ks = std::move(ks), ys = std::move(ys)](ad::Tape& t, std::size_t self) {
        const Matrix& g = t.grad_ref(self);
        const Matrix& tan = t.value(it);
        Matrix out = Matrix::Zero(d * rows, d);
        for (Index r = 0; r < rows; ++r) {
          const Matrix& k = ks[static_cast<std::size_t>(r)];
          const Matrix& y = ys[static_cast<std::size_t>(r)];
          Matrix yb = g.cwiseProduct(y.unaryExpr([](double v) {
            return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
          })) / static_cast<double>(rows);
          yb.diagonal().setZero();
          Matrix j = detail::instance(tan, r, rows, d);
          // Y = I - D K, K = J^-1, D = diag(J).
          Matrix kb = -(j.diagonal().asDiagonal() * yb);
          Eigen::VectorXd db = -(yb.cwiseProduct(k)).rowwise().sum();
          Matrix jb = -k.transpose() * kb * k.transpose();
          jb.diagonal() += db;
          for (Index c = 0; c < d; ++c) out.row(c * rows + r) += jb.col(c).transpose();
        }
        t.accumulate(it, out);
      });
}

}  // namespace caustream::graph
