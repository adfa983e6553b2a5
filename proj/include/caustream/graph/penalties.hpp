#pragma once

// Structural penalties: masked L1 sparsity and the trace-exponential acyclicity term.

#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/linalg.hpp"

namespace caustream::graph {

using ad::Var;

/// ||J_F||_1 + sum_l ||M (.) J_Q,l||_1.
inline double sparsity_loss(const Matrix& jg_forcing, const std::vector<Matrix>& jg_routing,
                            const Matrix& mask) {
  double s = jg_forcing.cwiseAbs().sum();
  for (const auto& slice : jg_routing) {
    require(slice.rows() == mask.rows() && slice.cols() == mask.cols(),
            "routing slice and mask shapes differ");
    s += slice.cwiseProduct(mask).cwiseAbs().sum();
  }
  return s;
}

inline Var sparsity_loss(const Var& jg_forcing, const std::vector<Var>& jg_routing,
                         const Matrix& mask) {
  Var s = ad::sum(ad::abs(jg_forcing));
  for (const auto& slice : jg_routing) {
    require(slice.rows() == mask.rows() && slice.cols() == mask.cols(),
            "routing slice and mask shapes differ");
    Var masked = ad::mul(slice, slice.tape()->constant(mask));
    s = ad::add(s, ad::sum(ad::abs(masked)));
  }
  return s;
}

/// tr(exp(A o A)) - d; zero exactly when the support of A is acyclic.
inline double acyclicity_penalty(const Matrix& a) {
  require(a.rows() == a.cols(), "acyclicity penalty of a non-square matrix");
  // For an acyclic support every power of A o A has an exactly zero diagonal,
  // so the sum below is exactly 0 in floating point as well.
  const Matrix e = linalg::expm(a.cwiseProduct(a));
  return (e.diagonal().array() - 1.0).sum();
}

/// Differentiable form; gradient 2 A o exp(A o A)^T.
inline Var acyclicity_penalty(const Var& a) {
  require(a.rows() == a.cols(), "acyclicity penalty of a non-square matrix");
  const Matrix& av = a.value();
  const Matrix e = linalg::expm(av.cwiseProduct(av));
  const double h = (e.diagonal().array() - 1.0).sum();
  const auto ia = a.id();
  return a.tape()->push(Matrix::Constant(1, 1, h), {ia}, [ia, e](ad::Tape& t, std::size_t s) {
    const double g = t.grad_ref(s)(0, 0);
    t.accumulate(ia, g * 2.0 * t.value(ia).cwiseProduct(e.transpose()));
  });
}

}  // namespace caustream::graph
