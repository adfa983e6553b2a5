#pragma once

// Routing Jacobian of a one-step forecaster.
//
// The map receives a (B*N) x (L+1) context whose column l holds Q at lag l
// relative to the predicted step (column 0: same-time values of the other
// stations), rows station-major (row k*B + b), and returns (B*N) x 1
// predictions. Windows in a batch must not interact.

#include <functional>
#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/scm/types.hpp"

namespace caustream::graph {

using ContextMap = std::function<ad::Var(ad::Tape&, const ad::Var&)>;

/// Instantaneous correction: with B0 the raw same-time sensitivity, the
/// mixing map of additive sources is J' = (I - B0)^-1 and the causal slice
/// is I - diag(J') J'^-1. Diagonal forced to zero.
inline Matrix instantaneous_correction(const Matrix& b0) {
  const Index n = b0.rows();
  Matrix off = b0;
  off.diagonal().setZero();
  const Matrix eye = Matrix::Identity(n, n);
  const Matrix inv_jm = eye - off;
  const Matrix jm = inv_jm.partialPivLu().inverse();
  Matrix out = eye - jm.diagonal().asDiagonal() * inv_jm;
  out.diagonal().setZero();
  return out;
}

/// One (L+1)-slice routing estimate per window in the batch.
inline std::vector<std::vector<Matrix>> routing_jacobian(const ContextMap& fn, const Matrix& context,
                                                         const Matrix& mask, Index max_lag) {
  if (context.cols() != max_lag + 1) throw SchemaError("context must have L+1 lag columns");
  const Index n = mask.rows();
  if (mask.cols() != n) throw SchemaError("river mask must be square");
  if (context.rows() % n != 0) throw SchemaError("context rows are not a multiple of N");
  const Index batch = context.rows() / n;
  std::vector<std::vector<Matrix>> out(static_cast<std::size_t>(batch),
                                       std::vector<Matrix>(static_cast<std::size_t>(max_lag + 1),
                                                           Matrix::Zero(n, n)));
  for (Index k = 0; k < n; ++k) {
    ad::Tape tape;
    ad::Var ctx = tape.leaf(context);
    ad::Var pred = fn(tape, ctx);
    require(pred.rows() == context.rows() && pred.cols() == 1,
            "routing map must return one prediction per context row");
    tape.backward(ad::sum(ad::slice_rows(pred, k * batch, batch)));
    const Matrix g = tape.grad(ctx.id());
    for (Index b = 0; b < batch; ++b)
      for (Index l = 0; l <= max_lag; ++l)
        for (Index j = 0; j < n; ++j)
          out[static_cast<std::size_t>(b)][static_cast<std::size_t>(l)](k, j) = g(j * batch + b, l);
  }
  for (auto& slices : out) {
    slices[0] = instantaneous_correction(slices[0]);
    for (auto& s : slices) s = s.cwiseProduct(mask);
  }
  return out;
}

}  // namespace caustream::graph
