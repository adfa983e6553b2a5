#pragma once

#include <utility>

#include "caustream/core/errors.hpp"
#include "caustream/core/panel.hpp"

namespace caustream::scm {

struct LinearOracle {
  Matrix mixing;  // J_m = (I - A)^-1
  Matrix causal;  // J_g = I - D_m J_m^-1
};

/// Closed-form Jacobians of the linear SCM x = A x + s with A strictly lower triangular.
inline LinearOracle linear_scm_oracle(const Matrix& a) {
  require(a.rows() == a.cols(), "linear_scm_oracle needs a square matrix");
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = i; j < a.cols(); ++j)
      require(a(i, j) == 0.0, "linear_scm_oracle needs a strictly lower-triangular matrix");
  const Index d = a.rows();
  const Matrix eye = Matrix::Identity(d, d);
  LinearOracle out;
  // (I - A) is unit lower triangular, so the triangular solve is exact up to rounding.
  out.mixing = (eye - a).triangularView<Eigen::Lower>().solve(eye);
  const Matrix inv = eye - a;  // J_m^-1
  out.causal = eye - out.mixing.diagonal().asDiagonal() * inv;
  return out;
}

}  // namespace caustream::scm
