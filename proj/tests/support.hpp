#pragma once

#include <functional>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/nn.hpp"

namespace caustream::check {

/// Global relative error ||g_ad - g_fd|| / (||g_ad|| + ||g_fd||) of a scalar
/// loss over every parameter, with central differences of step h.
inline double gradient_check(nn::ParameterSet& params,
                             const std::function<ad::Var(nn::Binding&)>& loss,
                             double h = 1e-5) {
  ad::Tape tape;
  nn::Binding bind(tape, params);
  ad::Var out = loss(bind);
  tape.backward(out);
  const auto analytic = bind.gradients();
  auto eval = [&]() {
    ad::Tape t;
    nn::Binding b(t, params, false);
    return loss(b).item();
  };
  double diff = 0.0, norm = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& v = params.value(static_cast<int>(p));
    for (Index i = 0; i < v.size(); ++i) {
      const double keep = v(i);
      v(i) = keep + h;
      const double up = eval();
      v(i) = keep - h;
      const double down = eval();
      v(i) = keep;
      const double fd = (up - down) / (2.0 * h);
      const double a = analytic[p](i);
      diff += (a - fd) * (a - fd);
      norm += a * a + fd * fd;
    }
  }
  return norm == 0.0 ? 0.0 : std::sqrt(diff) / std::sqrt(norm);
}

}  // namespace caustream::check
