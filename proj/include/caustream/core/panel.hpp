#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "caustream/core/errors.hpp"

namespace caustream {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Dense time x station x feature tensor, row-major (time slowest).
class Panel {
 public:
  Panel() = default;
  Panel(Index t, Index n, Index d, double fill = 0.0)
      : t_(t), n_(n), d_(d), data_(static_cast<std::size_t>(t * n * d), fill) {
    require(t >= 0 && n >= 0 && d >= 0, "negative panel extent");
  }

  Index times() const { return t_; }
  Index stations() const { return n_; }
  Index features() const { return d_; }

  double& operator()(Index t, Index k, Index i) { return data_[offset(t, k, i)]; }
  double operator()(Index t, Index k, Index i) const { return data_[offset(t, k, i)]; }

  /// Copy of the feature vector at (t, k) as a 1 x d row.
  Matrix row(Index t, Index k) const {
    Matrix r(1, d_);
    for (Index i = 0; i < d_; ++i) r(0, i) = (*this)(t, k, i);
    return r;
  }

  /// Time series of one feature at one station as a column.
  Eigen::VectorXd series(Index k, Index i) const {
    Eigen::VectorXd s(t_);
    for (Index t = 0; t < t_; ++t) s(t) = (*this)(t, k, i);
    return s;
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Panel& o) const {
    return t_ == o.t_ && n_ == o.n_ && d_ == o.d_ && data_ == o.data_;
  }

 private:
  std::size_t offset(Index t, Index k, Index i) const {
    return static_cast<std::size_t>((t * n_ + k) * d_ + i);
  }
  Index t_ = 0, n_ = 0, d_ = 0;
  std::vector<double> data_;
};

}  // namespace caustream
