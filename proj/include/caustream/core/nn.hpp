#pragma once

// Parameter storage, tape binding, dense layers and the Adam optimizer.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"

namespace caustream::nn {

using ad::Index;
using ad::Matrix;
using ad::Tape;
using ad::Var;

using Rng = std::mt19937_64;

/// Named, ordered collection of trainable tensors.
class ParameterSet {
 public:
  int add(const std::string& name, Matrix init) {
    require(index_.find(name) == index_.end(), "duplicate parameter name: " + name);
    names_.push_back(name);
    values_.push_back(std::move(init));
    const int id = static_cast<int>(values_.size()) - 1;
    index_[name] = id;
    return id;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  Matrix& value(int id) { return values_.at(static_cast<std::size_t>(id)); }
  const Matrix& value(int id) const { return values_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  std::vector<Matrix>& values() { return values_; }
  const std::vector<Matrix>& values() const { return values_; }

  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, int> index_;
};

/// Lazily materializes parameters as leaves of one tape.
class Binding {
 public:
  Binding(Tape& tape, const ParameterSet& params, bool trainable = true)
      : tape_(&tape), params_(&params), trainable_(trainable), ids_(params.size(), -1) {}

  Var operator()(int id) {
    auto& slot = ids_.at(static_cast<std::size_t>(id));
    if (slot < 0) {
      Var v = tape_->leaf(params_->value(id), trainable_);
      slot = static_cast<long>(v.id());
      return v;
    }
    return Var(tape_, static_cast<std::size_t>(slot));
  }

  Tape& tape() { return *tape_; }

  /// Gradients for every parameter (zeros for parameters never touched).
  std::vector<Matrix> gradients() const {
    std::vector<Matrix> out;
    out.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      const auto& v = params_->value(static_cast<int>(i));
      if (ids_[i] < 0) {
        out.push_back(Matrix::Zero(v.rows(), v.cols()));
      } else {
        out.push_back(tape_->grad(static_cast<std::size_t>(ids_[i])));
      }
    }
    return out;
  }

 private:
  Tape* tape_;
  const ParameterSet* params_;
  bool trainable_;
  std::vector<long> ids_;
};

inline Matrix xavier_uniform(Index in, Index out, Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Matrix w(in, out);
  for (Index i = 0; i < w.size(); ++i) w(i) = u(rng);
  return w;
}

enum class Activation { kTanh, kSoftplus };

/// Layer widths [in, h1, ..., out]; smooth activation between layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterSet& params, const std::string& prefix, const std::vector<Index>& widths,
      Rng& rng, Activation act = Activation::kTanh, double out_gain = 1.0)
      : widths_(widths), act_(act) {
    require(widths.size() >= 2, "mlp needs at least input and output width");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const bool last = l + 2 == widths.size();
      weights_.push_back(params.add(prefix + ".w" + std::to_string(l),
                                    xavier_uniform(widths[l], widths[l + 1], rng,
                                                   last ? out_gain : 1.0)));
      biases_.push_back(
          params.add(prefix + ".b" + std::to_string(l), Matrix::Zero(1, widths[l + 1])));
    }
  }

  Index in_dim() const { return widths_.front(); }
  Index out_dim() const { return widths_.back(); }
  std::size_t layers() const { return weights_.size(); }
  int weight_id(std::size_t l) const { return weights_.at(l); }
  int bias_id(std::size_t l) const { return biases_.at(l); }
  Activation activation() const { return act_; }

  Var forward(Binding& bind, Var x) const {
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      x = ad::add(ad::matmul(x, bind(weights_[l])), bind(biases_[l]));
      if (l + 1 < weights_.size()) x = activate(x);
    }
    return x;
  }

  /// Forward pass plus the input-output Jacobian in tangent layout: a
  /// (in_dim * R) x out_dim matrix whose row j*R + r holds d out_r / d x_{r,j}.
  std::pair<Var, Var> forward_with_jacobian(Binding& bind, Var x) const {
    const Index rows = x.rows();
    const Index d = in_dim();
    Matrix seed = Matrix::Zero(d * rows, d);
    for (Index j = 0; j < d; ++j) seed.middleRows(j * rows, rows).col(j).setOnes();
    Var tangent = bind.tape().constant(std::move(seed));
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Var w = bind(weights_[l]);
      Var pre = ad::add(ad::matmul(x, w), bind(biases_[l]));
      tangent = ad::matmul(tangent, w);
      if (l + 1 < weights_.size()) {
        x = activate(pre);
        tangent = ad::mul(tangent, ad::tile_rows(derivative(pre, x), d));
      } else {
        x = pre;
      }
    }
    return {x, tangent};
  }

  /// Zero the output layer so the map is constant (bias) at initialization.
  void zero_output(ParameterSet& params) const {
    params.value(weights_.back()).setZero();
    params.value(biases_.back()).setZero();
  }

 private:
  Var activate(const Var& x) const {
    return act_ == Activation::kTanh ? ad::tanh(x) : ad::softplus(x);
  }
  Var derivative(const Var& pre, const Var& post) const {
    if (act_ == Activation::kTanh) {
      Tape& t = *pre.tape();
      return ad::sub(t.constant(Matrix::Ones(post.rows(), post.cols())), ad::square(post));
    }
    return ad::sigmoid(pre);
  }

  std::vector<Index> widths_;
  Activation act_ = Activation::kTanh;
  std::vector<int> weights_;
  std::vector<int> biases_;
};

/// Global L2 norm across a gradient list.
inline double global_norm(const std::vector<Matrix>& grads) {
  double s = 0.0;
  for (const auto& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

/// Rescale in place so the global norm is at most `max_norm`; returns the pre-clip norm.
inline double clip_global_norm(std::vector<Matrix>& grads, double max_norm) {
  const double n = global_norm(grads);
  if (n > max_norm && n > 0.0) {
    const double k = max_norm / n;
    for (auto& g : grads) g *= k;
  }
  return n;
}

class Adam {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
  };

  Adam() = default;
  Adam(const ParameterSet& params, Options opt) : opt_(opt) {
    for (const auto& v : params.values()) {
      m_.push_back(Matrix::Zero(v.rows(), v.cols()));
      v_.push_back(Matrix::Zero(v.rows(), v.cols()));
    }
  }

  void step(ParameterSet& params, const std::vector<Matrix>& grads) {
    require(grads.size() == m_.size(), "adam gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grads.size(); ++i) {
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grads[i];
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grads[i].cwiseAbs2();
      auto& p = params.value(static_cast<int>(i));
      p.array() -= opt_.learning_rate * (m_[i].array() / c1) /
                   ((v_[i].array() / c2).sqrt() + opt_.epsilon);
    }
  }

  long steps() const { return t_; }

 private:
  Options opt_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace caustream::nn
