#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "caustream/core/errors.hpp"
#include "caustream/scm/types.hpp"

namespace caustream::scm {

using Rng = std::mt19937_64;

/// f(x) = x * linear + tanh(x * w1 + b1) * w2 + bias, for a row input x.
/// Either the linear or the hidden part may be empty.
struct StructuralFunction {
  Matrix linear;  // in x out (or empty)
  Matrix w1;      // in x hidden (or empty)
  Matrix b1;      // 1 x hidden
  Matrix w2;      // hidden x out
  Matrix bias;    // 1 x out

  Index in_dim = 0;
  Index out_dim = 0;

  static StructuralFunction zero(Index in, Index out) {
    StructuralFunction f;
    f.in_dim = in;
    f.out_dim = out;
    f.bias = Matrix::Zero(1, out);
    return f;
  }

  static StructuralFunction linear_map(const Matrix& weights) {
    StructuralFunction f = zero(weights.rows(), weights.cols());
    f.linear = weights;
    return f;
  }

  Matrix operator()(const Matrix& x) const {
    require(x.cols() == in_dim, "structural function input width mismatch");
    Matrix out = bias.replicate(x.rows(), 1);
    if (in_dim == 0) return out;
    if (linear.size() > 0) out += x * linear;
    if (w1.size() > 0) {
      Matrix h = ((x * w1).rowwise() + b1.row(0)).array().tanh().matrix();
      out += h * w2;
    }
    return out;
  }

  /// d out / d x at one input row: out_dim x in_dim.
  Matrix jacobian(const Matrix& x) const {
    Matrix j = Matrix::Zero(out_dim, in_dim);
    if (in_dim == 0) return j;
    if (linear.size() > 0) j += linear.transpose();
    if (w1.size() > 0) {
      Matrix pre = x * w1 + b1;
      Matrix d = (1.0 - pre.array().tanh().square()).matrix();
      j += w2.transpose() * d.asDiagonal() * w1.transpose();
    }
    return j;
  }
};

enum class NoiseFamily { kLaplace, kUniform, kGumbel, kGaussian };

inline std::string to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::kLaplace: return "laplace";
    case NoiseFamily::kUniform: return "uniform";
    case NoiseFamily::kGumbel: return "gumbel";
    case NoiseFamily::kGaussian: return "gaussian";
  }
  return "unknown";
}

inline NoiseFamily noise_family_from_string(const std::string& s) {
  if (s == "laplace") return NoiseFamily::kLaplace;
  if (s == "uniform") return NoiseFamily::kUniform;
  if (s == "gumbel") return NoiseFamily::kGumbel;
  if (s == "gaussian") return NoiseFamily::kGaussian;
  throw ConfigError("unknown noise family '" + s + "'");
}

/// Exogenous noise description. Draws are zero-mean with unit variance before
/// scaling, so every scale below is a standard deviation.
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::kLaplace;
  double relative_scale = 0.1;
  Eigen::VectorXd forcing_scale;  // d_f
  Matrix runoff_scale;            // N x d_r
  Eigen::VectorXd streamflow_scale;  // N
  std::uint64_t seed = 0;

  void validate() const {
    if (family == NoiseFamily::kGaussian)
      throw AssumptionError("gaussian exogenous noise breaks identifiability; use laplace, "
                            "uniform or gumbel");
    if (relative_scale < 0.0) throw ConfigError("relative noise scale must be non-negative");
    auto nonneg = [](const auto& m) { return m.size() == 0 || m.minCoeff() >= 0.0; };
    if (!nonneg(forcing_scale) || !nonneg(runoff_scale) || !nonneg(streamflow_scale))
      throw ConfigError("noise scales must be non-negative");
  }
};

/// One zero-mean, unit-variance draw from a non-Gaussian family.
inline double draw_noise(NoiseFamily family, Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double u = u01(rng);
  while (u <= 0.0 || u >= 1.0) u = u01(rng);
  switch (family) {
    case NoiseFamily::kLaplace: {
      const double b = 1.0 / std::sqrt(2.0);
      const double c = u - 0.5;
      return -b * (c < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(c));
    }
    case NoiseFamily::kUniform:
      return std::sqrt(3.0) * (2.0 * u - 1.0);
    case NoiseFamily::kGumbel: {
      const double beta = std::sqrt(6.0) / M_PI;
      constexpr double kEulerGamma = 0.57721566490153286;
      return -beta * std::log(-std::log(u)) - beta * kEulerGamma;
    }
    case NoiseFamily::kGaussian:
      break;
  }
  throw AssumptionError("gaussian noise requested");
}

/// Hidden structural causal model; the verification oracle for every learner.
struct GroundTruthScm {
  BinaryDag forcing_dag;                 // d_f x d_f
  BinaryDag routing_dag;                 // (L+1) slices of N x N
  std::vector<StructuralFunction> forcing_functions;   // one per forcing node, input = parents
  std::vector<std::vector<Index>> forcing_parents;     // ascending parent indices per node
  std::vector<StructuralFunction> runoff_functions;    // one per station: d_f -> d_r
  std::vector<Matrix> routing_weights;   // (L+1) slices N x N, support = routing_dag
  std::vector<StructuralFunction> runoff_to_flow;      // one per station: d_r -> 1
  NoiseSpec noise;

  Index forcings() const { return forcing_dag.nodes(); }
  Index stations() const { return routing_dag.nodes(); }
  Index max_lag() const { return static_cast<Index>(routing_dag.slices.size()) - 1; }
  Index runoff_dim() const {
    return runoff_functions.empty() ? 0 : runoff_functions.front().out_dim;
  }

  void validate(const Matrix* river_mask = nullptr) const {
    noise.validate();
    if (!linalg::is_acyclic(forcing_dag.slices.front()))
      throw StructuralError("forcing_dag has a cycle");
    Matrix s0 = routing_dag.slices.front();
    if (!linalg::is_acyclic(s0))
      throw StructuralError("instantaneous routing slice has a cycle");
    if (river_mask) {
      for (const auto& s : routing_dag.slices)
        for (Index i = 0; i < s.size(); ++i)
          if (s(i) != 0.0 && (*river_mask)(i) == 0.0)
            throw StructuralError("routing edge outside the river mask");
    }
  }
};

}  // namespace caustream::scm
