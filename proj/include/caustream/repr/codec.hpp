#pragma once

// Variational codec for the forcing stage: encoder q(eps | F) with a Laplace
// posterior and decoder F = f_m(eps) whose Jacobian is the mixing Jacobian.

#include <cmath>
#include <cstdint>
#include <random>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/nn.hpp"

namespace caustream::repr {

using ad::Index;
using ad::Matrix;
using ad::Var;
using nn::Binding;
using nn::ParameterSet;

struct CodecOptions {
  Index hidden = 64;
  Index depth = 2;  // hidden layers
  nn::Activation activation = nn::Activation::kTanh;
  double scale_floor = 1e-4;
  double init_gain = 0.1;     // output-layer gain; small keeps both maps near identity
  double init_log_scale = -2.0;  // pre-softplus offset of the posterior scale
  double recon_weight = 1.0;     // multiplies the MSE term; 1 is the plain ELBO
};

struct LatentNoiseSample {
  Matrix values;  // reparameterized draws
  Matrix loc;
  Matrix scale;
};

struct ElboTerms {
  Var total;
  Var reconstruction;
  Var kl;
};

inline double laplace_inverse_cdf(double u) {
  const double c = u - 0.5;
  if (c == 0.0) return 0.0;
  return -(c < 0.0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(c));
}

/// Uniform (0,1) draws mapped through the Laplace inverse CDF at unit scale:
/// g(u) = -sign(u - 1/2) ln(1 - 2|u - 1/2|).
inline Matrix laplace_standard_draws(Index rows, Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Matrix g(rows, cols);
  for (Index i = 0; i < g.size(); ++i) {
    double u = u01(rng);
    while (u <= 0.0) u = u01(rng);
    g(i) = laplace_inverse_cdf(u);
  }
  return g;
}

/// KL(Laplace(m, s) || Laplace(0, 1)) per entry.
inline double laplace_kl(double m, double s) {
  const double a = std::abs(m);
  return a + s * std::exp(-a / s) - std::log(s) - 1.0;
}

class ForcingCodec {
 public:
  ForcingCodec() = default;
  ForcingCodec(ParameterSet& params, Index dim, nn::Rng& rng, CodecOptions opt = {},
               const std::string& prefix = "codec")
      : dim_(dim), opt_(opt) {
    require(dim > 0, "codec dimension must be positive");
    std::vector<Index> enc{dim};
    std::vector<Index> dec{dim};
    for (Index l = 0; l < opt.depth; ++l) {
      enc.push_back(opt.hidden);
      dec.push_back(opt.hidden);
    }
    enc.push_back(2 * dim);
    dec.push_back(dim);
    encoder_ = nn::Mlp(params, prefix + ".enc", enc, rng, opt.activation, opt.init_gain);
    decoder_ = nn::Mlp(params, prefix + ".dec", dec, rng, opt.activation, opt.init_gain);
    log_scale_ = params.add(prefix + ".log_scale", Matrix::Constant(1, dim, opt.init_log_scale));
  }

  Index dim() const { return dim_; }
  const CodecOptions& options() const { return opt_; }
  const nn::Mlp& decoder() const { return decoder_; }

  /// Location = input and scale at the floor for the encoder; identity decoder.
  void identity_init(ParameterSet& params) const {
    encoder_.zero_output(params);
    decoder_.zero_output(params);
    params.value(log_scale_).setConstant(-40.0);
  }

  struct Posterior {
    Var sample, loc, scale;
  };

  Posterior encode(Binding& bind, const Var& x, std::uint64_t seed) const {
    check_input(x.value(), "encode");
    Var raw = encoder_.forward(bind, x);
    Var loc = ad::add(x, ad::slice_cols(raw, 0, dim_));
    Var pre = ad::add(ad::slice_cols(raw, dim_, dim_), bind(log_scale_));
    Var scale = ad::add_scalar(ad::softplus(pre), opt_.scale_floor);
    ad::Tape& tape = bind.tape();
    Var g = tape.constant(laplace_standard_draws(x.rows(), dim_, seed));
    Var sample = ad::add(loc, ad::mul(scale, g));
    return {sample, loc, scale};
  }

  Var decode(Binding& bind, const Var& eps) const {
    check_input(eps.value(), "decode");
    return ad::add(eps, decoder_.forward(bind, eps));
  }

  /// Decoder output and its Jacobian in tangent layout (row j*R + r = d out_r / d eps_{r,j}).
  std::pair<Var, Var> decode_with_jacobian(Binding& bind, const Var& eps) const {
    check_input(eps.value(), "decode");
    auto [out, tan] = decoder_.forward_with_jacobian(bind, eps);
    const Index rows = eps.rows();
    Matrix eye_tan = Matrix::Zero(dim_ * rows, dim_);
    for (Index j = 0; j < dim_; ++j) eye_tan.middleRows(j * rows, rows).col(j).setOnes();
    return {ad::add(eps, out), ad::add(tan, bind.tape().constant(std::move(eye_tan)))};
  }

  /// Negative ELBO: mean squared reconstruction error plus the closed-form
  /// Laplace KL summed over dimensions and averaged over the batch.
  ElboTerms elbo_loss(Binding& bind, const Var& x, std::uint64_t seed) const {
    Posterior q = encode(bind, x, seed);
    Var recon_x = decode(bind, q.sample);
    Var recon = ad::mean(ad::square(ad::sub(recon_x, x)));
    if (opt_.recon_weight != 1.0) recon = ad::scale(recon, opt_.recon_weight);
    Var abs_m = ad::abs(q.loc);
    Var kl_entries = ad::sub(ad::add(abs_m, ad::mul(q.scale, ad::exp(ad::neg(ad::div(abs_m, q.scale))))),
                             ad::add_scalar(ad::log(q.scale), 1.0));
    Var kl = ad::scale(ad::sum(kl_entries), 1.0 / static_cast<double>(x.rows()));
    return {ad::add(recon, kl), recon, kl};
  }

 private:
  static void check_input(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw InputError(std::string(what) + ": non-finite input");
  }

  Index dim_ = 0;
  CodecOptions opt_;
  nn::Mlp encoder_;
  nn::Mlp decoder_;
  int log_scale_ = -1;
};

/// Plain-matrix convenience wrappers over frozen parameters.
inline LatentNoiseSample encode(const ForcingCodec& codec, const ParameterSet& params,
                                const Matrix& x, std::uint64_t seed) {
  ad::Tape tape;
  Binding bind(tape, params, false);
  auto q = codec.encode(bind, tape.constant(x), seed);
  return {q.sample.value(), q.loc.value(), q.scale.value()};
}

inline Matrix decode(const ForcingCodec& codec, const ParameterSet& params, const Matrix& eps) {
  ad::Tape tape;
  Binding bind(tape, params, false);
  return codec.decode(bind, tape.constant(eps)).value();
}

}  // namespace caustream::repr
