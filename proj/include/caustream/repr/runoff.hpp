#pragma once

// Runoff generator r = f_r(F): one shared core, or per-station cores whose
// parameters come from a linear hypernetwork over learned station embeddings.

#include <string>
#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/nn.hpp"

namespace caustream::repr {

enum class RunoffMode { kShared, kLocal };

inline std::string to_string(RunoffMode m) { return m == RunoffMode::kShared ? "shared" : "local"; }

struct RunoffOptions {
  Index hidden = 16;
  Index embed_dim = 8;  // d_e
};

class RunoffGenerator {
 public:
  RunoffGenerator() = default;
  RunoffGenerator(ParameterSet& params, RunoffMode mode, Index stations, Index in_dim,
                  Index out_dim, nn::Rng& rng, RunoffOptions opt = {},
                  const std::string& prefix = "runoff")
      : mode_(mode), stations_(stations), in_(in_dim), out_(out_dim), opt_(opt) {
    require(stations > 0 && in_dim > 0 && out_dim > 0, "runoff generator dims must be positive");
    const Index h = opt.hidden;
    Matrix w1 = nn::xavier_uniform(in_dim, h, rng);
    Matrix w2 = nn::xavier_uniform(h, out_dim, rng);
    if (mode == RunoffMode::kShared) {
      w1_ = params.add(prefix + ".w1", w1);
      b1_ = params.add(prefix + ".b1", Matrix::Zero(1, h));
      w2_ = params.add(prefix + ".w2", w2);
      b2_ = params.add(prefix + ".b2", Matrix::Zero(1, out_dim));
      return;
    }
    // Flattened core layout: [w1 row-major, b1, w2 row-major, b2].
    Matrix base(1, core_size());
    Index o = 0;
    for (Index i = 0; i < in_dim; ++i)
      for (Index j = 0; j < h; ++j) base(0, o++) = w1(i, j);
    for (Index j = 0; j < h; ++j) base(0, o++) = 0.0;
    for (Index i = 0; i < h; ++i)
      for (Index j = 0; j < out_dim; ++j) base(0, o++) = w2(i, j);
    for (Index j = 0; j < out_dim; ++j) base(0, o++) = 0.0;
    base_ = params.add(prefix + ".hyper.base", base);
    std::normal_distribution<double> z(0.0, 1.0);
    Matrix emb(stations, opt.embed_dim);
    for (Index i = 0; i < emb.size(); ++i) emb(i) = z(rng);
    embed_ = params.add(prefix + ".embedding", emb);
    // Small hypernetwork gain so stations start near the shared solution.
    hyper_ = params.add(prefix + ".hyper.w",
                        nn::xavier_uniform(opt.embed_dim, core_size(), rng, 0.1));
  }

  RunoffMode mode() const { return mode_; }
  Index stations() const { return stations_; }
  Index in_dim() const { return in_; }
  Index out_dim() const { return out_; }
  Index core_size() const { return in_ * opt_.hidden + opt_.hidden + opt_.hidden * out_ + out_; }
  int embedding_id() const { return embed_; }

  /// Rows are station-major blocks: rows [k*m, (k+1)*m) belong to station k.
  Var forward(Binding& bind, const Var& forcings) const {
    if (forcings.cols() != in_) throw ConfigError("runoff input width does not match d_f");
    if (forcings.rows() % stations_ != 0)
      throw ConfigError("runoff input rows are not a multiple of the station count");
    if (mode_ == RunoffMode::kShared)
      return core(forcings, bind(w1_), bind(b1_), bind(w2_), bind(b2_));
    const Index m = forcings.rows() / stations_;
    std::vector<Var> parts;
    for (Index k = 0; k < stations_; ++k) {
      Var theta = station_parameters(bind, k);
      parts.push_back(core_from_flat(ad::slice_rows(forcings, k * m, m), theta));
    }
    return ad::vcat(parts);
  }

  /// theta_k = base + e_k W (local mode).
  Var station_parameters(Binding& bind, Index k) const {
    require(mode_ == RunoffMode::kLocal, "station parameters exist only in local mode");
    Var e = ad::slice_rows(bind(embed_), k, 1);
    return ad::add(bind(base_), ad::matmul(e, bind(hyper_)));
  }

  /// Applies a flattened core parameter vector to input rows.
  Var core_from_flat(const Var& x, const Var& theta) const {
    const Index h = opt_.hidden;
    Index o = 0;
    auto take = [&](Index r, Index c) {
      std::vector<Index> src(static_cast<std::size_t>(r * c));
      for (Index i = 0; i < r * c; ++i) src[static_cast<std::size_t>(i)] = o + i;
      o += r * c;
      return ad::gather(theta, r, c, std::move(src));
    };
    Var w1 = take(in_, h);
    Var b1 = take(1, h);
    Var w2 = take(h, out_);
    Var b2 = take(1, out_);
    return core(x, w1, b1, w2, b2);
  }

 private:
  static Var core(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
    Var hidden = ad::tanh(ad::add(ad::matmul(x, w1), b1));
    return ad::add(ad::matmul(hidden, w2), b2);
  }

  RunoffMode mode_ = RunoffMode::kShared;
  Index stations_ = 0, in_ = 0, out_ = 0;
  RunoffOptions opt_;
  int w1_ = -1, b1_ = -1, w2_ = -1, b2_ = -1;
  int base_ = -1, embed_ = -1, hyper_ = -1;
};

/// Frozen-parameter convenience: input is batch x N x d_f flattened station-major.
inline Matrix generate_runoff(const RunoffGenerator& gen, const ParameterSet& params,
                              const Matrix& station_major_rows) {
  ad::Tape tape;
  Binding bind(tape, params, false);
  return gen.forward(bind, tape.constant(station_major_rows)).value();
}

}  // namespace caustream::repr
