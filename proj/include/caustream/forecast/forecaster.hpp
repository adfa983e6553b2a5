#pragma once

// Graph-guided one-step streamflow model and its autoregressive rollout.
//
// Rows of every per-station tensor are station-major: row k*B + b holds
// station k of window b. All quantities live in standardized units.

#include <optional>
#include <string>
#include <vector>

#include "caustream/core/autodiff.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/linalg.hpp"
#include "caustream/core/nn.hpp"
#include "caustream/forecast/window.hpp"

namespace caustream::forecast {

using ad::Var;
using nn::Binding;
using nn::ParameterSet;

enum class ConditioningMode { kPastOnly, kForecastForcings };

inline std::string to_string(ConditioningMode m) {
  return m == ConditioningMode::kPastOnly ? "past_only" : "forecast_forcings";
}

inline ConditioningMode parse_conditioning(const std::string& s) {
  if (s == "past_only") return ConditioningMode::kPastOnly;
  if (s == "forecast_forcings") return ConditioningMode::kForecastForcings;
  throw ConfigError("unknown conditioning mode '" + s + "'");
}

struct ForecasterOptions {
  Index channels = 16;   // GLU output channels
  Index kernel = 3;      // temporal kernel width
  Index hidden = 32;     // readout width
  Index embed_dim = 4;   // station embedding
  double out_gain = 0.1;
  ConditioningMode mode = ConditioningMode::kPastOnly;
};

/// Inputs of one prediction step. `q` holds the l history columns (last =
/// Q_t), `r` the runoff at the same positions, `r_next` the runoff used for
/// the predicted step.
struct StepInputs {
  std::vector<Var> q;
  std::vector<Var> r;
  Var r_next;
};

struct StepOutput {
  Var prediction;  // (N*B) x 1
  Var hidden;      // readout activations of the final pass
};

class Forecaster {
 public:
  Forecaster() = default;
  Forecaster(ParameterSet& params, Index stations, Index runoff_dim, Index max_lag,
             const Matrix& river_mask, WindowConfig window, nn::Rng& rng,
             ForecasterOptions opt = {}, const std::string& prefix = "forecast")
      : n_(stations), dr_(runoff_dim), lag_(max_lag), window_(window), opt_(opt) {
    window.validate();
    require(stations > 0 && runoff_dim > 0 && max_lag >= 0, "forecaster dims must be valid");
    if (river_mask.rows() != stations || river_mask.cols() != stations)
      throw SchemaError("river mask must be N x N");
    if (window.history_len < std::max(opt.kernel, max_lag))
      throw ConfigError("history window shorter than the temporal kernel or the lag window");
    mask_off_ = river_mask;
    mask_off_.diagonal().setZero();
    if (!linalg::is_acyclic(mask_off_)) throw StructuralError("river mask support has a cycle");
    depth_ = longest_path(mask_off_);
    const Index c = opt.channels, in = 1 + runoff_dim;
    conv_w_ = params.add(prefix + ".conv.w", nn::xavier_uniform(opt.kernel * in, 2 * c, rng));
    conv_b_ = params.add(prefix + ".conv.b", Matrix::Zero(1, 2 * c));
    for (Index l = 0; l <= max_lag; ++l)
      theta_.push_back(params.add(prefix + ".adj" + std::to_string(l), Matrix::Zero(n_, n_)));
    std::normal_distribution<double> z(0.0, 0.1);
    Matrix e(n_, opt.embed_dim);
    for (Index i = 0; i < e.size(); ++i) e(i) = z(rng);
    embed_ = params.add(prefix + ".embedding", e);
    w0_ = params.add(prefix + ".readout.w0", nn::xavier_uniform(readout_in(), opt.hidden, rng));
    b0_ = params.add(prefix + ".readout.b0", Matrix::Zero(1, opt.hidden));
    w1_ = params.add(prefix + ".readout.w1", nn::xavier_uniform(opt.hidden, 1, rng, opt.out_gain));
    b1_ = params.add(prefix + ".readout.b1", Matrix::Zero(1, 1));
    gate_.assign(static_cast<std::size_t>(max_lag + 1), Matrix::Ones(n_, n_));
  }

  Index stations() const { return n_; }
  Index runoff_dim() const { return dr_; }
  Index max_lag() const { return lag_; }
  const WindowConfig& window() const { return window_; }
  const ForecasterOptions& options() const { return opt_; }
  ConditioningMode mode() const { return opt_.mode; }
  void set_mode(ConditioningMode m) { opt_.mode = m; }
  const Matrix& message_mask() const { return mask_off_; }
  int theta_id(Index l) const { return theta_.at(static_cast<std::size_t>(l)); }
  int embedding_id() const { return embed_; }
  int readout_output_id() const { return w1_; }
  int readout_output_bias_id() const { return b1_; }

  /// Binary per-lag gate multiplied into the message weights (inference uses
  /// the discovered graph). Diagonals are ignored.
  void set_gate(const std::vector<Matrix>& gate) {
    require(static_cast<Index>(gate.size()) == lag_ + 1, "gate needs L+1 slices");
    for (const auto& g : gate) require(g.rows() == n_ && g.cols() == n_, "gate slice must be N x N");
    gate_ = gate;
  }
  void clear_gate() { gate_.assign(static_cast<std::size_t>(lag_ + 1), Matrix::Ones(n_, n_)); }
  const std::vector<Matrix>& gate() const { return gate_; }

  /// Row-normalized message weights per lag: w = M_off o gate o sigmoid(theta).
  std::vector<Var> adjacency(Binding& bind) const {
    std::vector<Var> out;
    for (Index l = 0; l <= lag_; ++l) {
      const Matrix support = mask_off_.cwiseProduct(gate_[static_cast<std::size_t>(l)]);
      Var w = ad::mul(ad::sigmoid(bind(theta_[static_cast<std::size_t>(l)])),
                      bind.tape().constant(support));
      out.push_back(ad::mul(w, ad::reciprocal(ad::add_scalar(ad::row_sum(w), 1e-8))));
    }
    return out;
  }

  /// One prediction. `same_time` supplies lag-0 parent values directly;
  /// otherwise they are solved in the mask's topological order.
  StepOutput step(Binding& bind, const StepInputs& in, const std::vector<Var>& adj,
                  const std::optional<Var>& same_time = std::nullopt) const {
    const Index len = window_.history_len;
    if (static_cast<Index>(in.q.size()) != len || static_cast<Index>(in.r.size()) != len)
      throw SchemaError("history window length must equal " + std::to_string(len));
    require(static_cast<Index>(adj.size()) == lag_ + 1, "adjacency needs L+1 slices");
    const Index rows = in.q.back().rows();
    if (rows % n_ != 0) throw SchemaError("rows are not a multiple of the station count");
    const Index batch = rows / n_;

    std::vector<Var> fixed = {temporal(bind, in), in.q.back(), in.r_next, station_embedding(bind, batch)};
    Var base = ad::hcat(fixed);
    std::vector<Var> lagged;
    for (Index l = 1; l <= lag_; ++l)
      lagged.push_back(message(adj[static_cast<std::size_t>(l)], in.q[static_cast<std::size_t>(len - l)], batch));

    auto readout = [&](const Var& m0) {
      std::vector<Var> parts = {base, m0};
      parts.insert(parts.end(), lagged.begin(), lagged.end());
      Var a = ad::tanh(ad::add(ad::matmul(ad::hcat(parts), bind(w0_)), bind(b0_)));
      Var out = ad::add(ad::matmul(a, bind(w1_)), bind(b1_));
      return StepOutput{ad::add(in.q.back(), out), a};
    };
    if (same_time) {
      if (same_time->rows() != rows || same_time->cols() != 1)
        throw SchemaError("same-time values must be (N*B) x 1");
      return readout(message(adj[0], *same_time, batch));
    }
    // The lag-0 system is nilpotent over the mask, so depth+1 sweeps give the
    // exact topological solve.
    StepOutput s = readout(bind.tape().constant(Matrix::Zero(rows, 1)));
    for (Index it = 0; it < depth_; ++it) s = readout(message(adj[0], s.prediction, batch));
    return s;
  }

  /// Horizon-H rollout. `q` holds l history columns, `r` runoff columns for
  /// positions 0..l+H-1 (only the first l are read in past-only mode).
  std::vector<StepOutput> rollout(Binding& bind, const std::vector<Var>& q, const std::vector<Var>& r,
                                  Index horizon, const std::vector<Var>& adj,
                                  const std::vector<Var>* same_time = nullptr) const {
    if (horizon < 1) throw ContractError("rollout horizon must be >= 1");
    const Index len = window_.history_len;
    if (static_cast<Index>(q.size()) != len) throw SchemaError("history window length mismatch");
    const bool ahead = opt_.mode == ConditioningMode::kForecastForcings;
    const Index need = ahead ? len + horizon : len;
    if (static_cast<Index>(r.size()) < need) throw SchemaError("runoff context too short for the horizon");
    if (same_time) require(static_cast<Index>(same_time->size()) >= horizon, "same-time values per step");
    auto r_at = [&](Index pos) -> const Var& {
      return (!ahead && pos > len - 1) ? r[static_cast<std::size_t>(len - 1)] : r[static_cast<std::size_t>(pos)];
    };
    std::vector<Var> hist = q;
    std::vector<StepOutput> out;
    for (Index h = 0; h < horizon; ++h) {
      StepInputs in;
      in.q.assign(hist.end() - len, hist.end());
      for (Index p = 0; p < len; ++p) in.r.push_back(r_at(h + p));
      in.r_next = ahead ? r_at(len + h) : r_at(len - 1);
      std::optional<Var> st;
      if (same_time) st = (*same_time)[static_cast<std::size_t>(h)];
      out.push_back(step(bind, in, adj, st));
      hist.push_back(out.back().prediction);
    }
    return out;
  }

  /// d prediction / d message_l per row, times the message weights and
  /// averaged over windows: S_l(k, j) = mean_b |g_l(k, b)| * A_l(k, j).
  std::vector<Var> routing_sensitivity(Binding& bind, const StepOutput& s,
                                       const std::vector<Var>& adj) const {
    const Index rows = s.hidden.rows(), batch = rows / n_;
    Var deriv = ad::sub(bind.tape().constant(Matrix::Ones(rows, opt_.hidden)), ad::square(s.hidden));
    Var w1 = bind(w1_);
    std::vector<Var> out;
    for (Index l = 0; l <= lag_; ++l) {
      Var row = ad::slice_rows(bind(w0_), message_offset() + l, 1);
      Var g = ad::abs(ad::matmul(ad::mul(deriv, row), w1));
      Var per_station = ad::scale(ad::row_sum(ad::reshape(g, n_, batch)), 1.0 / static_cast<double>(batch));
      out.push_back(ad::mul(adj[static_cast<std::size_t>(l)], per_station));
    }
    return out;
  }

  /// Sets the readout output to zero so that the model predicts Q_t.
  void persistence_init(ParameterSet& params) const {
    params.value(w1_).setZero();
    params.value(b1_).setZero();
  }

 private:
  Index readout_in() const { return message_offset() + lag_ + 1; }
  Index message_offset() const { return 2 * opt_.channels + 1 + dr_ + opt_.embed_dim; }

  /// GLU convolution over [Q, r]; last-position and mean-pooled features.
  Var temporal(Binding& bind, const StepInputs& in) const {
    const Index len = window_.history_len, k = opt_.kernel, c = opt_.channels;
    std::vector<Var> x;
    for (Index p = 0; p < len; ++p)
      x.push_back(ad::hcat({in.q[static_cast<std::size_t>(p)], in.r[static_cast<std::size_t>(p)]}));
    Var w = bind(conv_w_), b = bind(conv_b_);
    Var last, acc;
    for (Index p = k - 1; p < len; ++p) {
      std::vector<Var> patch(x.begin() + (p - k + 1), x.begin() + p + 1);
      Var h = ad::add(ad::matmul(ad::hcat(patch), w), b);
      Var g = ad::mul(ad::slice_cols(h, 0, c), ad::sigmoid(ad::slice_cols(h, c, c)));
      acc = acc.valid() ? ad::add(acc, g) : g;
      last = g;
    }
    return ad::hcat({last, ad::scale(acc, 1.0 / static_cast<double>(len - k + 1))});
  }

  Var station_embedding(Binding& bind, Index batch) const {
    std::vector<Index> idx;
    for (Index k = 0; k < n_; ++k)
      for (Index b = 0; b < batch; ++b) idx.push_back(k);
    return ad::gather_rows(bind(embed_), idx);
  }

  Var message(const Var& a, const Var& v, Index batch) const {
    return ad::reshape(ad::matmul(a, ad::reshape(v, n_, batch)), n_ * batch, 1);
  }

  static Index longest_path(const Matrix& adj) {
    auto order = linalg::topological_order(adj);
    const Index n = adj.rows();
    std::vector<Index> depth(static_cast<std::size_t>(n), 0);
    Index best = 0;
    for (Index v : *order)
      for (Index u = 0; u < n; ++u)
        if (adj(u, v) != 0.0) {
          auto& d = depth[static_cast<std::size_t>(u)];
          d = std::max(d, depth[static_cast<std::size_t>(v)] + 1);
          best = std::max(best, d);
        }
    return best;
  }

  Index n_ = 0, dr_ = 0, lag_ = 0, depth_ = 0;
  WindowConfig window_;
  ForecasterOptions opt_;
  Matrix mask_off_;
  int conv_w_ = -1, conv_b_ = -1, embed_ = -1, w0_ = -1, b0_ = -1, w1_ = -1, b1_ = -1;
  std::vector<int> theta_;
  std::vector<Matrix> gate_;
};

/// Horizon-averaged MAE over stations and windows.
inline Var forecast_loss(const std::vector<Var>& predictions, const std::vector<Var>& targets) {
  require(!predictions.empty() && predictions.size() == targets.size(),
          "forecast_loss needs one target per horizon step");
  Var total;
  for (std::size_t h = 0; h < predictions.size(); ++h) {
    require(predictions[h].rows() == targets[h].rows() && predictions[h].cols() == targets[h].cols(),
            "prediction and target shapes differ");
    Var e = ad::mean(ad::abs(ad::sub(predictions[h], targets[h])));
    total = total.valid() ? ad::add(total, e) : e;
  }
  return ad::scale(total, 1.0 / static_cast<double>(predictions.size()));
}

inline double forecast_loss(const Matrix& predictions, const Matrix& targets) {
  require(predictions.rows() == targets.rows() && predictions.cols() == targets.cols(),
          "prediction and target shapes differ");
  require(predictions.size() > 0, "forecast_loss of an empty tensor");
  return (predictions - targets).cwiseAbs().mean();
}

// ---------------------------------------------------------------------------
// Frozen single-window helpers. `q` is l x N, runoff is (>= l) x N x d_r, time
// first; the result is H x N.

namespace detail {
inline std::vector<Var> columns_of(ad::Tape& tape, const Matrix& q) {
  std::vector<Var> out;
  for (Index p = 0; p < q.rows(); ++p) out.push_back(tape.constant(q.row(p).transpose()));
  return out;
}
inline std::vector<Var> runoff_of(ad::Tape& tape, const Panel& r) {
  std::vector<Var> out;
  for (Index p = 0; p < r.times(); ++p) {
    Matrix m(r.stations(), r.features());
    for (Index k = 0; k < r.stations(); ++k) m.row(k) = r.row(p, k);
    out.push_back(tape.constant(std::move(m)));
  }
  return out;
}
}  // namespace detail

inline Matrix rollout(const Forecaster& model, const ParameterSet& params, const Matrix& q,
                      const Panel& runoff, Index horizon) {
  if (horizon < 1) throw ContractError("rollout horizon must be >= 1");
  if (q.cols() != model.stations() || runoff.stations() != model.stations())
    throw SchemaError("window station count does not match the model");
  if (runoff.features() != model.runoff_dim()) throw SchemaError("runoff width does not match d_r");
  ad::Tape tape;
  Binding bind(tape, params, false);
  auto adj = model.adjacency(bind);
  auto steps = model.rollout(bind, detail::columns_of(tape, q), detail::runoff_of(tape, runoff), horizon, adj);
  Matrix out(horizon, model.stations());
  for (Index h = 0; h < horizon; ++h) out.row(h) = steps[static_cast<std::size_t>(h)].prediction.value().transpose();
  return out;
}

inline Eigen::VectorXd one_step(const Forecaster& model, const ParameterSet& params, const Matrix& q,
                                const Panel& runoff) {
  return rollout(model, params, q, runoff, 1).row(0).transpose();
}

}  // namespace caustream::forecast
