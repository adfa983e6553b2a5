#pragma once

// Hydrologic skill scores and embedding alignment scores.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "caustream/core/errors.hpp"
#include "caustream/core/panel.hpp"

namespace caustream::eval {

using Vector = Eigen::VectorXd;

namespace detail {
inline void same_length(const Vector& a, const Vector& b, Index min_len, const char* what) {
  if (a.size() != b.size()) throw ContractError(std::string(what) + ": series lengths differ");
  if (a.size() < min_len)
    throw UndefinedMetricError(std::string(what) + ": needs at least " + std::to_string(min_len) + " points");
  if (!a.allFinite() || !b.allFinite()) throw UndefinedMetricError(std::string(what) + ": non-finite input");
}

inline double mean(const Vector& v) { return v.mean(); }

/// Population standard deviation.
inline double stddev(const Vector& v) {
  return std::sqrt((v.array() - v.mean()).square().mean());
}
}  // namespace detail

inline double nse(const Vector& obs, const Vector& pred) {
  detail::same_length(obs, pred, 2, "nse");
  const double sst = (obs.array() - obs.mean()).square().sum();
  if (!(sst > 0.0)) throw UndefinedMetricError("nse: observed series is constant");
  return 1.0 - (obs - pred).squaredNorm() / sst;
}

inline double pearson(const Vector& obs, const Vector& pred) {
  detail::same_length(obs, pred, 2, "pearson");
  const Vector a = obs.array() - obs.mean(), b = pred.array() - pred.mean();
  const double va = a.squaredNorm(), vb = b.squaredNorm();
  if (!(va > 0.0) || !(vb > 0.0)) throw UndefinedMetricError("pearson: zero variance");
  return std::clamp(a.dot(b) / std::sqrt(va * vb), -1.0, 1.0);
}

enum class KgeVariability { kCvRatio, kStdRatio };

struct KgeParts {
  double kge, r, beta, gamma;
};

inline KgeParts kge_parts(const Vector& obs, const Vector& pred, KgeVariability var = KgeVariability::kCvRatio) {
  detail::same_length(obs, pred, 2, "kge");
  const double mo = obs.mean(), mp = pred.mean();
  const double so = detail::stddev(obs), sp = detail::stddev(pred);
  if (mo == 0.0) throw UndefinedMetricError("kge: observed mean is zero");
  if (!(so > 0.0)) throw UndefinedMetricError("kge: observed series is constant");
  const double r = sp > 0.0 ? pearson(obs, pred) : 0.0;
  const double beta = mp / mo;
  double gamma;
  if (var == KgeVariability::kCvRatio) {
    if (mp == 0.0) throw UndefinedMetricError("kge: predicted mean is zero");
    gamma = (sp / mp) / (so / mo);
  } else {
    gamma = sp / so;
  }
  const double k = 1.0 - std::sqrt((r - 1) * (r - 1) + (beta - 1) * (beta - 1) + (gamma - 1) * (gamma - 1));
  return {k, r, beta, gamma};
}

inline double kge(const Vector& obs, const Vector& pred, KgeVariability var = KgeVariability::kCvRatio) {
  return kge_parts(obs, pred, var).kge;
}

inline double ve(const Vector& obs, const Vector& pred) {
  detail::same_length(obs, pred, 1, "ve");
  const double vol = obs.sum();
  if (!(vol > 0.0)) throw UndefinedMetricError("ve: observed volume is not positive");
  return 1.0 - (pred - obs).cwiseAbs().sum() / vol;
}

/// Average ranks (ties share the mean rank).
inline Vector ranks(const Vector& v) {
  const Index n = v.size();
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return v(a) < v(b); });
  Vector r(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && v(idx[static_cast<std::size_t>(j + 1)]) == v(idx[static_cast<std::size_t>(i)])) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) r(idx[static_cast<std::size_t>(k)]) = avg;
    i = j + 1;
  }
  return r;
}

inline double spearman(const Vector& a, const Vector& b) { return pearson(ranks(a), ranks(b)); }

struct MccResult {
  double mcc = 0.0;
  std::vector<Index> excluded;  // constant embedding columns
};

/// Mean over embedding columns of the best absolute Spearman correlation
/// against any truth column.
inline MccResult mcc_alignment_detailed(const Matrix& embedding, const Matrix& truth) {
  if (embedding.rows() != truth.rows()) throw ContractError("mcc: row counts differ");
  if (embedding.rows() < 3) throw UndefinedMetricError("mcc: needs at least 3 time steps");
  MccResult res;
  std::vector<Vector> truth_ranks;
  for (Index j = 0; j < truth.cols(); ++j) {
    const Vector c = truth.col(j);
    if ((c.array() == c(0)).all()) continue;
    truth_ranks.push_back(ranks(c));
  }
  if (truth_ranks.empty()) throw UndefinedMetricError("mcc: every truth column is constant");
  double acc = 0.0;
  Index used = 0;
  for (Index i = 0; i < embedding.cols(); ++i) {
    const Vector c = embedding.col(i);
    if ((c.array() == c(0)).all()) {
      res.excluded.push_back(i);
      continue;
    }
    const Vector ri = ranks(c);
    double best = 0.0;
    for (const auto& rt : truth_ranks) best = std::max(best, std::abs(pearson(ri, rt)));
    acc += best;
    ++used;
  }
  if (used == 0) throw UndefinedMetricError("mcc: every embedding column is constant");
  res.mcc = acc / static_cast<double>(used);
  return res;
}

inline double mcc_alignment(const Matrix& embedding, const Matrix& truth) {
  return mcc_alignment_detailed(embedding, truth).mcc;
}

// ---------------------------------------------------------------------------
// Kernel ridge alignment.

struct KernelRidgeOptions {
  double ridge = 1e-3;
  double train_frac = 0.8;
  std::optional<double> bandwidth;  // default: median pairwise distance
  Index min_points = 50;
};

inline double median_pairwise_distance(const Matrix& x) {
  std::vector<double> d;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).norm());
  if (d.empty()) return 1.0;
  auto mid = d.begin() + static_cast<long>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  return *mid > 0.0 ? *mid : 1.0;
}

inline Matrix rbf_kernel(const Matrix& a, const Matrix& b, double bandwidth) {
  Matrix k(a.rows(), b.rows());
  const double g = 1.0 / (2.0 * bandwidth * bandwidth);
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) k(i, j) = std::exp(-g * (a.row(i) - b.row(j)).squaredNorm());
  return k;
}

/// Held-out R^2 of an RBF kernel ridge map embedding -> truth, chronological
/// split; averaged over truth columns. Inputs are z-scored on the train part.
inline double kernel_ridge_r2(const Matrix& embedding, const Matrix& truth, const KernelRidgeOptions& opt = {}) {
  if (embedding.rows() != truth.rows()) throw ContractError("r2: row counts differ");
  const Index n = embedding.rows();
  if (n < opt.min_points) throw UndefinedMetricError("r2: fewer than " + std::to_string(opt.min_points) + " points");
  const Index nt = static_cast<Index>(std::floor(opt.train_frac * static_cast<double>(n)));
  if (nt < 2 || n - nt < 2) throw UndefinedMetricError("r2: split leaves too few points");
  Matrix x = embedding;
  const Eigen::RowVectorXd mu = x.topRows(nt).colwise().mean();
  Eigen::RowVectorXd sd = ((x.topRows(nt).rowwise() - mu).array().square().colwise().mean()).sqrt();
  for (Index j = 0; j < sd.size(); ++j)
    if (!(sd(j) > 0.0)) sd(j) = 1.0;
  x = (x.rowwise() - mu).array().rowwise() / sd.array();
  const Matrix xt = x.topRows(nt), xv = x.bottomRows(n - nt);
  const double bw = opt.bandwidth ? *opt.bandwidth : median_pairwise_distance(xt);
  Matrix k = rbf_kernel(xt, xt, bw);
  k.diagonal().array() += opt.ridge * static_cast<double>(nt);
  const Eigen::LDLT<Matrix> solver(k);
  const Matrix kv = rbf_kernel(xv, xt, bw);
  double acc = 0.0;
  for (Index c = 0; c < truth.cols(); ++c) {
    const Vector yt = truth.col(c).head(nt), yv = truth.col(c).tail(n - nt);
    const double ym = yt.mean();
    const Vector alpha = solver.solve((yt.array() - ym).matrix());
    const Vector pred = (kv * alpha).array() + ym;
    const double sst = (yv.array() - yv.mean()).square().sum();
    if (!(sst > 0.0)) throw UndefinedMetricError("r2: held-out truth is constant");
    acc += 1.0 - (yv - pred).squaredNorm() / sst;
  }
  return acc / static_cast<double>(truth.cols());
}

struct R2Result {
  double r2 = 0.0;
  Index covered = 0;
  std::vector<Index> skipped;
};

/// Per-station kernel ridge R^2 averaged over stations with enough data.
inline R2Result r2_alignment(const std::vector<Matrix>& embedding, const std::vector<Matrix>& truth,
                             const KernelRidgeOptions& opt = {}) {
  if (embedding.size() != truth.size()) throw ContractError("r2: station counts differ");
  R2Result res;
  double acc = 0.0;
  for (std::size_t k = 0; k < embedding.size(); ++k) {
    try {
      acc += kernel_ridge_r2(embedding[k], truth[k], opt);
      ++res.covered;
    } catch (const UndefinedMetricError&) {
      res.skipped.push_back(static_cast<Index>(k));
    }
  }
  if (res.covered == 0) throw UndefinedMetricError("r2: no station had enough data");
  res.r2 = acc / static_cast<double>(res.covered);
  return res;
}

}  // namespace caustream::eval
