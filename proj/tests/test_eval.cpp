#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "caustream/eval/metrics.hpp"
#include "caustream/eval/report.hpp"

using namespace caustream;
using namespace caustream::eval;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Direct-formula references, written loop by loop in long double.
long double ref_mean(const Vector& v) {
  long double s = 0;
  for (Index i = 0; i < v.size(); ++i) s += v(i);
  return s / v.size();
}

long double ref_nse(const Vector& o, const Vector& p) {
  const long double mo = ref_mean(o);
  long double num = 0, den = 0;
  for (Index i = 0; i < o.size(); ++i) {
    num += (o(i) - p(i)) * (long double)(o(i) - p(i));
    den += (o(i) - mo) * (o(i) - mo);
  }
  return 1 - num / den;
}

long double ref_pearson(const Vector& a, const Vector& b) {
  const long double ma = ref_mean(a), mb = ref_mean(b);
  long double sab = 0, saa = 0, sbb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    saa += (a(i) - ma) * (a(i) - ma);
    sbb += (b(i) - mb) * (b(i) - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

long double ref_sd(const Vector& v) {
  const long double m = ref_mean(v);
  long double s = 0;
  for (Index i = 0; i < v.size(); ++i) s += (v(i) - m) * (v(i) - m);
  return std::sqrt(s / v.size());
}

long double ref_kge(const Vector& o, const Vector& p) {
  const long double r = ref_pearson(o, p), mo = ref_mean(o), mp = ref_mean(p);
  const long double beta = mp / mo, gamma = (ref_sd(p) / mp) / (ref_sd(o) / mo);
  return 1 - std::sqrt((r - 1) * (r - 1) + (beta - 1) * (beta - 1) + (gamma - 1) * (gamma - 1));
}

long double ref_ve(const Vector& o, const Vector& p) {
  long double err = 0, vol = 0;
  for (Index i = 0; i < o.size(); ++i) {
    err += std::fabs(p(i) - o(i));
    vol += o(i);
  }
  return 1 - err / vol;
}

// Rank by counting: 1 + #smaller + (#equal - 1) / 2.
Vector ref_ranks(const Vector& v) {
  Vector r(v.size());
  for (Index i = 0; i < v.size(); ++i) {
    double less = 0, eq = 0;
    for (Index j = 0; j < v.size(); ++j) {
      less += v(j) < v(i);
      eq += v(j) == v(i);
    }
    r(i) = 1 + less + (eq - 1) / 2;
  }
  return r;
}

long double ref_mcc(const Matrix& e, const Matrix& t) {
  long double acc = 0;
  for (Index i = 0; i < e.cols(); ++i) {
    long double best = 0;
    for (Index j = 0; j < t.cols(); ++j)
      best = std::max(best, std::fabs(ref_pearson(ref_ranks(e.col(i)), ref_ranks(t.col(j)))));
    acc += best;
  }
  return acc / e.cols();
}

Matrix randn(Index r, Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = z(rng);
  return m;
}

scm::BinaryDag dag(std::vector<Matrix> slices) { return {std::move(slices), 0.5}; }

}  // namespace

TEST(Metrics, HandCases) {
  EXPECT_DOUBLE_EQ(nse(vec({1, 2, 3}), vec({1, 2, 4})), 0.5);
  EXPECT_DOUBLE_EQ(ve(vec({2, 2}), vec({1, 3})), 0.5);
  const Vector obs = vec({1.0, 3.0, 2.0, 5.0, 4.0});
  auto k = kge_parts(obs, 2.0 * obs);
  EXPECT_NEAR(k.r, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(k.beta, 2.0);
  EXPECT_NEAR(k.gamma, 1.0, 1e-15);
  EXPECT_NEAR(k.kge, 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(nse(obs, obs), 1.0);
  EXPECT_DOUBLE_EQ(pearson(obs, -obs), -1.0);
}

TEST(Metrics, StdRatioVariability) {
  const Vector obs = vec({1.0, 3.0, 2.0, 5.0, 4.0});
  auto k = kge_parts(obs, obs.array() + 1.0, KgeVariability::kStdRatio);
  EXPECT_NEAR(k.gamma, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(k.beta, 4.0 / 3.0);
}

TEST(Metrics, MatchDirectFormulasOnRandomSeries) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(5, 60);
  std::normal_distribution<double> z(0.0, 1.0);
  double worst = 0.0;
  for (int s = 0; s < 1000; ++s) {
    const Index n = len(rng);
    Vector o(n), p(n);
    for (Index i = 0; i < n; ++i) {
      o(i) = 10.0 + 3.0 * z(rng);
      p(i) = o(i) + 1.5 * z(rng) + 0.3;
    }
    worst = std::max(worst, std::abs(nse(o, p) - (double)ref_nse(o, p)));
    worst = std::max(worst, std::abs(pearson(o, p) - (double)ref_pearson(o, p)));
    worst = std::max(worst, std::abs(kge(o, p) - (double)ref_kge(o, p)));
    worst = std::max(worst, std::abs(ve(o, p) - (double)ref_ve(o, p)));
    Matrix e(n, 2), t(n, 2);
    e.col(0) = p;
    e.col(1) = o.array().square();
    t.col(0) = o;
    for (Index i = 0; i < n; ++i) t(i, 1) = std::round(o(i) / 2.0);  // ties
    worst = std::max(worst, std::abs(mcc_alignment(e, t) - (double)ref_mcc(e, t)));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Metrics, UndefinedCasesThrow) {
  EXPECT_THROW(nse(vec({2, 2, 2}), vec({1, 2, 3})), UndefinedMetricError);
  EXPECT_THROW(kge(vec({0, 0, 0}), vec({1, 2, 3})), UndefinedMetricError);
  EXPECT_THROW(ve(vec({-1, 0}), vec({1, 2})), UndefinedMetricError);
  EXPECT_THROW(nse(vec({1, 2}), vec({1, 2, 3})), ContractError);
  EXPECT_THROW(nse(vec({1, std::nan("")}), vec({1, 2})), UndefinedMetricError);
}

TEST(Ranks, AverageTies) {
  const Vector r = ranks(vec({3, 1, 3, 2}));
  EXPECT_EQ(r, vec({3.5, 1, 3.5, 2}));
}

TEST(Mcc, InvariantToMonotoneMapsAndNearZeroUnderIndependence) {
  std::mt19937_64 rng(7);
  const Matrix t = randn(2000, 2, rng);
  Matrix e(2000, 2);
  e.col(0) = t.col(1).array().exp();
  e.col(1) = t.col(0).array().pow(3) * -1.0;
  EXPECT_NEAR(mcc_alignment(e, t), 1.0, 1e-12);
  const Matrix noise = randn(2000, 2, rng);
  EXPECT_LT(mcc_alignment(noise, t), 0.1);
}

TEST(Mcc, ConstantColumnsExcluded) {
  std::mt19937_64 rng(3);
  const Matrix t = randn(50, 1, rng);
  Matrix e(50, 2);
  e.col(0) = t.col(0);
  e.col(1).setConstant(4.0);
  auto r = mcc_alignment_detailed(e, t);
  EXPECT_NEAR(r.mcc, 1.0, 1e-12);
  ASSERT_EQ(r.excluded.size(), 1u);
  EXPECT_EQ(r.excluded[0], 1);
}

TEST(KernelRidge, SmoothMapHighNoiseLow) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  const Index n = 300;
  Matrix x(n, 1), y(n, 1), noise(n, 1);
  std::normal_distribution<double> z(0.0, 1.0);
  for (Index i = 0; i < n; ++i) {
    x(i, 0) = u(rng);
    y(i, 0) = std::sin(2.0 * x(i, 0));
    noise(i, 0) = z(rng);
  }
  EXPECT_GT(kernel_ridge_r2(x, y), 0.95);
  EXPECT_LT(kernel_ridge_r2(noise, y), 0.1);
  EXPECT_THROW(kernel_ridge_r2(x.topRows(20), y.topRows(20)), UndefinedMetricError);
}

TEST(KernelRidge, StationCoverage) {
  std::mt19937_64 rng(9);
  const Matrix big = randn(120, 1, rng);
  const Matrix small = randn(10, 1, rng);
  auto r = r2_alignment({big, small}, {big, small});
  EXPECT_EQ(r.covered, 1);
  ASSERT_EQ(r.skipped.size(), 1u);
  EXPECT_EQ(r.skipped[0], 1);
}

TEST(GraphRecovery, HandCases) {
  Matrix chain = Matrix::Zero(3, 3);
  chain(1, 0) = chain(2, 1) = 1;
  auto perfect = graph_recovery(dag({chain}), dag({chain}));
  EXPECT_DOUBLE_EQ(perfect.f1, 1.0);
  EXPECT_EQ(perfect.shd, 0);

  Matrix rev = chain;
  rev(1, 0) = 0;
  rev(0, 1) = 1;
  auto r = graph_recovery(dag({rev}), dag({chain}));
  EXPECT_EQ(r.true_positive, 1);
  EXPECT_EQ(r.false_positive, 1);
  EXPECT_EQ(r.false_negative, 1);
  EXPECT_EQ(r.shd, 1);
  EXPECT_DOUBLE_EQ(r.f1, 0.5);

  auto empty = graph_recovery(dag({Matrix::Zero(3, 3)}), dag({chain}));
  EXPECT_DOUBLE_EQ(empty.f1, 0.0);
  EXPECT_EQ(empty.shd, 2);
}

TEST(GraphRecovery, LaggedReversalCountsTwice) {
  Matrix z = Matrix::Zero(2, 2), a = z, b = z;
  a(1, 0) = 1;
  b(0, 1) = 1;
  auto s = graph_recovery(dag({z, b}), dag({z, a}));
  EXPECT_EQ(s.shd, 2);
  EXPECT_THROW(graph_recovery(dag({z}), dag({z, a})), ContractError);
}

TEST(Report, PerStationAggregateAndSerialization) {
  Matrix obs(4, 2), pred(4, 2);
  obs << 1, 2, 2, 4, 3, 6, 4, 8;
  pred = obs;
  pred(3, 1) = 7;
  auto r = evaluate_forecasts(obs, pred, {"A", "B"}, forecast::WindowConfig::from_preset(forecast::WindowPreset::kMedium));
  EXPECT_DOUBLE_EQ(r.per_station["A"].nse, 1.0);
  EXPECT_DOUBLE_EQ(r.per_station["B"].nse, 1.0 - 1.0 / 20.0);
  EXPECT_DOUBLE_EQ(r.aggregate.nse, 0.5 * (1.0 + 0.95));
  auto j = report_json(r);
  EXPECT_EQ(j["window"]["history_len"], 14);
  EXPECT_EQ(j["window"]["horizon"], 3);
  EXPECT_EQ(j["window"]["preset"], "medium");
  const std::string csv = report_csv(r);
  EXPECT_NE(csv.find("station_id,nse,kge,ve,rho\nA,1,"), std::string::npos);
  EXPECT_NE(csv.find("\naggregate,"), std::string::npos);
}
