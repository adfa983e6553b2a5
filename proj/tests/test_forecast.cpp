#include <gtest/gtest.h>

#include <random>

#include "caustream/forecast/forecaster.hpp"
#include "caustream/forecast/window.hpp"
#include "support.hpp"

using namespace caustream;
using namespace caustream::forecast;

namespace {

// Stations 0 -> 1 -> 2 with the transitive edge 0 -> 2; station 3 isolated.
Matrix line_mask() {
  Matrix m = Matrix::Identity(4, 4);
  m(1, 0) = m(2, 1) = m(2, 0) = 1.0;
  return m;
}

Matrix randn(Index r, Index c, nn::Rng& rng, double s = 1.0) {
  std::normal_distribution<double> z(0.0, s);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = z(rng);
  return m;
}

Panel random_runoff(Index t, Index n, Index d, nn::Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Panel p(t, n, d);
  for (Index a = 0; a < t; ++a)
    for (Index k = 0; k < n; ++k)
      for (Index i = 0; i < d; ++i) p(a, k, i) = z(rng);
  return p;
}

struct Model {
  nn::ParameterSet params;
  Forecaster f;
};

Model make(const Matrix& mask, WindowConfig w = {}, ConditioningMode mode = ConditioningMode::kForecastForcings,
           std::uint64_t seed = 3, Index lag = 1) {
  Model m;
  nn::Rng rng(seed);
  ForecasterOptions opt;
  opt.mode = mode;
  opt.out_gain = 1.0;
  m.f = Forecaster(m.params, mask.rows(), 2, lag, mask, w, rng, opt);
  // Non-trivial message weights.
  for (Index l = 0; l <= lag; ++l) m.params.value(m.f.theta_id(l)) = randn(mask.rows(), mask.rows(), rng);
  return m;
}

}  // namespace

TEST(Window, PresetsMapToFixedLengths) {
  EXPECT_EQ(WindowConfig::from_preset(WindowPreset::kShort), (WindowConfig{7, 1, WindowPreset::kShort}));
  EXPECT_EQ(WindowConfig::from_preset(WindowPreset::kMedium), (WindowConfig{14, 3, WindowPreset::kMedium}));
  EXPECT_EQ(WindowConfig::from_preset(WindowPreset::kLong), (WindowConfig{28, 7, WindowPreset::kLong}));
  EXPECT_EQ(parse_preset("medium"), WindowPreset::kMedium);
  EXPECT_THROW(parse_preset("weekly"), ConfigError);
  EXPECT_THROW(WindowConfig::from_preset(WindowPreset::kCustom), ConfigError);
  EXPECT_THROW(WindowConfig::custom(0, 1), ConfigError);
  EXPECT_EQ(WindowConfig::custom(10, 2).preset, WindowPreset::kCustom);
}

TEST(Rollout, HorizonOneEqualsOneStep) {
  nn::Rng rng(11);
  auto m = make(line_mask());
  const Matrix q = randn(7, 4, rng);
  const Panel r = random_runoff(8, 4, 2, rng);
  const Matrix h1 = rollout(m.f, m.params, q, r, 1);
  const Eigen::VectorXd s = one_step(m.f, m.params, q, r);
  EXPECT_EQ(h1.row(0).transpose(), s);
}

TEST(Rollout, LaterStepsFeedBackPredictions) {
  nn::Rng rng(12);
  auto m = make(line_mask());
  const Matrix q = randn(7, 4, rng);
  const Panel r = random_runoff(10, 4, 2, rng);
  const Matrix out = rollout(m.f, m.params, q, r, 3);
  // Second step: window shifted by one with the first prediction appended.
  Matrix q2(7, 4);
  q2.topRows(6) = q.bottomRows(6);
  q2.row(6) = out.row(0);
  Panel r2(9, 4, 2);
  for (Index t = 0; t < 9; ++t)
    for (Index k = 0; k < 4; ++k)
      for (Index i = 0; i < 2; ++i) r2(t, k, i) = r(t + 1, k, i);
  EXPECT_LT((one_step(m.f, m.params, q2, r2) - out.row(1).transpose()).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Rollout, ContractErrors) {
  nn::Rng rng(13);
  auto m = make(line_mask());
  const Matrix q = randn(7, 4, rng);
  const Panel r = random_runoff(8, 4, 2, rng);
  EXPECT_THROW(rollout(m.f, m.params, q, r, 0), ContractError);
  EXPECT_THROW(rollout(m.f, m.params, randn(6, 4, rng), r, 1), SchemaError);
  EXPECT_THROW(rollout(m.f, m.params, q, random_runoff(7, 4, 2, rng), 1), SchemaError);
  EXPECT_THROW(rollout(m.f, m.params, randn(7, 3, rng), r, 1), SchemaError);
}

TEST(Forecaster, ConstructionChecks) {
  nn::ParameterSet p;
  nn::Rng rng(1);
  Matrix cyc = Matrix::Identity(2, 2);
  cyc(0, 1) = cyc(1, 0) = 1.0;
  EXPECT_THROW(Forecaster(p, 2, 2, 1, cyc, {}, rng), StructuralError);
  EXPECT_THROW(Forecaster(p, 2, 2, 1, Matrix::Identity(3, 3), {}, rng), SchemaError);
  EXPECT_THROW(Forecaster(p, 2, 2, 1, Matrix::Identity(2, 2), WindowConfig::custom(2, 1), rng), ConfigError);
}

TEST(Forecaster, IsolatedStationIgnoresOthers) {
  nn::Rng rng(21);
  auto m = make(line_mask());
  Matrix q = randn(7, 4, rng);
  Panel r = random_runoff(8, 4, 2, rng);
  const Eigen::VectorXd base = one_step(m.f, m.params, q, r);
  q.col(0).array() += 3.0;
  q.col(2).array() -= 1.0;
  for (Index t = 0; t < 8; ++t) r(t, 1, 0) += 2.0;
  const Eigen::VectorXd moved = one_step(m.f, m.params, q, r);
  EXPECT_EQ(moved(3), base(3));
  EXPECT_NE(moved(2), base(2));
}

TEST(Forecaster, NoSensitivityOutsideMask) {
  nn::Rng rng(22);
  auto m = make(line_mask());
  const Matrix q = randn(7, 4, rng);
  const Panel r = random_runoff(8, 4, 2, rng);
  const Eigen::VectorXd base = one_step(m.f, m.params, q, r);
  const Matrix mask = line_mask();
  for (Index j = 0; j < 4; ++j) {
    Matrix qj = q;
    qj.col(j).array() += 0.5;
    const Eigen::VectorXd d = one_step(m.f, m.params, qj, r) - base;
    for (Index k = 0; k < 4; ++k)
      if (mask(k, j) == 0.0) {
        EXPECT_EQ(d(k), 0.0) << "station " << k << " moved by " << j;
      }
  }
  // Analytic sensitivity is zero off the mask and on the diagonal.
  ad::Tape tape;
  nn::Binding bind(tape, m.params, false);
  auto adj = m.f.adjacency(bind);
  StepInputs in;
  for (Index p = 0; p < 7; ++p) {
    in.q.push_back(tape.constant(q.row(p).transpose()));
    Matrix rr(4, 2);
    for (Index k = 0; k < 4; ++k) rr.row(k) = r.row(p, k);
    in.r.push_back(tape.constant(rr));
  }
  in.r_next = in.r.back();
  auto s = m.f.routing_sensitivity(bind, m.f.step(bind, in, adj), adj);
  for (const auto& sl : s)
    for (Index k = 0; k < 4; ++k)
      for (Index j = 0; j < 4; ++j)
        if (mask(k, j) == 0.0 || k == j) {
          EXPECT_EQ(sl.value()(k, j), 0.0);
        }
}

TEST(Forecaster, GateRemovesUpstreamInfluence) {
  nn::Rng rng(23);
  auto m = make(line_mask());
  const Matrix q = randn(7, 4, rng);
  const Panel r = random_runoff(8, 4, 2, rng);
  std::vector<Matrix> gate(2, Matrix::Ones(4, 4));
  gate[0](1, 0) = gate[1](1, 0) = 0.0;
  m.f.set_gate(gate);
  const Eigen::VectorXd base = one_step(m.f, m.params, q, r);
  Matrix q0 = q;
  q0.col(0).array() += 1.0;
  EXPECT_EQ(one_step(m.f, m.params, q0, r)(1), base(1));
  m.f.clear_gate();
  EXPECT_NE(one_step(m.f, m.params, q0, r)(1), base(1));
}

TEST(Forecaster, StationPermutationEquivariance) {
  nn::Rng rng(31);
  const Matrix mask = line_mask();
  auto a = make(mask);
  const std::vector<Index> perm = {2, 3, 0, 1};  // b station i = a station perm[i]
  Matrix pm(4, 4);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) pm(i, j) = mask(perm[i], perm[j]);
  auto b = make(pm);
  for (Index l = 0; l <= 1; ++l) {
    const Matrix& ta = a.params.value(a.f.theta_id(l));
    Matrix& tb = b.params.value(b.f.theta_id(l));
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 4; ++j) tb(i, j) = ta(perm[i], perm[j]);
  }
  for (Index i = 0; i < 4; ++i)
    b.params.value(b.f.embedding_id()).row(i) = a.params.value(a.f.embedding_id()).row(perm[i]);
  const Matrix q = randn(7, 4, rng);
  const Panel r = random_runoff(9, 4, 2, rng);
  Matrix qb(7, 4);
  Panel rb(9, 4, 2);
  for (Index i = 0; i < 4; ++i) {
    qb.col(i) = q.col(perm[i]);
    for (Index t = 0; t < 9; ++t)
      for (Index c = 0; c < 2; ++c) rb(t, i, c) = r(t, perm[i], c);
  }
  const Matrix ya = rollout(a.f, a.params, q, r, 2), yb = rollout(b.f, b.params, qb, rb, 2);
  for (Index i = 0; i < 4; ++i) EXPECT_LT((yb.col(i) - ya.col(perm[i])).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Forecaster, DuplicateStationsAgree) {
  nn::Rng rng(32);
  const Matrix mask = Matrix::Identity(3, 3);
  auto m = make(mask);
  m.params.value(m.f.embedding_id()).row(2) = m.params.value(m.f.embedding_id()).row(0);
  Matrix q = randn(7, 3, rng);
  q.col(2) = q.col(0);
  Panel r = random_runoff(8, 3, 2, rng);
  for (Index t = 0; t < 8; ++t)
    for (Index c = 0; c < 2; ++c) r(t, 2, c) = r(t, 0, c);
  const Eigen::VectorXd y = one_step(m.f, m.params, q, r);
  EXPECT_DOUBLE_EQ(y(0), y(2));
}

TEST(Forecaster, LagZeroSolveIsFixedPoint) {
  nn::Rng rng(33);
  auto m = make(line_mask());
  ad::Tape tape;
  nn::Binding bind(tape, m.params, false);
  auto adj = m.f.adjacency(bind);
  StepInputs in;
  for (Index p = 0; p < 7; ++p) {
    in.q.push_back(tape.constant(randn(4, 1, rng)));
    in.r.push_back(tape.constant(randn(4, 2, rng)));
  }
  in.r_next = tape.constant(randn(4, 2, rng));
  auto solved = m.f.step(bind, in, adj);
  auto fed = m.f.step(bind, in, adj, solved.prediction);
  EXPECT_LT((solved.prediction.value() - fed.prediction.value()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Forecaster, PersistenceInitPredictsLastValue) {
  nn::Rng rng(34);
  auto m = make(line_mask());
  m.f.persistence_init(m.params);
  const Matrix q = randn(7, 4, rng);
  const Eigen::VectorXd y = one_step(m.f, m.params, q, random_runoff(8, 4, 2, rng));
  EXPECT_EQ(y, q.row(6).transpose());
}

TEST(Forecaster, ConditioningModeControlsFutureRunoff) {
  nn::Rng rng(35);
  const Matrix q = randn(7, 4, rng);
  Panel r = random_runoff(8, 4, 2, rng);
  Panel r_changed = r;
  for (Index k = 0; k < 4; ++k) r_changed(7, k, 0) += 1.0;
  auto past = make(line_mask(), {}, ConditioningMode::kPastOnly);
  EXPECT_EQ(one_step(past.f, past.params, q, r), one_step(past.f, past.params, q, r_changed));
  auto ahead = make(line_mask(), {}, ConditioningMode::kForecastForcings);
  EXPECT_NE(one_step(ahead.f, ahead.params, q, r), one_step(ahead.f, ahead.params, q, r_changed));
  EXPECT_EQ(parse_conditioning(to_string(ConditioningMode::kPastOnly)), ConditioningMode::kPastOnly);
}

TEST(ForecastLoss, HandCases) {
  Matrix p(1, 3), t(1, 3);
  p << 1, 2, 3;
  t << 2.5, 0.5, 4.5;
  EXPECT_DOUBLE_EQ(forecast_loss(p, t), 1.5);
  ad::Tape tape;
  Matrix a(2, 1), b(2, 1), c(2, 1), d(2, 1);
  a << 0, 0;
  b << 1, -1;  // step error 1
  c << 0, 0;
  d << 2, 2;   // step error 2
  auto v = forecast_loss(std::vector<ad::Var>{tape.constant(a), tape.constant(c)},
                         std::vector<ad::Var>{tape.constant(b), tape.constant(d)});
  EXPECT_DOUBLE_EQ(v.item(), 1.5);
}

TEST(ForecastLoss, GradientMatchesFiniteDifferences) {
  nn::Rng rng(41);
  auto m = make(line_mask(), WindowConfig::custom(4, 2), ConditioningMode::kForecastForcings, 5);
  std::vector<Matrix> q, r, tg;
  for (Index p = 0; p < 4; ++p) q.push_back(randn(8, 1, rng));  // batch of 2
  for (Index p = 0; p < 6; ++p) r.push_back(randn(8, 2, rng));
  for (Index h = 0; h < 2; ++h) tg.push_back(randn(8, 1, rng, 3.0));
  auto loss = [&](nn::Binding& bind) {
    auto& tape = bind.tape();
    std::vector<ad::Var> qv, rv, tv;
    for (auto& x : q) qv.push_back(tape.constant(x));
    for (auto& x : r) rv.push_back(tape.constant(x));
    for (auto& x : tg) tv.push_back(tape.constant(x));
    auto adj = m.f.adjacency(bind);
    auto steps = m.f.rollout(bind, qv, rv, 2, adj);
    std::vector<ad::Var> preds;
    for (auto& s : steps) preds.push_back(s.prediction);
    return forecast_loss(preds, tv);
  };
  EXPECT_LT(check::gradient_check(m.params, loss), 1e-4);
}
