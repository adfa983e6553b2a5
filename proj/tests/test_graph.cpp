#include <gtest/gtest.h>

#include <functional>

#include "caustream/core/nn.hpp"
#include "caustream/graph/aggregate.hpp"
#include "caustream/graph/jacobian.hpp"
#include "caustream/graph/penalties.hpp"
#include "caustream/graph/routing.hpp"
#include "caustream/scm/oracle.hpp"
#include "support.hpp"

using namespace caustream;
using namespace caustream::graph;

namespace {

Matrix randn(Index r, Index c, nn::Rng& rng, double s = 1.0) {
  std::normal_distribution<double> z(0.0, s);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = z(rng);
  return m;
}

Matrix random_lower(Index d, nn::Rng& rng) {
  Matrix a = Matrix::Zero(d, d);
  std::normal_distribution<double> z(0.0, 1.0);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < i; ++j) a(i, j) = z(rng);
  return a;
}

// Independent cycle oracle: depth-first search with colouring.
bool has_cycle_dfs(const Matrix& a) {
  const Index d = a.rows();
  std::vector<int> colour(static_cast<std::size_t>(d), 0);
  std::function<bool(Index)> visit = [&](Index u) {
    colour[static_cast<std::size_t>(u)] = 1;
    for (Index v = 0; v < d; ++v) {
      if (a(v, u) == 0.0) continue;  // edge u -> v
      if (colour[static_cast<std::size_t>(v)] == 1) return true;
      if (colour[static_cast<std::size_t>(v)] == 0 && visit(v)) return true;
    }
    colour[static_cast<std::size_t>(u)] = 2;
    return false;
  };
  for (Index u = 0; u < d; ++u)
    if (colour[static_cast<std::size_t>(u)] == 0 && visit(u)) return true;
  return false;
}

}  // namespace

TEST(MixingJacobian, IdentityAndLinear) {
  nn::Rng rng(1);
  Matrix x = randn(5, 2, rng);
  auto id = mixing_jacobian([](ad::Tape&, const ad::Var& v) { return v; }, x);
  for (const auto& j : id) EXPECT_EQ(j, Matrix::Identity(2, 2));
  auto lin = mixing_jacobian(
      [](ad::Tape&, const ad::Var& v) {
        return ad::hcat({ad::slice_cols(v, 0, 1), ad::add(ad::slice_cols(v, 0, 1), ad::slice_cols(v, 1, 1))});
      },
      x);
  Matrix expect(2, 2);
  expect << 1, 0, 1, 1;
  for (const auto& j : lin) EXPECT_EQ(j, expect);
}

TEST(MixingJacobian, TanhNetworkMatchesCentralDifferences) {
  nn::Rng rng(2);
  nn::ParameterSet p;
  nn::Mlp mlp(p, "f", {3, 6, 3}, rng);
  auto fn = [&](ad::Tape& t, const ad::Var& v) {
    nn::Binding b(t, p, false);
    return mlp.forward(b, v);
  };
  Matrix x = randn(10, 3, rng);
  auto jac = mixing_jacobian(fn, x);
  const double h = 1e-5;
  double worst = 0;
  for (Index r = 0; r < 10; ++r)
    for (Index j = 0; j < 3; ++j) {
      Matrix xp = x.row(r), xm = x.row(r);
      xp(0, j) += h;
      xm(0, j) -= h;
      ad::Tape t1, t2;
      Matrix fp = fn(t1, t1.constant(xp)).value(), fm = fn(t2, t2.constant(xm)).value();
      for (Index i = 0; i < 3; ++i) {
        const double fd = (fp(0, i) - fm(0, i)) / (2 * h);
        const double a = jac[static_cast<std::size_t>(r)](i, j);
        worst = std::max(worst, std::abs(a - fd) / std::max(1e-3, std::abs(fd)));
      }
    }
  EXPECT_LT(worst, 1e-4);
}

TEST(CausalAdjacency, IdentityAndOracle) {
  std::vector<Matrix> eye(4, Matrix::Identity(3, 3));
  EXPECT_EQ(causal_adjacency(eye).slices[0], Matrix::Zero(3, 3));
  Matrix a(2, 2);
  a << 0, 0, 0.5, 0;
  auto o = scm::linear_scm_oracle(a);
  auto g = causal_adjacency({o.mixing, o.mixing});
  EXPECT_LT((g.slices[0] - a).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(CausalAdjacency, NearSingularRaises) {
  Matrix bad(2, 2);
  bad << 1, 1, 1, 1 + 1e-10;
  EXPECT_THROW(causal_adjacency({Matrix::Identity(2, 2), bad}), ConditioningError);
}

TEST(CausalAdjacency, LinearScmIdentityAndScaleInvariance) {
  nn::Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 2 + trial % 5;
    Matrix a = random_lower(d, rng);
    auto o = scm::linear_scm_oracle(a);
    auto g = causal_jacobians({o.mixing});
    EXPECT_LT((g[0] - a).cwiseAbs().maxCoeff(), 1e-8);
    // Rescaled noise: mixing Jacobian (I - A)^-1 diag(s).
    for (double s : {0.5, 1.0, 2.0}) {
      Eigen::VectorXd sc = Eigen::VectorXd::Constant(d, s);
      sc(0) = 1.0 / s;
      auto gs = causal_jacobians({o.mixing * sc.asDiagonal()});
      EXPECT_LT((gs[0] - a).cwiseAbs().maxCoeff(), 1e-8);
    }
  }
}

TEST(CausalAdjacency, FusedOpMatchesAndDifferentiates) {
  nn::Rng rng(4);
  const Index rows = 5, d = 3;
  nn::ParameterSet p;
  // Tangent layout rows j*R + r; near-identity instances stay well conditioned.
  Matrix tan = Matrix::Zero(d * rows, d);
  for (Index j = 0; j < d; ++j) tan.middleRows(j * rows, rows).col(j).setOnes();
  tan += randn(d * rows, d, rng, 0.3);
  const int id = p.add("tan", tan);
  Matrix w = randn(d, d, rng);
  std::vector<Matrix> jm;
  for (Index r = 0; r < rows; ++r) jm.push_back(detail::instance(tan, r, rows, d));
  ad::Tape t;
  nn::Binding b(t, p, false);
  Matrix fused = causal_adjacency_op(b(id), rows).value();
  EXPECT_LT((fused - causal_adjacency(jm).slices[0]).cwiseAbs().maxCoeff(), 1e-12);
  auto loss = [&](nn::Binding& bind) {
    return ad::sum(ad::mul(causal_adjacency_op(bind(id), rows), bind.tape().constant(w)));
  };
  EXPECT_LT(check::gradient_check(p, loss), 1e-6);
}

TEST(Sparsity, Examples) {
  std::vector<Matrix> zero_routing(2, Matrix::Zero(3, 3));
  Matrix mask = Matrix::Identity(3, 3);
  EXPECT_EQ(sparsity_loss(Matrix::Zero(2, 2), zero_routing, mask), 0.0);
  Matrix f(2, 2);
  f << 0, 2, -1, 0;
  EXPECT_EQ(sparsity_loss(f, zero_routing, mask), 3.0);
  auto r = zero_routing;
  r[1](0, 2) = 5.0;
  EXPECT_EQ(sparsity_loss(Matrix::Zero(2, 2), r, mask), 0.0);
}

TEST(Sparsity, GradientsMatchFiniteDifferences) {
  nn::Rng rng(5);
  nn::ParameterSet p;
  const int f = p.add("f", randn(4, 4, rng));
  const int r0 = p.add("r0", randn(5, 5, rng));
  const int r1 = p.add("r1", randn(5, 5, rng));
  Matrix mask = (randn(5, 5, rng).array() > 0).cast<double>();
  auto loss = [&](nn::Binding& b) { return sparsity_loss(b(f), {b(r0), b(r1)}, mask); };
  EXPECT_LT(check::gradient_check(p, loss), 1e-6);
}

TEST(Acyclicity, Examples) {
  EXPECT_EQ(acyclicity_penalty(Matrix::Zero(3, 3)), 0.0);
  Matrix nil(2, 2);
  nil << 0, 1, 0, 0;
  EXPECT_EQ(acyclicity_penalty(nil), 0.0);
  Matrix cyc(2, 2);
  cyc << 0, 1, 1, 0;
  EXPECT_NEAR(acyclicity_penalty(cyc), 2 * std::cosh(1.0) - 2, 1e-12);
  EXPECT_THROW(acyclicity_penalty(Matrix::Zero(2, 3)), ContractError);
}

TEST(Acyclicity, ZeroExactlyWhenDfsOracleSaysAcyclic) {
  nn::Rng rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const Index d = 1 + trial % 6;
    Matrix a = randn(d, d, rng);
    const double density = 0.1 + 0.5 * u(rng);
    for (Index i = 0; i < a.size(); ++i)
      if (u(rng) > density) a(i) = 0.0;
    const double h = acyclicity_penalty(a);
    if (has_cycle_dfs(a)) {
      EXPECT_GT(h, 0.0) << trial;
    } else {
      EXPECT_EQ(h, 0.0) << trial;
    }
  }
}

TEST(Acyclicity, GradientsMatchFiniteDifferences) {
  nn::Rng rng(7);
  for (Index d = 2; d <= 5; ++d) {
    nn::ParameterSet p;
    const int a = p.add("a", randn(d, d, rng, 0.7));
    auto loss = [&](nn::Binding& b) { return acyclicity_penalty(b(a)); };
    EXPECT_LT(check::gradient_check(p, loss), 1e-6) << d;
  }
}

TEST(Aggregate, Examples) {
  std::vector<Matrix> steps;
  for (int t = 0; t < 10; ++t) {
    Matrix m = Matrix::Zero(2, 2);
    m(1, 0) = 1.0;
    m(0, 1) = t < 4 ? 1.0 : 0.0;
    steps.push_back(m);
  }
  auto g = aggregate_dags(steps, 0.5);
  EXPECT_EQ(g.slices[0](1, 0), 1.0);
  EXPECT_EQ(g.slices[0](0, 1), 0.0);
  EXPECT_EQ(g.threshold_used, 0.5);
  // tau 0: any positive mass is an edge (the 2-cycle is then broken at its weakest edge).
  auto g0 = aggregate_dags(steps, 0.0);
  EXPECT_EQ(g0.slices[0](1, 0), 1.0);
  EXPECT_EQ(g0.edge_count(), 1);
  EXPECT_EQ(aggregate_dags(steps, 1.0 + 1e-9).edge_count(), 0);
  EXPECT_THROW(aggregate_dags(std::vector<Matrix>{}, 0.5), ContractError);
}

TEST(Aggregate, MonotoneInTau) {
  nn::Rng rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<Matrix>> steps;
  for (int t = 0; t < 20; ++t) {
    Matrix a(4, 4), b(4, 4);
    for (Index i = 0; i < 16; ++i) a(i) = u(rng), b(i) = u(rng);
    steps.push_back(normalize_by_max({a, b}));
  }
  auto prev = aggregate_dags_detailed(steps, 0.0).binary;
  for (double tau = 0.05; tau <= 1.0; tau += 0.05) {
    auto cur = aggregate_dags_detailed(steps, tau).binary;
    for (std::size_t l = 1; l < cur.slices.size(); ++l)
      EXPECT_TRUE((cur.slices[l].array() <= prev.slices[l].array()).all());
    prev = cur;
  }
}

TEST(RoutingJacobian, PersistenceModel) {
  const Index n = 3, batch = 4;
  nn::Rng rng(9);
  Matrix ctx = randn(n * batch, 2, rng);
  auto fn = [](ad::Tape&, const ad::Var& c) { return ad::slice_cols(c, 1, 1); };
  auto out = routing_jacobian(fn, ctx, Matrix::Ones(n, n), 1);
  ASSERT_EQ(out.size(), static_cast<std::size_t>(batch));
  for (const auto& s : out) {
    EXPECT_EQ(s[0], Matrix::Zero(n, n));
    EXPECT_EQ(s[1], Matrix::Identity(n, n));
  }
  EXPECT_THROW(routing_jacobian(fn, ctx, Matrix::Ones(2, 3), 1), SchemaError);
}

TEST(RoutingJacobian, MaskedEntriesAreExactlyZero) {
  const Index n = 2, batch = 3;
  nn::Rng rng(10);
  Matrix ctx = randn(n * batch, 2, rng);
  // Every station mixes every other station at both lags.
  auto fn = [&](ad::Tape& t, const ad::Var& c) {
    Matrix mix(n * batch, n * batch);
    mix.setZero();
    for (Index k = 0; k < n; ++k)
      for (Index j = 0; j < n; ++j)
        for (Index b = 0; b < batch; ++b) mix(k * batch + b, j * batch + b) = 0.3 + k + j;
    ad::Var m = t.constant(mix);
    return ad::tanh(ad::add(ad::matmul(m, ad::slice_cols(c, 0, 1)), ad::matmul(m, ad::slice_cols(c, 1, 1))));
  };
  Matrix mask = Matrix::Identity(n, n);
  mask(0, 1) = 1.0;  // station 1 -> station 0 allowed; 0 -> 1 (entry (1,0)) absent
  auto out = routing_jacobian(fn, ctx, mask, 1);
  for (const auto& s : out) {
    EXPECT_EQ(s[0](1, 0), 0.0);
    EXPECT_EQ(s[1](1, 0), 0.0);
    EXPECT_NE(s[1](0, 1), 0.0);
  }
}

TEST(Export, JsonAndDot) {
  scm::BinaryDag g;
  g.slices = {Matrix::Zero(2, 2), Matrix::Identity(2, 2)};
  g.slices[1](1, 0) = 1.0;
  auto j = graph_json("routing", {"A", "B"}, g.slices, g, {{"per_step", "max"}});
  EXPECT_EQ(j["edges"].size(), 3u);
  EXPECT_EQ(matrix_from_json(j["binary"][1]), g.slices[1]);
  EXPECT_NE(graph_dot("routing", {"A", "B"}, g).find("\"A\" -> \"B\""), std::string::npos);
}
