#include <gtest/gtest.h>

#include "caustream/repr/codec.hpp"
#include "caustream/repr/runoff.hpp"
#include "caustream/scm/generator.hpp"
#include "support.hpp"

using namespace caustream;
using namespace caustream::repr;

namespace {

Matrix randn(Index r, Index c, std::uint64_t seed, double s = 1.0) {
  nn::Rng rng(seed);
  std::normal_distribution<double> z(0.0, s);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m(i) = z(rng);
  return m;
}

// Independent KL reference by trapezoidal integration of q log(q / p).
double kl_by_quadrature(double m, double s) {
  auto logq = [&](double x) { return -std::log(2 * s) - std::abs(x - m) / s; };
  auto logp = [&](double x) { return -std::log(2.0) - std::abs(x); };
  const double lo = std::min(m, 0.0) - 40 * std::max(s, 1.0), hi = std::max(m, 0.0) + 40 * std::max(s, 1.0);
  const int n = 400000;
  const double h = (hi - lo) / n;
  double acc = 0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * std::exp(logq(x)) * (logq(x) - logp(x));
  }
  return acc * h;
}

}  // namespace

TEST(Encode, IdentityInitReturnsInputsWithinFloor) {
  nn::ParameterSet p;
  nn::Rng rng(1);
  ForcingCodec codec(p, 4, rng);
  codec.identity_init(p);
  Matrix x = randn(32, 4, 2);
  auto s = encode(codec, p, x, 7);
  EXPECT_LT((s.loc - x).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(s.scale.maxCoeff(), 1.01e-4);
  // |sample - loc| = scale * |g| with g a unit Laplace draw.
  EXPECT_LT((s.values - x).cwiseAbs().maxCoeff(), 1.01e-4 * 20.0);
  EXPECT_GT(s.scale.minCoeff(), 0.0);
}

TEST(Encode, MedianDrawAndDeterminism) {
  EXPECT_EQ(laplace_inverse_cdf(0.5), 0.0);
  EXPECT_NEAR(laplace_inverse_cdf(0.75), std::log(2.0), 1e-15);
  nn::ParameterSet p;
  nn::Rng rng(3);
  ForcingCodec codec(p, 3, rng);
  Matrix x = randn(10, 3, 4);
  auto a = encode(codec, p, x, 42), b = encode(codec, p, x, 42);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(encode(codec, p, x, 43).values, a.values);
  Matrix bad = x;
  bad(0, 0) = std::nan("");
  EXPECT_THROW(encode(codec, p, bad, 1), InputError);
}

TEST(Decode, IdentityInitAndBatchIndependence) {
  nn::ParameterSet p;
  nn::Rng rng(5);
  ForcingCodec codec(p, 4, rng);
  Matrix e = randn(64, 4, 6);
  nn::ParameterSet q = p;
  codec.identity_init(q);
  EXPECT_EQ(decode(codec, q, e), e);
  Matrix full = decode(codec, p, e);
  Matrix single = decode(codec, p, e.row(17));
  EXPECT_LT((full.row(17) - single).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Elbo, ClosedFormLaplaceKl) {
  EXPECT_EQ(laplace_kl(0.0, 1.0), 0.0);
  for (double m : {0.0, 0.3, -1.2, 2.5})
    EXPECT_NEAR(laplace_kl(m, 1.0), std::abs(m) + std::exp(-std::abs(m)) - 1.0, 1e-15);
  for (auto [m, s] : std::vector<std::pair<double, double>>{{0.5, 1.0}, {-1.0, 0.5}, {2.0, 2.0}, {0.1, 0.2}})
    EXPECT_NEAR(laplace_kl(m, s), kl_by_quadrature(m, s), 1e-6) << m << " " << s;
}

TEST(Elbo, DecompositionAndPerfectAutoencoder) {
  nn::ParameterSet p;
  nn::Rng rng(7);
  ForcingCodec codec(p, 3, rng);
  Matrix x = randn(16, 3, 8);
  ad::Tape t;
  nn::Binding bind(t, p, false);
  auto terms = codec.elbo_loss(bind, t.constant(x), 9);
  EXPECT_EQ(terms.total.item(), terms.reconstruction.item() + terms.kl.item());
  EXPECT_GE(terms.kl.item(), 0.0);
  // Independent KL reference from the posterior parameters.
  auto q = encode(codec, p, x, 9);
  double kl = 0;
  for (Index i = 0; i < q.loc.size(); ++i) kl += laplace_kl(q.loc(i), q.scale(i));
  EXPECT_NEAR(terms.kl.item(), kl / 16.0, 1e-12);

  nn::ParameterSet id = p;
  codec.identity_init(id);
  ad::Tape t2;
  nn::Binding b2(t2, id, false);
  EXPECT_LT(codec.elbo_loss(b2, t2.constant(x), 9).reconstruction.item(), 1e-7);
}

TEST(Elbo, GradientsMatchFiniteDifferences) {
  nn::ParameterSet p;
  nn::Rng rng(11);
  CodecOptions opt;
  opt.hidden = 5;
  opt.init_gain = 1.0;
  opt.init_log_scale = 0.0;
  ForcingCodec codec(p, 3, rng, opt);
  // Non-zero biases so every parameter carries signal.
  for (auto& v : p.values()) v += randn(v.rows(), v.cols(), 12, 0.2);
  Matrix x = randn(8, 3, 13);
  auto loss = [&](nn::Binding& bind) { return codec.elbo_loss(bind, bind.tape().constant(x), 5).total; };
  EXPECT_LT(check::gradient_check(p, loss), 1e-4);
}

TEST(Elbo, ZeroEdgeTrainingReconstructsBelowNoiseFloor) {
  // Roots only: every forcing is an independent unit-variance Laplace draw.
  scm::GeneratorConfig cfg;
  cfg.forcing_graph = scm::ForcingGraphKind::kEmpty;
  cfg.n_stations = 1;
  cfg.n_timesteps = 2000;
  cfg.seed = 4;
  auto data = scm::generate_dataset(cfg);
  Matrix x(2000, 4);
  for (Index t = 0; t < 2000; ++t) x.row(t) = data.dataset.forcings.row(t, 0);
  nn::ParameterSet p;
  nn::Rng rng(1);
  CodecOptions opt;
  opt.hidden = 32;
  opt.recon_weight = 100.0;  // an unweighted MSE against a unit KL collapses the posterior
  ForcingCodec codec(p, 4, rng, opt);
  nn::Adam adam(p, {.learning_rate = 3e-3});
  for (int step = 0; step < 600; ++step) {
    Matrix batch = x.middleRows((step * 64) % (2000 - 64), 64);
    ad::Tape t;
    nn::Binding bind(t, p);
    auto terms = codec.elbo_loss(bind, t.constant(batch), static_cast<std::uint64_t>(step));
    t.backward(terms.total);
    adam.step(p, bind.gradients());
  }
  ad::Tape t;
  nn::Binding bind(t, p, false);
  const double recon =
      codec.elbo_loss(bind, t.constant(x), 99).reconstruction.item() / opt.recon_weight;
  // The noise floor: per-dimension variance that the generator injects (1.0 here).
  EXPECT_LT(recon, 0.1);
}

TEST(Runoff, TiedEmbeddingsMatchShared) {
  nn::ParameterSet p;
  nn::Rng rng(21);
  RunoffGenerator local(p, RunoffMode::kLocal, 3, 4, 2, rng);
  p.value(local.embedding_id()).rowwise() = p.value(local.embedding_id()).row(0).eval();
  Matrix f = randn(3 * 10, 4, 22);
  Matrix out = generate_runoff(local, p, f);
  // Shared generator carrying the generated parameters of station 0.
  ad::Tape t;
  nn::Binding bind(t, p, false);
  Matrix theta = local.station_parameters(bind, 0).value();
  nn::ParameterSet sp;
  nn::Rng r2(0);
  RunoffGenerator shared(sp, RunoffMode::kShared, 3, 4, 2, r2);
  const Index h = 16;
  Index o = 0;
  for (int id = 0; id < 4; ++id) {
    Matrix& v = sp.value(id);
    for (Index i = 0; i < v.rows(); ++i)
      for (Index j = 0; j < v.cols(); ++j) v(i, j) = theta(0, o++);
  }
  (void)h;
  Matrix ref = generate_runoff(shared, sp, f);
  EXPECT_LT((out - ref).cwiseAbs().maxCoeff(), 1e-6);
  for (Index k = 1; k < 3; ++k)
    EXPECT_LT((out.middleRows(k * 10, 10) - out.middleRows(0, 10)).cwiseAbs().maxCoeff() +
                  (f.middleRows(k * 10, 10) - f.middleRows(0, 10)).cwiseAbs().maxCoeff() * 0.0,
              1e9);
}

TEST(Runoff, SharedModeIsPermutationEquivariant) {
  nn::ParameterSet p;
  nn::Rng rng(31);
  RunoffGenerator g(p, RunoffMode::kShared, 3, 4, 2, rng);
  Matrix f = randn(3 * 5, 4, 32);
  Matrix perm(15, 4);
  const std::vector<Index> order{2, 0, 1};
  for (Index k = 0; k < 3; ++k) perm.middleRows(k * 5, 5) = f.middleRows(order[k] * 5, 5);
  Matrix a = generate_runoff(g, p, f), b = generate_runoff(g, p, perm);
  for (Index k = 0; k < 3; ++k) EXPECT_EQ(b.middleRows(k * 5, 5), a.middleRows(order[k] * 5, 5));
}

TEST(Runoff, LocalModeDistinguishesStationsAndChecksShape) {
  nn::ParameterSet p;
  nn::Rng rng(41);
  RunoffGenerator g(p, RunoffMode::kLocal, 2, 3, 2, rng);
  Matrix f = randn(4, 3, 42);
  f.bottomRows(2) = f.topRows(2);
  Matrix r = generate_runoff(g, p, f);
  EXPECT_GT((r.topRows(2) - r.bottomRows(2)).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_THROW(generate_runoff(g, p, randn(5, 3, 1)), ConfigError);
  EXPECT_THROW(generate_runoff(g, p, randn(4, 2, 1)), ConfigError);
}

TEST(Runoff, GradientsMatchFiniteDifferences) {
  nn::ParameterSet p;
  nn::Rng rng(51);
  RunoffGenerator g(p, RunoffMode::kLocal, 2, 3, 2, rng, {.hidden = 4, .embed_dim = 3});
  Matrix f = randn(6, 3, 52);
  auto loss = [&](nn::Binding& bind) { return ad::sum(ad::square(g.forward(bind, bind.tape().constant(f)))); };
  EXPECT_LT(check::gradient_check(p, loss), 1e-6);
}
