#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "caustream/scm/generator.hpp"
#include "caustream/train/bundle.hpp"
#include "caustream/train/discover.hpp"
#include "caustream/train/trainer.hpp"
#include "support.hpp"

using namespace caustream;
using namespace caustream::train;
namespace fs = std::filesystem;

namespace {

scm::GeneratedData small_data(std::uint64_t seed = 0, Index t = 400) {
  scm::GeneratorConfig g;
  g.n_stations = 3;
  g.n_forcings = 3;
  g.n_timesteps = t;
  g.seed = seed;
  g.forcing_noise = 2.0;
  return scm::generate_dataset(g);
}

TrainingConfig quick_config() {
  TrainingConfig c;
  c.epochs = 3;
  c.batch_size = 16;
  c.max_steps_per_epoch = 4;
  c.curriculum = {0.0, 0.5};
  return c;
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("caustream_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Curriculum, DefaultScheduleRampsBetweenTwentyAndSixtyPercent) {
  Curriculum c;
  EXPECT_EQ(c.multiplier(0, 40), 0.0);
  EXPECT_EQ(c.multiplier(8, 40), 0.0);
  EXPECT_DOUBLE_EQ(c.multiplier(16, 40), 0.5);
  EXPECT_EQ(c.multiplier(24, 40), 1.0);
  EXPECT_EQ(c.multiplier(39, 40), 1.0);
  EXPECT_EQ(c.final_epoch(40), 24);
  TrainingConfig cfg;
  cfg.ablation = Ablation::kNoCausalLosses;
  EXPECT_EQ(cfg.multipliers(30).sparse, 0.0);
  EXPECT_EQ(cfg.multipliers(30).dag, 0.0);
}

TEST(Objective, WeightedCombination) {
  const LossComponents c{0.5, 0.2, 0.1, 0.3};
  EXPECT_NEAR(combine(c, {0.1, 0.01, 0.01}, {1.0, 1.0}), 0.524, 1e-15);
  EXPECT_DOUBLE_EQ(combine(c, {0.1, 0.01, 0.01}, {0.0, 0.0}), 0.52);
  TrainingConfig cfg;
  cfg.ablation = Ablation::kNoForcingVae;
  EXPECT_EQ(effective_weights(cfg).elbo, 0.0);
}

TEST(Objective, EpochZeroHasNoStructuralContribution) {
  auto g = small_data();
  auto split = chronological_split(g.dataset.times());
  auto prep = prepare(g.dataset, split);
  TrainingConfig cfg;
  auto b = make_bundle(bundle_spec_for(g.dataset, {}, cfg));
  auto ends = window_ends(prep, b.spec.window, split.train_begin, split.train_end);
  auto wb = make_batch(prep, b.spec.window, std::vector<Index>(ends.begin(), ends.begin() + 8));
  ad::Tape tape;
  nn::Binding bind(tape, b.params);
  auto lt = total_loss(bind, b, wb, cfg, 0, 1);
  EXPECT_EQ(lt.parts.sparse, 0.0);
  EXPECT_EQ(lt.parts.dag, 0.0);
  EXPECT_NEAR(lt.total.item(), lt.parts.forecast + cfg.lambda_elbo * lt.parts.elbo, 1e-12);
}

TEST(Objective, TotalLossGradientMatchesFiniteDifferences) {
  scm::GeneratorConfig gc;
  gc.n_stations = 2;
  gc.n_forcings = 2;
  gc.n_timesteps = 120;
  gc.forcing_noise = 2.0;
  auto g = scm::generate_dataset(gc);
  auto split = chronological_split(g.dataset.times());
  auto prep = prepare(g.dataset, split);
  TrainingConfig cfg;
  cfg.recon_weight = 1.0;
  forecast::ForecasterOptions fo;
  fo.channels = 3;
  fo.hidden = 4;
  fo.embed_dim = 2;
  fo.out_gain = 1.0;
  auto spec = bundle_spec_for(g.dataset, forecast::WindowConfig::custom(3, 2), cfg, fo);
  spec.codec.hidden = 4;
  spec.runoff.hidden = 3;
  spec.runoff.embed_dim = 2;
  auto b = make_bundle(spec);
  for (Index l = 0; l <= spec.max_lag; ++l) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(l) + 1);
    std::normal_distribution<double> z(0.0, 1.0);
    for (Index i = 0; i < b.params.value(b.forecaster.theta_id(l)).size(); ++i)
      b.params.value(b.forecaster.theta_id(l))(i) = z(rng);
  }
  auto ends = window_ends(prep, spec.window, split.train_begin, split.train_end);
  auto wb = make_batch(prep, spec.window, std::vector<Index>(ends.begin(), ends.begin() + 3));
  const int epoch = cfg.epochs - 1;  // all penalties active
  auto loss = [&](nn::Binding& bind) { return total_loss(bind, b, wb, cfg, epoch, 77).total; };
  {
    ad::Tape tape;
    nn::Binding bind(tape, b.params);
    auto lt = total_loss(bind, b, wb, cfg, epoch, 77);
    ASSERT_GT(lt.parts.sparse, 0.0);
    ASSERT_GT(lt.parts.elbo, 0.0);
  }
  EXPECT_LT(check::gradient_check(b.params, loss, 1e-6), 1e-4);
}

TEST(Clip, GlobalNormScalesEveryTensor) {
  std::vector<Matrix> g = {Matrix::Constant(1, 1, 3.0), Matrix::Constant(1, 1, 4.0)};
  EXPECT_DOUBLE_EQ(nn::clip_global_norm(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g[1](0, 0), 0.8);
  EXPECT_DOUBLE_EQ(nn::clip_global_norm(g, 2.0), 1.0);
  EXPECT_DOUBLE_EQ(g[1](0, 0), 0.8);
}

TEST(Data, ChronologicalSplitAndWindows) {
  auto s = chronological_split(100);
  EXPECT_EQ(s.train_end, 70);
  EXPECT_EQ(s.val_end, 85);
  EXPECT_EQ(s.test_end, 100);
  auto g = small_data(1, 100);
  g.dataset.usable.assign(100, true);
  g.dataset.usable[30] = false;
  auto prep = prepare(g.dataset, s);
  const forecast::WindowConfig w{7, 3, forecast::WindowPreset::kMedium};
  auto ends = window_ends(prep, w, 0, 70);
  ASSERT_FALSE(ends.empty());
  EXPECT_EQ(ends.front(), 7);  // warm-up of L = 1 step, then 7 history steps
  EXPECT_EQ(ends.back(), 66);
  for (Index t : ends) EXPECT_FALSE(t - 6 <= 30 && 30 <= t + 3);
}

TEST(Data, BatchLayout) {
  auto g = small_data(2, 100);
  auto s = chronological_split(100);
  auto prep = prepare(g.dataset, s);
  const forecast::WindowConfig w{7, 2, forecast::WindowPreset::kCustom};
  std::vector<Index> ends = {10, 20, 33};
  auto wb = make_batch(prep, w, ends);
  const Index n = 3, b = 3, p = 9;
  EXPECT_EQ(wb.positions, p);
  for (Index k = 0; k < n; ++k)
    for (Index pos = 0; pos < p; ++pos)
      for (Index i = 0; i < b; ++i) {
        const Index t = ends[static_cast<std::size_t>(i)] - 6 + pos;
        EXPECT_EQ(Matrix(wb.forcing_rows.row(k * p * b + pos * b + i)), prep.forcings.row(t, k));
        if (pos < 7) {
          EXPECT_EQ(wb.q[static_cast<std::size_t>(pos)](k * b + i, 0), prep.flow(t, k));
        } else {
          EXPECT_EQ(wb.targets[static_cast<std::size_t>(pos - 7)](k * b + i, 0), prep.flow(t, k));
        }
      }
}

TEST(Data, StandardizationUsesTrainingRowsOnly) {
  auto g = small_data(3, 300);
  auto s = chronological_split(300);
  auto a = prepare(g.dataset, s).stats;
  // Direct recomputation over training rows.
  const Index n = 3, d = 3;
  for (Index k = 0; k < n; ++k) {
    double m = 0, v = 0;
    for (Index t = 0; t < s.train_end; ++t) m += g.dataset.streamflow(t, k);
    m /= static_cast<double>(s.train_end);
    for (Index t = 0; t < s.train_end; ++t) v += std::pow(g.dataset.streamflow(t, k) - m, 2);
    EXPECT_NEAR(a.flow_mean(k), m, 1e-12 * std::abs(m));
    EXPECT_NEAR(a.flow_std(k), std::sqrt(v / static_cast<double>(s.train_end)), 1e-10);
  }
  for (Index i = 0; i < d; ++i) {
    double m = 0;
    for (Index t = 0; t < s.train_end; ++t)
      for (Index k = 0; k < n; ++k) m += g.dataset.forcings(t, k, i);
    EXPECT_NEAR(a.forcing_mean(i), m / static_cast<double>(s.train_end * n), 1e-12);
  }
  // Validation and test rows have no influence.
  auto changed = g.dataset;
  for (Index t = s.train_end; t < 300; ++t)
    for (Index k = 0; k < n; ++k) {
      changed.streamflow(t, k) *= 100.0;
      for (Index i = 0; i < d; ++i) changed.forcings(t, k, i) += 50.0;
    }
  EXPECT_TRUE(prepare(changed, s).stats == a);
  EXPECT_TRUE(fit_standardization(g.dataset, s.train_begin, s.train_end) == a);
}

TEST(Training, DeterministicLogClipAndBookkeeping) {
  auto g = small_data(4);
  auto split = chronological_split(g.dataset.times());
  auto prep = prepare(g.dataset, split);
  auto cfg = quick_config();
  cfg.clip_norm = 0.05;  // clip on most steps
  auto spec = bundle_spec_for(g.dataset, {}, cfg);
  auto a = train::train(prep, spec, cfg);
  auto b = train::train(prep, spec, cfg);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].dump(), b.log[i].dump());
  EXPECT_EQ(params_blob(a.bundle.params), params_blob(b.bundle.params));
  int clipped = 0;
  for (const auto& r : a.log) {
    const LossComponents c{r["forecast"].get<double>(), r["elbo"].get<double>(), r["sparse"].get<double>(),
                           r["dag"].get<double>()};
    const auto& rw = r["weights"];
    const Weights w{rw["elbo"].get<double>(), rw["sparse"].get<double>(), rw["dag"].get<double>()};
    const Multipliers m{r["multiplier_sparse"].get<double>(), r["multiplier_dag"].get<double>()};
    EXPECT_NEAR(combine(c, w, m), r["total"].get<double>(), 1e-9);
    EXPECT_LE(r["grad_norm_clipped"].get<double>(), cfg.clip_norm + 1e-6);
    clipped += r["grad_norm"].get<double>() > cfg.clip_norm;
  }
  EXPECT_GT(clipped, 0);
  EXPECT_GE(a.best_epoch, cfg.curriculum.final_epoch(cfg.epochs));
}

TEST(Training, DivergenceAbortsAndKeepsLastCheckpoint) {
  auto g = small_data(5);
  auto split = chronological_split(g.dataset.times());
  auto prep = prepare(g.dataset, split);
  auto cfg = quick_config();
  const auto dir = temp_dir("diverge");
  TrainOptions opt;
  opt.checkpoint_dir = dir;
  auto spec = bundle_spec_for(g.dataset, {}, cfg);
  train::train(prep, spec, cfg, opt);
  const std::string id = checkpoint_id(dir);
  auto bad = prep;
  for (Index t = 0; t < split.train_end; ++t) bad.flow(t, 1) = std::nan("");
  EXPECT_THROW(train::train(bad, spec, cfg, opt), TrainingError);
  EXPECT_EQ(checkpoint_id(dir), id);
  EXPECT_NO_THROW(restore(dir, &spec));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto g = small_data(6);
  auto split = chronological_split(g.dataset.times());
  auto prep = prepare(g.dataset, split);
  auto cfg = quick_config();
  auto spec = bundle_spec_for(g.dataset, forecast::WindowConfig::from_preset(forecast::WindowPreset::kMedium), cfg);
  auto res = train::train(prep, spec, cfg);
  std::vector<Matrix> gate(2, Matrix::Ones(3, 3));
  gate[1](2, 0) = 0.0;
  res.bundle.forecaster.set_gate(gate);
  const auto dir = temp_dir("roundtrip");
  checkpoint(res.bundle, dir);
  auto back = restore(dir, &spec);
  EXPECT_TRUE(back.stats == res.bundle.stats);
  EXPECT_EQ(back.forecaster.gate(), gate);
  EXPECT_EQ(params_blob(back.params), params_blob(res.bundle.params));
  auto ends = window_ends(prep, spec.window, split.val_end, split.test_end);
  auto p1 = predict_windows(res.bundle, prep, ends);
  auto p2 = predict_windows(back, prep, ends);
  for (std::size_t h = 0; h < p1.size(); ++h) EXPECT_EQ(p1[h], p2[h]);
  const Matrix rows = prep.forcings.row(50, 0).replicate(3, 1);
  EXPECT_EQ(repr::generate_runoff(back.runoff, back.params, rows),
            repr::generate_runoff(res.bundle.runoff, res.bundle.params, rows));
}

TEST(Checkpoint, IntegrityFailures) {
  auto g = small_data(7);
  TrainingConfig cfg;
  auto spec = bundle_spec_for(g.dataset, {}, cfg);
  auto b = make_bundle(spec);
  b.stats = prepare(g.dataset, chronological_split(g.dataset.times())).stats;
  const auto dir = temp_dir("integrity");
  checkpoint(b, dir);
  EXPECT_NO_THROW(restore(dir, &spec));

  auto other = spec;
  other.n_stations = 4;
  other.river_mask = Matrix::Identity(4, 4);
  EXPECT_THROW(restore(dir, &other), IntegrityError);

  std::string blob = io::read_file(dir / "params.bin");
  blob[blob.size() / 2] ^= 0x1;
  io::write_atomic(dir / "params.bin", blob);
  EXPECT_THROW(restore(dir), IntegrityError);

  nn::ParameterSet p = b.params;
  const std::string good = params_blob(b.params);
  EXPECT_THROW(load_params_blob(p, good.substr(0, good.size() - 3)), IntegrityError);
  nn::ParameterSet fewer;
  fewer.add("x", Matrix::Zero(1, 1));
  EXPECT_THROW(load_params_blob(fewer, good), IntegrityError);
}

TEST(Discovery, RoutingStaysInsideMask) {
  auto g = small_data(8, 600);
  auto split = chronological_split(g.dataset.times());
  auto prep = prepare(g.dataset, split);
  auto cfg = quick_config();
  auto spec = bundle_spec_for(g.dataset, {}, cfg);
  auto res = train::train(prep, spec, cfg);
  auto ends = window_ends(prep, spec.window, split.train_begin, split.train_end);
  auto rd = discover_routing(res.bundle, prep, ends, 0.5);
  ASSERT_EQ(rd.graph.binary.slices.size(), 2u);
  Matrix off = g.dataset.river_mask;
  for (const auto& sl : rd.graph.binary.slices)
    for (Index k = 0; k < 3; ++k)
      for (Index j = 0; j < 3; ++j)
        if (off(k, j) == 0.0) {
          EXPECT_EQ(sl(k, j), 0.0);
        }
  auto fd = discover_forcing(res.bundle, prep, split.train_begin, split.train_end, 0.5);
  ASSERT_EQ(fd.per_station.size(), 3u);
  for (const auto& s : fd.per_station) EXPECT_EQ(s.binary.slices[0].diagonal().sum(), 0.0);
}
