// Generate a small synthetic basin, train briefly, then print the recovered
// routing graph and the test NSE.

#include <iostream>

#include "caustream/scm/generator.hpp"
#include "caustream/train/discover.hpp"

using namespace caustream;

int main() {
  scm::GeneratorConfig g;
  g.n_stations = 3;
  g.n_forcings = 3;
  g.n_timesteps = 1500;
  g.forcing_noise = 2.0;
  auto data = scm::generate_dataset(g);

  const auto split = train::chronological_split(g.n_timesteps);
  const auto prep = train::prepare(data.dataset, split);
  train::TrainingConfig cfg;
  cfg.epochs = 10;
  forecast::ForecasterOptions fo;
  fo.mode = forecast::ConditioningMode::kForecastForcings;
  const auto window = forecast::WindowConfig::from_preset(forecast::WindowPreset::kShort);
  auto res = train::train(prep, train::bundle_spec_for(data.dataset, window, cfg, fo), cfg);

  const auto ends = train::window_ends(prep, window, split.train_begin, split.train_end);
  auto routing = train::discover_routing(res.bundle, prep, ends, 0.5);
  std::cout << "routing lag 1 (rows = targets):\n" << routing.graph.binary.slices[1] << "\n";
  std::cout << "true lag 1:\n" << data.truth.routing_dag.slices[1] << "\n";

  const auto test = train::window_ends(prep, window, split.val_end, split.test_end);
  const double nse = train::mean_nse(train::predict_windows(res.bundle, prep, test),
                                     train::window_targets(prep, window, test));
  std::cout << "best epoch " << res.best_epoch << ", test NSE " << nse << "\n";
}
