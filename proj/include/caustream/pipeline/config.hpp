#pragma once

// Pipeline configuration and its key-value file format:
//
//   # comment
//   dataset_path = data/basin      (empty: generate a synthetic dataset)
//   output_dir = runs/basin
//   window = short                 (short | medium | long | custom)
//   epochs = 40
//
// Unknown keys are an error. See known_keys() for the full list.

#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "caustream/core/io.hpp"
#include "caustream/forecast/forecaster.hpp"
#include "caustream/scm/generator.hpp"
#include "caustream/train/config.hpp"
#include "json.hpp"

namespace caustream::pipeline {

struct PipelineConfig {
  std::filesystem::path dataset_path;  // empty: synthetic
  std::filesystem::path output_dir = "caustream_run";
  forecast::WindowConfig window;
  train::TrainingConfig training;
  forecast::ForecasterOptions forecaster{.mode = forecast::ConditioningMode::kForecastForcings};
  scm::GeneratorConfig generator{.forcing_noise = 2.0};
  double tau = 0.5;
  double train_frac = 0.70, val_frac = 0.15;
  Index max_interpolated_gap = 3;

  void validate() const {
    window.validate();
    training.validate();
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
    if (!(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0))
      throw ConfigError("split fractions must be positive and leave a test split");
    if (max_interpolated_gap < 0) throw ConfigError("max_interpolated_gap must be >= 0");
  }
};

inline const std::vector<std::string>& known_keys() {
  static const std::vector<std::string> keys = {
      "dataset_path", "output_dir", "window", "history_len", "horizon", "tau", "seed", "epochs", "batch_size",
      "learning_rate", "clip_norm", "lambda_elbo", "lambda_sparse", "lambda_dag", "curriculum_start",
      "curriculum_end", "ablation", "recon_weight", "max_condition", "teacher_instantaneous",
      "max_steps_per_epoch", "validation_windows", "conditioning", "channels", "hidden", "train_frac",
      "val_frac", "max_interpolated_gap", "n_stations", "n_forcings", "runoff_dim", "max_lag", "n_timesteps",
      "network", "forcing_graph", "heterogeneous_runoff", "relative_noise", "forcing_noise"};
  return keys;
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + " expects a number, got '" + v + "'");
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long x = std::stol(v, &used);
    if (used == v.size()) return x;
  } catch (const std::logic_error&) {
  }
  throw ConfigError(key + " expects an integer, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + " expects true or false, got '" + v + "'");
}

}  // namespace detail

/// Applies one key. history_len / horizon switch the window to custom.
inline void apply_key(PipelineConfig& c, const std::string& key, const std::string& value) {
  using detail::to_bool, detail::to_double, detail::to_long;
  auto& t = c.training;
  auto& g = c.generator;
  try {
    if (key == "dataset_path") c.dataset_path = value;
    else if (key == "output_dir") c.output_dir = value;
    else if (key == "window") {
      const auto p = forecast::parse_preset(value);
      if (p != forecast::WindowPreset::kCustom) c.window = forecast::WindowConfig::from_preset(p);
      else c.window.preset = p;
    } else if (key == "history_len") c.window = forecast::WindowConfig::custom(to_long(key, value), c.window.horizon);
    else if (key == "horizon") c.window = forecast::WindowConfig::custom(c.window.history_len, to_long(key, value));
    else if (key == "tau") c.tau = to_double(key, value);
    else if (key == "seed") {
      t.seed = static_cast<std::uint64_t>(to_long(key, value));
      g.seed = t.seed;
    } else if (key == "epochs") t.epochs = static_cast<int>(to_long(key, value));
    else if (key == "batch_size") t.batch_size = static_cast<int>(to_long(key, value));
    else if (key == "learning_rate") t.learning_rate = to_double(key, value);
    else if (key == "clip_norm") t.clip_norm = to_double(key, value);
    else if (key == "lambda_elbo") t.lambda_elbo = to_double(key, value);
    else if (key == "lambda_sparse") t.lambda_sparse = to_double(key, value);
    else if (key == "lambda_dag") t.lambda_dag = to_double(key, value);
    else if (key == "curriculum_start") t.curriculum.start = to_double(key, value);
    else if (key == "curriculum_end") t.curriculum.end = to_double(key, value);
    else if (key == "ablation") t.ablation = train::parse_ablation(value);
    else if (key == "recon_weight") t.recon_weight = to_double(key, value);
    else if (key == "max_condition") t.max_condition = to_double(key, value);
    else if (key == "teacher_instantaneous") t.teacher_instantaneous = to_bool(key, value);
    else if (key == "max_steps_per_epoch") t.max_steps_per_epoch = static_cast<int>(to_long(key, value));
    else if (key == "validation_windows") t.validation_windows = static_cast<int>(to_long(key, value));
    else if (key == "conditioning") c.forecaster.mode = forecast::parse_conditioning(value);
    else if (key == "channels") c.forecaster.channels = to_long(key, value);
    else if (key == "hidden") c.forecaster.hidden = to_long(key, value);
    else if (key == "train_frac") c.train_frac = to_double(key, value);
    else if (key == "val_frac") c.val_frac = to_double(key, value);
    else if (key == "max_interpolated_gap") c.max_interpolated_gap = to_long(key, value);
    else if (key == "n_stations") g.n_stations = to_long(key, value);
    else if (key == "n_forcings") g.n_forcings = to_long(key, value);
    else if (key == "runoff_dim") g.runoff_dim = to_long(key, value);
    else if (key == "max_lag") g.max_lag = to_long(key, value);
    else if (key == "n_timesteps") g.n_timesteps = to_long(key, value);
    else if (key == "network") {
      if (value == "line") g.network = scm::NetworkKind::kLine;
      else if (value == "tree") g.network = scm::NetworkKind::kTree;
      else throw ConfigError("network must be line or tree");
    } else if (key == "forcing_graph") {
      if (value == "chain") g.forcing_graph = scm::ForcingGraphKind::kChain;
      else if (value == "random") g.forcing_graph = scm::ForcingGraphKind::kRandom;
      else if (value == "empty") g.forcing_graph = scm::ForcingGraphKind::kEmpty;
      else throw ConfigError("forcing_graph must be chain, random or empty");
    } else if (key == "heterogeneous_runoff") g.heterogeneous_runoff = to_bool(key, value);
    else if (key == "relative_noise") g.relative_noise = to_double(key, value);
    else if (key == "forcing_noise") g.forcing_noise = to_double(key, value);
    else throw ConfigError("unknown key '" + key + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

inline void apply_config_text(PipelineConfig& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  int no = 0;
  while (std::getline(in, line)) {
    ++no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(no) + ": expected key = value");
    apply_key(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  PipelineConfig c;
  apply_config_text(c, io::read_file(path), path.string());
  return c;
}

inline nlohmann::json config_json(const PipelineConfig& c) {
  const auto& t = c.training;
  return {{"dataset_path", c.dataset_path.string()},
          {"window", {{"preset", forecast::to_string(c.window.preset)},
                      {"history_len", c.window.history_len},
                      {"horizon", c.window.horizon}}},
          {"tau", c.tau},
          {"seed", t.seed},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"clip_norm", t.clip_norm},
          {"lambda_elbo", t.lambda_elbo},
          {"lambda_sparse", t.lambda_sparse},
          {"lambda_dag", t.lambda_dag},
          {"curriculum_start", t.curriculum.start},
          {"curriculum_end", t.curriculum.end},
          {"ablation", train::to_string(t.ablation)},
          {"recon_weight", t.recon_weight},
          {"max_condition", t.max_condition},
          {"conditioning", forecast::to_string(c.forecaster.mode)},
          {"train_frac", c.train_frac},
          {"val_frac", c.val_frac},
          {"max_interpolated_gap", c.max_interpolated_gap}};
}

}  // namespace caustream::pipeline
