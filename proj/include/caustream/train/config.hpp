#pragma once

#include <algorithm>
#include <cstdint>
#include <string>

#include "caustream/core/errors.hpp"

namespace caustream::train {

enum class Ablation { kFull, kNoCausalLosses, kNoForcingVae, kSharedRunoff, kLocalRunoff };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kFull: return "full";
    case Ablation::kNoCausalLosses: return "no_causal_losses";
    case Ablation::kNoForcingVae: return "no_forcing_vae";
    case Ablation::kSharedRunoff: return "shared_runoff";
    case Ablation::kLocalRunoff: return "local_runoff";
  }
  return "full";
}

inline Ablation parse_ablation(const std::string& s) {
  if (s == "full") return Ablation::kFull;
  if (s == "no_causal_losses") return Ablation::kNoCausalLosses;
  if (s == "no_forcing_vae") return Ablation::kNoForcingVae;
  if (s == "shared_runoff") return Ablation::kSharedRunoff;
  if (s == "local_runoff") return Ablation::kLocalRunoff;
  throw ConfigError("unknown ablation '" + s + "'");
}

/// Linear ramp from 0 to 1 between two fractions of the epoch budget.
struct Curriculum {
  double start = 0.2;
  double end = 0.6;

  double multiplier(int epoch, int epochs) const {
    if (end <= start) return static_cast<double>(epoch) >= start * epochs ? 1.0 : 0.0;
    const double e = static_cast<double>(epoch), n = static_cast<double>(epochs);
    return std::clamp((e - start * n) / ((end - start) * n), 0.0, 1.0);
  }

  /// First epoch at which the multiplier is 1.
  int final_epoch(int epochs) const {
    for (int e = 0; e < epochs; ++e)
      if (multiplier(e, epochs) >= 1.0) return e;
    return epochs - 1;
  }
};

struct Multipliers {
  double sparse = 0.0;
  double dag = 0.0;
};

struct TrainingConfig {
  double lambda_elbo = 0.1;
  double lambda_sparse = 0.01;
  double lambda_dag = 1.0;
  Curriculum curriculum;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  int epochs = 40;
  int batch_size = 32;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::kFull;
  double recon_weight = 100.0;     // codec MSE weight inside the ELBO
  double max_condition = 1e8;      // conditioning guard of the forcing J_m
  bool teacher_instantaneous = true;  // lag-0 parents from observed same-time flow during training
  int max_steps_per_epoch = 0;     // 0 = full pass
  int validation_windows = 0;      // 0 = every validation window

  void validate() const {
    if (lambda_elbo < 0.0 || lambda_sparse < 0.0 || lambda_dag < 0.0)
      throw ConfigError("loss weights must be non-negative");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (curriculum.start < 0.0 || curriculum.end > 1.0 || curriculum.end < curriculum.start)
      throw ConfigError("curriculum must satisfy 0 <= start <= end <= 1");
    if (!(recon_weight > 0.0)) throw ConfigError("recon_weight must be positive");
  }

  Multipliers multipliers(int epoch) const {
    if (ablation == Ablation::kNoCausalLosses) return {};
    const double m = curriculum.multiplier(epoch, epochs);
    return {m, m};
  }

  bool uses_codec() const { return ablation != Ablation::kNoForcingVae; }
};

}  // namespace caustream::train
