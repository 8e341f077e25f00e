#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

namespace gec::training {

enum class Schedule { Rsqrt, LinearConstant };

std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

struct TrainConfig {
  double peak_lr = 3e-4;
  long warmup_steps = 8000;
  Schedule schedule = Schedule::Rsqrt;
  /// Σ max(source, target) + 1 per batch, before padding.
  std::size_t batch_tokens = 2000;
  long max_steps = 10000;
  long checkpoint_every = 1000;
  /// Dev loss (and the dev F0.5 hook, if any) every this many steps; 0 means at checkpoints.
  long dev_every = 0;
  long log_every = 100;
  /// Stop early after this much wall time; 0 disables. Breaks bit-reproducibility.
  double max_seconds = 0.0;
  /// Global gradient norm cap; 0 disables.
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  std::size_t max_subwords = 150;
  std::uint64_t seed = 1;
  unsigned workers = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// rsqrt: peak * min(step/warmup, sqrt(warmup/step));
/// linear-constant: peak * min(step/warmup, 1). Step counts from 1.
double lr_schedule(long step, const TrainConfig& cfg);

/// Linear warmup to `peak` over `warmup` steps, then constant.
double finetune_schedule(long step, double peak = 3e-4, long warmup = 20000);

/// TrainConfig defaults for finetuning: linear-constant, 3e-4, 20k warmup.
TrainConfig finetune_defaults();

}  // namespace gec::training
