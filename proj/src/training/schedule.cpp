#include "gec/training/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "gec/common/errors.hpp"

namespace gec::training {

std::string to_string(Schedule s) { return s == Schedule::Rsqrt ? "rsqrt" : "linear-constant"; }

Schedule parse_schedule(const std::string& s) {
  if (s == "rsqrt") return Schedule::Rsqrt;
  if (s == "linear-constant") return Schedule::LinearConstant;
  throw ConfigError("unknown schedule '" + s + "' (rsqrt, linear-constant)");
}

void TrainConfig::validate() const {
  if (!(peak_lr > 0)) throw ConfigError("peak_lr must be > 0");
  if (warmup_steps < 1) throw ConfigError("warmup_steps must be >= 1");
  if (batch_tokens < max_subwords + 1) throw ConfigError("batch_tokens must cover the longest sentence");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be >= 1");
  if (dev_every < 0 || log_every < 1) throw ConfigError("dev_every must be >= 0 and log_every >= 1");
  if (max_seconds < 0 || clip_norm < 0) throw ConfigError("max_seconds and clip_norm must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_eps > 0)) throw ConfigError("bad Adam constants");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"peak_lr", c.peak_lr},           {"warmup_steps", c.warmup_steps},
       {"schedule", to_string(c.schedule)}, {"batch_tokens", c.batch_tokens},
       {"max_steps", c.max_steps},       {"checkpoint_every", c.checkpoint_every},
       {"dev_every", c.dev_every},       {"log_every", c.log_every},
       {"max_seconds", c.max_seconds},   {"clip_norm", c.clip_norm},
       {"beta1", c.beta1},               {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},         {"max_subwords", c.max_subwords},
       {"seed", c.seed},                 {"workers", c.workers}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.schedule = parse_schedule(j.value("schedule", to_string(d.schedule)));
  c.batch_tokens = j.value("batch_tokens", d.batch_tokens);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.dev_every = j.value("dev_every", d.dev_every);
  c.log_every = j.value("log_every", d.log_every);
  c.max_seconds = j.value("max_seconds", d.max_seconds);
  c.clip_norm = j.value("clip_norm", d.clip_norm);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.max_subwords = j.value("max_subwords", d.max_subwords);
  c.seed = j.value("seed", d.seed);
  c.workers = j.value("workers", d.workers);
}

double lr_schedule(long step, const TrainConfig& cfg) {
  if (step < 1) throw RangeError("lr_schedule: step must be >= 1");
  const double s = static_cast<double>(step), w = static_cast<double>(cfg.warmup_steps);
  const double warm = s / w;
  if (cfg.schedule == Schedule::Rsqrt) return cfg.peak_lr * std::min(warm, std::sqrt(w / s));
  return cfg.peak_lr * std::min(warm, 1.0);
}

double finetune_schedule(long step, double peak, long warmup) {
  TrainConfig c;
  c.peak_lr = peak;
  c.warmup_steps = warmup;
  c.schedule = Schedule::LinearConstant;
  return lr_schedule(step, c);
}

TrainConfig finetune_defaults() {
  TrainConfig c;
  c.peak_lr = 3e-4;
  c.warmup_steps = 20000;
  c.schedule = Schedule::LinearConstant;
  return c;
}

}  // namespace gec::training
