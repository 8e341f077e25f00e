#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "gec/corpus/corpus.hpp"
#include "gec/model/transformer.hpp"
#include "gec/training/checkpoint.hpp"
#include "gec/training/schedule.hpp"

namespace gec::training {

/// Subword-encodes pairs, drops those with a side longer than `max_subwords`,
/// and attaches word maps and edited-MLE weights.
std::vector<model::Example> encode_corpus(const subword::Vocab& vocab, std::span<const corpus::SentencePair> pairs,
                                          double mle_weight, std::size_t max_subwords = 150, unsigned workers = 1);

/// Example cost against the batch budget: max(source, target) + 1.
std::size_t example_tokens(const model::Example& ex);

/// Length-bucketed batches: indices sorted by length (random order within a
/// length), packed greedily up to `batch_tokens`, batch order shuffled.
std::vector<std::vector<std::size_t>> make_batches(std::span<const model::Example> data, std::size_t batch_tokens,
                                                   Rng& rng);

/// Adam with bias correction.
class Adam {
 public:
  Adam(const model::ModelParams& layout, double beta1, double beta2, double eps);
  void step(model::ModelParams& params, const model::ModelParams& grads, double lr);
  long steps() const { return t_; }

 private:
  model::ModelParams m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

/// Global L2 norm of all gradients.
double grad_norm(const model::ModelParams& grads);

/// Per-token unweighted NLL in eval mode.
double dev_loss(const model::Transformer<float>& model, const model::ModelParams& params,
                std::span<const model::Example> dev, unsigned workers = 1);

struct TrainOptions {
  /// Checkpoints go here as ckpt-<step>.bin; empty disables writing.
  std::filesystem::path out_dir;
  /// Line-delimited JSON records; empty disables.
  std::filesystem::path metrics_path;
  /// Start from these instead of fresh initialization.
  std::optional<model::ModelParams> init;
  std::uint64_t vocab_fingerprint = 0;
  /// Learning rate per step; defaults to lr_schedule(step, cfg).
  std::function<double(long)> lr;
  /// Optional dev F0.5 in [0, 1], run with the dev loss.
  std::function<double(const model::ModelParams&, long)> dev_f05;
  /// Progress lines.
  std::function<void(const std::string&)> log;
};

struct TrainResult {
  model::ModelParams params;
  long steps = 0;
  double last_loss = 0.0;      // per-token weighted loss of the last logged window
  double initial_dev_loss = 0.0;
  double final_dev_loss = 0.0;
  std::vector<std::filesystem::path> checkpoints;
};

/// Adam training on token-budget batches. Gradients are normalized per
/// target token and clipped to cfg.clip_norm. A checkpoint is written every
/// checkpoint_every steps and after the last step. Dev loss is logged at
/// step 0. An empty dev set is an EmptyInputError; a non-finite loss a
/// NumericError naming the step. Single-worker runs are bit-reproducible.
TrainResult train(const model::ModelConfig& mcfg, const TrainConfig& cfg, std::span<const model::Example> train_data,
                  std::span<const model::Example> dev, TrainOptions opts = {});

/// Continues from `base` with the regularizers in `mcfg` (shapes must match)
/// and the finetune schedule unless opts.lr is set. The base checkpoint's
/// vocabulary must match `vocab_fingerprint` (when both are known).
TrainResult finetune(const Checkpoint& base, const model::ModelConfig& mcfg, const TrainConfig& cfg,
                     std::span<const model::Example> train_data, std::span<const model::Example> dev,
                     std::uint64_t vocab_fingerprint, TrainOptions opts = {});

struct ScheduleRun {
  std::string name;
  TrainConfig cfg;
  double dev_loss = 0.0;
  std::optional<double> dev_f05;
};

/// Finetunes `base` once per schedule and reports each run's final dev scores.
std::vector<ScheduleRun> compare_schedules(const Checkpoint& base, const model::ModelConfig& mcfg,
                                           std::vector<ScheduleRun> runs, std::span<const model::Example> train_data,
                                           std::span<const model::Example> dev, std::uint64_t vocab_fingerprint,
                                           const TrainOptions& opts = {});

}  // namespace gec::training
