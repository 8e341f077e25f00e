#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "gec/model/transformer.hpp"

namespace gec::decoding {

struct BeamConfig {
  int beam_size = 4;
  double alpha = 0.6;
  /// Output tokens including EOS; 0 picks a bound from the source length.
  int max_output_len = 0;

  void validate() const;
};

/// ((5 + L) / 6)^alpha.
double length_penalty(std::size_t length, double alpha);

/// -raw_logprob / length_penalty(length). Used both for ranking and for the
/// threshold test of iterative decoding.
double hypothesis_cost(double raw_logprob, std::size_t length, double alpha);

struct Hypothesis {
  std::vector<int> tokens;  // without EOS
  double raw_logprob = 0.0;
  double cost = 0.0;
  bool finished = true;     // false only for the best-unfinished fallback
};

/// Incremental next-token scorer. `start` opens a single empty prefix;
/// `extend` replaces the current prefixes with prefix[parents[i]] + tokens[i].
/// Both return one row of log-probabilities per prefix.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual int vocab_size() const = 0;
  virtual int eos() const = 0;
  virtual Eigen::MatrixXd start() = 0;
  virtual Eigen::MatrixXd extend(std::span<const int> parents, std::span<const int> tokens) = 0;
};

/// Up to beam_size finished hypotheses, ascending cost, ties by token ids.
/// Each step keeps the beam_size best extensions by raw log-probability
/// (ties by token ids); EOS extensions finish. A prefix reaching
/// `max_len` tokens without EOS is dropped. If nothing finishes, the best
/// unfinished prefix is returned with finished = false.
std::vector<Hypothesis> beam_search(StepModel& model, const BeamConfig& cfg, int max_len);

/// Argmax decoding, lowest id on ties.
Hypothesis greedy(StepModel& model, double alpha, int max_len);

/// StepModel over a trained transformer for one source sentence. PAD, BOS
/// and the fill marker are never produced.
template <typename T>
class TransformerStepper final : public StepModel {
 public:
  TransformerStepper(const model::Transformer<T>& model, const model::ParamSet<T>& params,
                     std::span<const subword::Id> source);

  int vocab_size() const override { return model_.config().vocab_size; }
  int eos() const override { return subword::kEos; }
  Eigen::MatrixXd start() override;
  Eigen::MatrixXd extend(std::span<const int> parents, std::span<const int> tokens) override;

 private:
  Eigen::MatrixXd step(std::span<const subword::Id> tokens);

  const model::Transformer<T>& model_;
  const model::ParamSet<T>& params_;
  typename model::Transformer<T>::EncoderState enc_;
  std::vector<typename model::Transformer<T>::DecoderState> states_;
};

extern template class TransformerStepper<float>;
extern template class TransformerStepper<double>;

}  // namespace gec::decoding
