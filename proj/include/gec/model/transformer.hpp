#pragma once

#include <span>
#include <vector>

#include "gec/common/rng.hpp"
#include "gec/model/config.hpp"
#include "gec/model/objective.hpp"
#include "gec/model/params.hpp"
#include "gec/subword/vocab.hpp"

namespace gec::model {

/// One training/evaluation pair in subword ids.
///
/// The encoder reads `source` + EOS; the decoder reads BOS + `target` and
/// predicts `target` + EOS. Word maps and weights are optional: an empty
/// word map makes every position its own word, empty weights mean λ = 1.
struct Example {
  subword::Ids source;
  subword::Ids target;
  std::vector<int> source_words;  // size source.size() + 1
  std::vector<int> target_words;  // size target.size() + 1
  std::vector<double> weights;    // size target.size() + 1
};

/// Builds an example with word maps from `vocab` and edited-MLE weights.
Example make_example(const subword::Vocab& vocab, subword::Ids source, subword::Ids target, double mle_weight);

/// Pre-norm encoder-decoder transformer with hand-written backward pass.
///
/// Token embeddings are shared by encoder and decoder, scaled by sqrt(d_model)
/// and zeroed per word (word dropout) before sinusoidal positions are added.
/// The output projection is a separate d_model x vocab matrix.
template <typename T>
class Transformer {
 public:
  explicit Transformer(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }

  struct Result {
    double loss = 0.0;        // Σ over the batch of -Σ λ_t log p
    double nll = 0.0;         // unweighted -Σ log p
    std::size_t tokens = 0;   // decoder output positions
  };

  /// Forward pass over a batch; with `grads` also the backward pass, adding
  /// grad_scale * d(loss)/d(param) into `grads`. Train mode needs `rng`.
  /// When `log_probs` is given it receives one (target+1) x vocab matrix per
  /// example.
  Result run(const ParamSet<T>& params, std::span<const Example> batch, Mode mode, Rng* rng, ParamSet<T>* grads,
             T grad_scale = T(1), std::vector<Matrix<T>>* log_probs = nullptr) const;

  /// Per-position log-distributions for one pair.
  Matrix<T> log_probs(const ParamSet<T>& params, const Example& example, Mode mode, Rng* rng) const;

  struct EncoderState {
    Matrix<T> memory;
    std::vector<Matrix<T>> cross_k;
    std::vector<Matrix<T>> cross_v;
  };

  struct DecoderState {
    std::vector<Matrix<T>> self_k;
    std::vector<Matrix<T>> self_v;
    int length = 0;
  };

  EncoderState encode(const ParamSet<T>& params, std::span<const subword::Id> source) const;
  DecoderState initial_state() const;

  /// Feeds one token per state (BOS first) and returns the next-token
  /// log-distributions, one row per state. Appends to each state's cache.
  Matrix<T> decode_step(const ParamSet<T>& params, const EncoderState& enc, std::span<DecoderState* const> states,
                        std::span<const subword::Id> tokens) const;

 private:
  struct LnIdx {
    std::size_t g, b;
  };
  struct AttnIdx {
    std::size_t q, k, v, o;
  };
  struct FfnIdx {
    std::size_t w1, b1, w2, b2;
  };
  struct EncIdx {
    LnIdx ln1;
    AttnIdx self;
    LnIdx ln2;
    FfnIdx ffn;
  };
  struct DecIdx {
    LnIdx ln1;
    AttnIdx self;
    LnIdx ln2;
    AttnIdx cross;
    LnIdx ln3;
    FfnIdx ffn;
  };

  void check_ids(std::span<const subword::Id> ids) const;
  T position_value(Eigen::Index pos, Eigen::Index dim) const;

  ModelConfig cfg_;
  std::size_t embedding_ = 0;
  std::size_t output_ = 0;
  std::vector<EncIdx> enc_;
  std::vector<DecIdx> dec_;
  LnIdx enc_ln_{};
  LnIdx dec_ln_{};
  Matrix<T> positions_;  // cached sinusoid rows
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace gec::model
