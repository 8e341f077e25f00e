#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"
#include "gec/corpus/alignment.hpp"
#include "gec/model/params.hpp"
#include "gec/subword/vocab.hpp"

namespace gec::model {

enum class Mode { Train, Eval };

/// Per-target-position loss weights: 1 for copied subwords, Λ for
/// substituted or inserted ones.
struct LossWeights {
  std::vector<double> lambda;
};

/// Weights from an alignment between source and target subwords. Deleted
/// source subwords carry no weight. Throws RangeError when the alignment does
/// not cover exactly `target_len` target positions.
LossWeights target_weights(const corpus::Alignment& alignment, std::size_t target_len, double mle_weight);

/// Aligns the EOS-terminated source and target ids and derives the weights
/// for every decoder output position (target subwords plus EOS).
LossWeights target_weights(std::span<const subword::Id> source, std::span<const subword::Id> target,
                           double mle_weight);

struct LossValue {
  double sum = 0.0;        // -Σ λ_t log p(y_t)
  double per_token = 0.0;  // sum / number of target positions
  std::size_t tokens = 0;
};

/// Weighted negative log-likelihood of `targets` under per-row
/// log-distributions. Throws NumericError on a non-finite log-probability.
template <typename T>
LossValue edited_mle_loss(const Matrix<T>& log_probs, std::span<const subword::Id> targets,
                          const LossWeights& weights) {
  if (static_cast<std::size_t>(log_probs.rows()) != targets.size() || weights.lambda.size() != targets.size())
    throw RangeError("edited_mle_loss: log-prob rows, targets and weights must have equal length");
  LossValue v;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto id = targets[t];
    if (id < 0 || id >= log_probs.cols()) throw RangeError("edited_mle_loss: target id out of range");
    const double lp = static_cast<double>(log_probs(static_cast<Eigen::Index>(t), id));
    if (!std::isfinite(lp)) throw NumericError("edited_mle_loss: non-finite log-probability at position " + std::to_string(t));
    v.sum -= weights.lambda[t] * lp;
  }
  v.tokens = targets.size();
  v.per_token = v.tokens ? v.sum / static_cast<double>(v.tokens) : 0.0;
  return v;
}

/// Keep flag per position: every word is dropped independently with
/// probability p, and all positions of a dropped word are dropped together.
/// Eval mode and p == 0 keep everything and draw nothing from `rng`.
std::vector<std::uint8_t> word_keep_mask(std::span<const int> word_index, double p, Rng& rng, Mode mode);

/// Zeroes the rows of dropped words. Surviving rows are not rescaled.
template <typename T>
Matrix<T> word_dropout(const Matrix<T>& embedded, std::span<const int> word_index, double p, Rng& rng, Mode mode) {
  if (static_cast<std::size_t>(embedded.rows()) != word_index.size())
    throw RangeError("word_dropout: one word index per row required");
  const auto keep = word_keep_mask(word_index, p, rng, mode);
  Matrix<T> out = embedded;
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    if (!keep[static_cast<std::size_t>(r)]) out.row(r).setZero();
  return out;
}

}  // namespace gec::model
