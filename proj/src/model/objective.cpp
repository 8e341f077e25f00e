#include "gec/model/objective.hpp"

namespace gec::model {

LossWeights target_weights(const corpus::Alignment& alignment, std::size_t target_len, double mle_weight) {
  LossWeights w;
  w.lambda.assign(target_len, -1.0);
  std::size_t covered = 0;
  for (const auto& e : alignment.edges) {
    if (e.kind == corpus::EdgeKind::Del) continue;
    if (e.tgt < 0 || static_cast<std::size_t>(e.tgt) >= target_len || w.lambda[static_cast<std::size_t>(e.tgt)] >= 0.0)
      throw RangeError("target_weights: alignment does not match the target length");
    w.lambda[static_cast<std::size_t>(e.tgt)] = e.kind == corpus::EdgeKind::Match ? 1.0 : mle_weight;
    ++covered;
  }
  if (covered != target_len) throw RangeError("target_weights: alignment does not cover every target position");
  return w;
}

LossWeights target_weights(std::span<const subword::Id> source, std::span<const subword::Id> target,
                           double mle_weight) {
  std::vector<subword::Id> src(source.begin(), source.end());
  std::vector<subword::Id> tgt(target.begin(), target.end());
  src.push_back(subword::kEos);
  tgt.push_back(subword::kEos);
  return target_weights(corpus::align(src, tgt), tgt.size(), mle_weight);
}

std::vector<std::uint8_t> word_keep_mask(std::span<const int> word_index, double p, Rng& rng, Mode mode) {
  std::vector<std::uint8_t> keep(word_index.size(), 1);
  if (mode == Mode::Eval || p <= 0.0) return keep;
  int current = -1;
  bool keep_word = true;
  for (std::size_t i = 0; i < word_index.size(); ++i) {
    if (i == 0 || word_index[i] != current) {
      current = word_index[i];
      keep_word = !rng.bernoulli(p);
    }
    keep[i] = keep_word;
  }
  return keep;
}

}  // namespace gec::model
