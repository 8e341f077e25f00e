#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "gec/decoding/beam.hpp"
#include "gec/eval/eval.hpp"
#include "gec/subword/vocab.hpp"

namespace gec::decoding {

struct TextHypothesis {
  std::string text;
  double cost = 0.0;
};

/// Anything that turns a sentence into a beam of scored texts.
class Corrector {
 public:
  virtual ~Corrector() = default;
  virtual std::vector<TextHypothesis> decode(const std::string& sentence) = 0;
};

/// Beam search over a transformer. Texts are the detokenized subword
/// sequences; hypotheses that decode to the same text keep the cheapest.
/// Sources longer than `max_source_len` subwords come back as the identity
/// with cost 0, so iterative decoding leaves them alone.
class ModelCorrector final : public Corrector {
 public:
  ModelCorrector(const model::Transformer<float>& model, const model::ParamSet<float>& params,
                 const subword::Vocab& vocab, BeamConfig beam, std::size_t max_source_len = 150);

  std::vector<TextHypothesis> decode(const std::string& sentence) override;

 private:
  const model::Transformer<float>& model_;
  const model::ParamSet<float>& params_;
  const subword::Vocab& vocab_;
  BeamConfig beam_;
  std::size_t max_source_len_;
};

/// Memoizes another corrector by input text.
class CachingCorrector final : public Corrector {
 public:
  explicit CachingCorrector(Corrector& inner) : inner_(inner) {}
  std::vector<TextHypothesis> decode(const std::string& sentence) override;
  std::size_t misses() const { return misses_; }

 private:
  Corrector& inner_;
  std::map<std::string, std::vector<TextHypothesis>> cache_;
  std::size_t misses_ = 0;
};

struct IterativeDecodeConfig {
  double threshold = 1.0;
  int max_iters = 1;

  void validate() const;
};

struct IterativeResult {
  std::string text;
  /// Sentence after each iteration that accepted a correction.
  std::vector<std::string> accepted;
  int iterations = 0;  // decode calls made
};

/// Re-decodes the current sentence while the cheapest non-identity item costs
/// at most threshold * identity cost. If the identity is missing from the
/// beam the cheapest item is taken; if every item is the identity, stop.
IterativeResult iterative_decode(Corrector& corrector, const std::string& input, const IterativeDecodeConfig& cfg);

struct DevSentence {
  std::string source;
  std::string reference;
  std::string tag;
};

struct GridCell {
  double threshold = 0.0;
  int max_iters = 0;
  eval::ScoreReport score;
};

struct GridResult {
  std::vector<GridCell> cells;  // thresholds outer, max_iters inner, input order
  std::size_t best = 0;         // highest F0.5, first on ties
  const GridCell& best_cell() const { return cells.at(best); }
};

using CorrectorFactory = std::function<std::unique_ptr<Corrector>()>;

/// Scores every (threshold, max_iters) cell. One trajectory per sentence and
/// threshold runs to the largest max_iters; decodes are memoized per
/// sentence. Each worker builds its own corrector.
GridResult grid_search(std::span<const DevSentence> dev, const CorrectorFactory& factory,
                       std::span<const double> thresholds, std::span<const int> max_iters_list, unsigned workers = 1);

/// threshold, max_iters, P, R, F0.5 (percentages) with a header row.
std::string grid_tsv(const GridResult& grid);

/// F0.5 matrix: one row per threshold, one column per max_iters.
std::string grid_matrix(const GridResult& grid);

/// Decodes every line independently with per-worker correctors.
std::vector<std::string> decode_all(std::span<const std::string> inputs, const CorrectorFactory& factory,
                                    const IterativeDecodeConfig& cfg, unsigned workers = 1);

}  // namespace gec::decoding
