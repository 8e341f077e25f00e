#pragma once

#include <span>
#include <string>
#include <vector>

#include "gec/corpus/corpus.hpp"
#include "gec/noising/noise.hpp"

namespace gec::noising {

struct SynthConfig {
  NoiseConfig noise;
  /// Probability of corrupting each eligible word-level site.
  double p_word = 0.11;

  void validate() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Sentences from a small built-in English template grammar, tokenized and
/// space-joined. Deterministic under `seed`. With `distinct`, repeats are
/// skipped so that any split of the result shares no sentence.
std::vector<std::string> generate_clean_sentences(std::size_t n, std::uint64_t seed, bool distinct = false);

/// Learner-style word errors: subject-verb agreement, a/an, dropped
/// articles and "to", wrong prepositions, tense, noun number, repeated and
/// swapped words. Each eligible site is corrupted with probability p_word;
/// a corrupted site and its right neighbour are not touched again.
/// Case of the first letter is preserved.
Tokens corrupt_words(const Tokens& clean, double p_word, Rng& rng, std::vector<std::string>* kinds = nullptr);

/// target = tokenize(clean); source = the target after word corruption,
/// spelling noise and infill (source only). Sentence i draws from
/// derive_seed(cfg.noise.seed, i), so any worker count gives the same corpus.
std::vector<corpus::SentencePair> make_synthetic_corpus(std::span<const std::string> clean, const SynthConfig& cfg,
                                                        const std::string& tag = "synth", unsigned workers = 1);

}  // namespace gec::noising
