#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gec/common/rng.hpp"
#include "gec/corpus/corpus.hpp"
#include "json.hpp"

namespace gec::noising {

struct NoiseConfig {
  double p_spell = 0.003;     // per character
  double p_infill = 0.01;     // per sentence
  int infill_max_len = 8;     // characters
  double identity_keep = 0.04;
  std::uint64_t seed = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const NoiseConfig& c);
void from_json(const nlohmann::json& j, NoiseConfig& c);

struct SpellCounts {
  std::size_t insertions = 0;
  std::size_t deletions = 0;
  std::size_t transpositions = 0;
  std::size_t replacements = 0;
};

/// At each character (code point) outside infill markers, with probability
/// p_spell: insert a random character before it, delete it, swap it with the
/// next one, or replace it, chosen uniformly. New characters are printable
/// ASCII (space through '~'). A swap on the last character does nothing.
std::string apply_spelling_noise(std::string_view text, const NoiseConfig& cfg, Rng& rng,
                                 SpellCounts* counts = nullptr);

/// With probability p_infill, replaces one uniformly chosen substring of
/// 1..infill_max_len characters with the fill marker. Text that already
/// contains the marker is returned unchanged.
std::string apply_infill_noise(std::string_view text, const NoiseConfig& cfg, Rng& rng);

/// Keeps every non-identity pair and each identity pair with probability
/// identity_keep.
std::vector<corpus::SentencePair> downsample_identity(std::span<const corpus::SentencePair> pairs,
                                                      const NoiseConfig& cfg, Rng& rng);

}  // namespace gec::noising
