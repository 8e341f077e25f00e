#include "gec/noising/noise.hpp"

#include "gec/common/errors.hpp"
#include "gec/common/text.hpp"

namespace gec::noising {

void NoiseConfig::validate() const {
  auto prob = [](double p) { return p >= 0 && p <= 1; };
  if (!prob(p_spell) || !prob(p_infill) || !prob(identity_keep)) throw ConfigError("noise probabilities must be in [0, 1]");
  if (infill_max_len < 1) throw ConfigError("infill_max_len must be >= 1");
}

void to_json(nlohmann::json& j, const NoiseConfig& c) {
  j = {{"p_spell", c.p_spell},
       {"p_infill", c.p_infill},
       {"infill_max_len", c.infill_max_len},
       {"identity_keep", c.identity_keep},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, NoiseConfig& c) {
  NoiseConfig d;
  c.p_spell = j.value("p_spell", d.p_spell);
  c.p_infill = j.value("p_infill", d.p_infill);
  c.infill_max_len = j.value("infill_max_len", d.infill_max_len);
  c.identity_keep = j.value("identity_keep", d.identity_keep);
  c.seed = j.value("seed", d.seed);
}

namespace {

char random_char(Rng& rng) { return static_cast<char>(0x20 + rng.below(95)); }

void spell_segment(std::string_view seg, const NoiseConfig& cfg, Rng& rng, SpellCounts& c, std::string& out) {
  const auto units = utf8::units(seg);
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (!rng.bernoulli(cfg.p_spell)) {
      out += units[i].bytes;
      continue;
    }
    switch (rng.below(4)) {
      case 0:
        out += random_char(rng);
        out += units[i].bytes;
        ++c.insertions;
        break;
      case 1:
        ++c.deletions;
        break;
      case 2:
        if (i + 1 < units.size()) {
          out += units[i + 1].bytes;
          out += units[i].bytes;
          ++i;
          ++c.transpositions;
        } else {
          out += units[i].bytes;
        }
        break;
      default:
        out += random_char(rng);
        ++c.replacements;
        break;
    }
  }
}

}  // namespace

std::string apply_spelling_noise(std::string_view text, const NoiseConfig& cfg, Rng& rng, SpellCounts* counts) {
  cfg.validate();
  SpellCounts local;
  SpellCounts& c = counts ? *counts : local;
  std::string out;
  out.reserve(text.size() + 8);
  if (cfg.p_spell == 0) return std::string(text);
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto m = text.find(kFillMarker, pos);
    const auto end = m == std::string_view::npos ? text.size() : m;
    spell_segment(text.substr(pos, end - pos), cfg, rng, c, out);
    if (m == std::string_view::npos) break;
    out += kFillMarker;
    pos = m + kFillMarker.size();
  }
  return out;
}

std::string apply_infill_noise(std::string_view text, const NoiseConfig& cfg, Rng& rng) {
  cfg.validate();
  if (text.empty() || cfg.p_infill == 0 || text.find(kFillMarker) != std::string_view::npos) return std::string(text);
  if (!rng.bernoulli(cfg.p_infill)) return std::string(text);
  const auto units = utf8::units(text);
  const std::size_t n = units.size();
  const std::size_t len = 1 + rng.below(std::min<std::size_t>(static_cast<std::size_t>(cfg.infill_max_len), n));
  const std::size_t start = rng.below(n - len + 1);
  const auto begin_byte = static_cast<std::size_t>(units[start].bytes.data() - text.data());
  const auto end_byte = static_cast<std::size_t>(units[start + len - 1].bytes.data() - text.data()) +
                        units[start + len - 1].bytes.size();
  std::string out(text.substr(0, begin_byte));
  out += kFillMarker;
  out += text.substr(end_byte);
  return out;
}

std::vector<corpus::SentencePair> downsample_identity(std::span<const corpus::SentencePair> pairs,
                                                      const NoiseConfig& cfg, Rng& rng) {
  cfg.validate();
  std::vector<corpus::SentencePair> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs)
    if (!p.is_identity || rng.bernoulli(cfg.identity_keep)) out.push_back(p);
  return out;
}

}  // namespace gec::noising
