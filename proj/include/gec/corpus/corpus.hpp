#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gec/common/text.hpp"
#include "gec/corpus/alignment.hpp"

namespace gec::corpus {

struct SentencePair {
  Tokens source;
  Tokens target;
  std::string dataset_tag;
  bool is_identity = false;

  /// Builds a pair and computes `is_identity`.
  static SentencePair make(Tokens source, Tokens target, std::string tag = {});
};

Alignment align_tokens(const Tokens& src, const Tokens& tgt);

struct DatasetStats {
  std::size_t sentence_count = 0;
  std::size_t edit_edges = 0;   // non-MATCH edges
  std::size_t total_edges = 0;
  double error_rate = 0.0;      // edit_edges / total_edges
};

/// Micro-averaged error rate: total non-MATCH edges over total edges.
/// Throws EmptyInputError on an empty corpus.
DatasetStats compute_stats(std::span<const SentencePair> pairs, unsigned workers = 1);

/// Stats per dataset tag, plus an "all" row keyed by the empty string.
std::map<std::string, DatasetStats> compute_stats_by_tag(std::span<const SentencePair> pairs, unsigned workers = 1);

/// Total copy count per dataset tag. A multiplier of 1 keeps the data as is.
struct OversampleSpec {
  std::map<std::string, unsigned> multipliers;
  unsigned default_multiplier = 1;
  /// When set, a tag without an explicit multiplier is an error.
  bool strict = false;

  unsigned multiplier_for(const std::string& tag) const;
};

/// Every pair repeated multiplier[tag] times, then shuffled with `seed`.
std::vector<SentencePair> oversample(std::span<const SentencePair> pairs, const OversampleSpec& spec,
                                     std::uint64_t seed);

/// Size of the oversampled mixture for per-tag sentence counts.
std::size_t oversampled_size(const std::map<std::string, std::size_t>& counts, const OversampleSpec& spec);

/// Parses "tag=N,tag=N" (and "*=N" for the default).
OversampleSpec parse_oversample_spec(std::string_view text, bool strict = false);

/// TSV: source TAB target [TAB tag]. Lines are tokenized with the rule tokenizer.
/// `default_tag` applies to rows without a third column.
std::vector<SentencePair> load_tsv(const std::filesystem::path& path, const std::string& default_tag = {});

/// Line-aligned source and target files.
std::vector<SentencePair> load_two_files(const std::filesystem::path& source, const std::filesystem::path& target,
                                         const std::string& tag = {});

/// Writes source TAB target TAB tag, tokens joined by spaces.
void write_tsv(const std::filesystem::path& path, std::span<const SentencePair> pairs, bool with_tags = true);

std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, std::span<const std::string> lines);

}  // namespace gec::corpus
