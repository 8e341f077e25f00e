#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gec/corpus/corpus.hpp"
#include "gec/noising/noise.hpp"

namespace gec::noising {

struct Snapshot {
  std::string text;
  std::string timestamp;
};

/// Chronological snapshots of one page.
struct PageHistory {
  std::string page_id;
  std::string title;
  std::vector<Snapshot> snapshots;
};

struct RevisionConfig {
  /// Keep snapshots 0, k, 2k, ...
  int keep_every = 1;
  /// Context tokens taken from each neighbouring anchor segment.
  std::size_t context_tokens = 10;
  /// Pairs with a side longer than this many tokens are dropped.
  std::size_t max_tokens = 100;
  NoiseConfig noise;
  /// Spelling noise on the older side of extracted pairs.
  bool spelling_noise = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const RevisionConfig& c);
void from_json(const nlohmann::json& j, RevisionConfig& c);

struct ExtractCounts {
  std::size_t alignments = 0;
  std::size_t edit_pairs = 0;
  std::size_t identity_pairs = 0;
  std::size_t dropped_long = 0;
};

/// Aligns consecutive retained snapshots token by token. Every maximal run of
/// non-matching edges becomes one (older, newer) pair, widened by the part
/// of each neighbouring matching segment that lies in the same sentence, at
/// most context_tokens on each side. Whole sentences inside matching segments
/// become identity pairs.
std::vector<corpus::SentencePair> extract_revision_pairs(std::span<const Snapshot> snapshots, const RevisionConfig& cfg,
                                                         const std::string& tag = "wiki",
                                                         ExtractCounts* counts = nullptr);

struct MiningReport {
  std::size_t pages = 0;
  std::size_t snapshots = 0;
  ExtractCounts extract;
  std::size_t identity_kept = 0;
  std::size_t pairs = 0;
};

/// extract_revision_pairs, identity downsampling and optional spelling noise
/// per page, with the page's RNG derived from (noise.seed, page_id). Output
/// follows page order regardless of `workers`.
std::vector<corpus::SentencePair> mine_pages(std::span<const PageHistory> pages, const RevisionConfig& cfg,
                                             unsigned workers = 1, MiningReport* report = nullptr);

/// Pages from a MediaWiki XML history dump (optionally gzip-compressed),
/// with wiki markup stripped from every revision text.
std::vector<PageHistory> read_xml_dump(const std::filesystem::path& path);
std::vector<PageHistory> parse_xml_dump(std::string_view xml);

/// One subdirectory per page; snapshot files in name order.
std::vector<PageHistory> read_snapshot_dirs(const std::filesystem::path& root);

/// Lossy removal of templates, links, references, tables, emphasis and tags.
std::string strip_wiki_markup(std::string_view wikitext);

nlohmann::json to_json(const MiningReport& r);

}  // namespace gec::noising
