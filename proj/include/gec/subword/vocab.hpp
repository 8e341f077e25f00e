#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gec/corpus/corpus.hpp"

namespace gec::subword {

using Id = std::int32_t;
using Ids = std::vector<Id>;

inline constexpr Id kPad = 0;
inline constexpr Id kBos = 1;
inline constexpr Id kEos = 2;
inline constexpr Id kUnk = 3;
inline constexpr Id kFill = 4;
inline constexpr Id kNumSpecial = 5;
/// Byte-fallback pieces occupy [kByteBase, kByteBase + 256).
inline constexpr Id kByteBase = kNumSpecial;
inline constexpr Id kFirstChar = kByteBase + 256;

inline constexpr int kFormatVersion = 1;

/// Byte-pair-encoding vocabulary over UTF-8 characters with byte fallback.
///
/// Text is pre-split into chunks (an optional leading space plus a run of
/// non-space characters, a lone space, or the infill marker); merges never
/// cross chunk boundaries. Characters absent from the training corpus encode
/// as byte pieces, so every string encodes without UNK and decodes back
/// exactly.
class Vocab {
 public:
  struct Merge {
    Id left;
    Id right;
    Id result;
  };

  /// Learns merges until the vocabulary holds `target_size` pieces or no
  /// pair is left. Frequency ties go to the lexicographically smallest pair.
  static Vocab train(std::span<const std::string> corpus, std::size_t target_size);

  /// Specials + byte pieces + corpus characters.
  static std::size_t base_size(std::span<const std::string> corpus);

  Ids encode(std::string_view text) const;
  /// encode() wrapped in BOS ... EOS.
  Ids encode_framed(std::string_view text) const;
  /// Concatenated piece bytes. PAD/BOS/EOS decode to nothing, UNK to "<unk>".
  /// Throws RangeError for ids outside the vocabulary.
  std::string decode(std::span<const Id> ids) const;

  std::size_t size() const { return pieces_.size(); }
  std::size_t num_merges() const { return merges_.size(); }
  const std::string& piece(Id id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  const std::vector<Merge>& merges() const { return merges_; }

  /// Word index of every position: a word starts at position 0, at a piece
  /// beginning with a space, and at and after the infill piece.
  std::vector<int> word_index(std::span<const Id> ids) const;

  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  std::uint64_t fingerprint() const;

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.pieces_ == b.pieces_ && a.num_chars_ == b.num_chars_ && a.merge_list_equal(b);
  }

 private:
  bool merge_list_equal(const Vocab& o) const;
  void init_base(std::vector<char32_t> chars);
  void index_merges();
  void encode_chunk(std::string_view chunk, Ids& out) const;

  std::vector<std::string> pieces_;
  std::size_t num_chars_ = 0;
  std::unordered_map<char32_t, Id> char_ids_;
  std::vector<Merge> merges_;
  // (left << 32 | right) -> merge rank
  std::unordered_map<std::uint64_t, std::uint32_t> merge_rank_;
};

/// Pre-tokenization used by both training and encoding.
std::vector<std::string_view> split_chunks(std::string_view text);

struct EncodedPair {
  Ids source;  // unframed
  Ids target;  // unframed
};

EncodedPair encode_pair(const Vocab& vocab, const corpus::SentencePair& pair);

/// Keeps pairs whose source and target both encode to at most `max_pieces`
/// pieces. Order is preserved.
std::vector<corpus::SentencePair> filter_by_length(const Vocab& vocab, std::span<const corpus::SentencePair> pairs,
                                                   std::size_t max_pieces = 150);

}  // namespace gec::subword
