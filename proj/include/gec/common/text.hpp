#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace gec {

using Token = std::string;
using Tokens = std::vector<Token>;

/// Reserved infill marker. Tokenizer and subword vocabulary keep it whole.
inline constexpr std::string_view kFillMarker = "<fill>";

namespace utf8 {

/// One decoded unit: a valid code point, or a single byte from an invalid sequence.
struct Unit {
  std::uint32_t value;  // code point, or the raw byte when !valid
  bool valid;
  std::string_view bytes;  // view into the source text
};

/// Split `text` into code points. Invalid sequences produce one unit per byte.
std::vector<Unit> units(std::string_view text);

/// Code points of valid UTF-8 text; invalid bytes become U+FFFD.
std::u32string decode(std::string_view text);
std::string encode(std::u32string_view cps);
void append(std::string& out, char32_t cp);

}  // namespace utf8

bool is_space(char c);

/// Deterministic rule tokenizer: split on ASCII whitespace, then detach
/// punctuation. Apostrophes and hyphens between word characters stay inside
/// the word, '.' and ',' between digits stay inside the number, runs of the
/// same punctuation character form one token, and the infill marker is kept
/// as a single token.
Tokens tokenize(std::string_view text);

/// Tokens joined by single spaces; the canonical sentence text.
std::string join(const Tokens& tokens);

/// Whitespace split only (for text that is already tokenized).
Tokens split_ws(std::string_view text);

/// Replace tabs and newlines with spaces and collapse runs of spaces.
std::string normalize_ws(std::string_view text);

}  // namespace gec
