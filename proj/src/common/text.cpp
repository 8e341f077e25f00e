#include "gec/common/text.hpp"

#include <cctype>

namespace gec {
namespace utf8 {

std::vector<Unit> units(std::string_view text) {
  std::vector<Unit> out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto b0 = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (b0 < 0x80) {
      len = 1;
      cp = b0;
    } else if ((b0 & 0xE0) == 0xC0) {
      len = 2;
      cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
      len = 3;
      cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
      len = 4;
      cp = b0 & 0x07;
    }
    bool ok = len > 0 && i + len <= text.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto b = static_cast<unsigned char>(text[i + k]);
      if ((b & 0xC0) != 0x80) {
        ok = false;
      } else {
        cp = (cp << 6) | (b & 0x3F);
      }
    }
    if (ok) {
      // Reject overlong forms, surrogates and out-of-range values.
      static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
      if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) ok = false;
    }
    if (ok) {
      out.push_back({cp, true, text.substr(i, len)});
      i += len;
    } else {
      out.push_back({b0, false, text.substr(i, 1)});
      i += 1;
    }
  }
  return out;
}

void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::u32string decode(std::string_view text) {
  std::u32string out;
  for (const auto& u : units(text)) out.push_back(u.valid ? u.value : 0xFFFD);
  return out;
}

std::string encode(std::u32string_view cps) {
  std::string out;
  for (char32_t c : cps) append(out, c);
  return out;
}

}  // namespace utf8

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }
bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c); }

void split_chunk(std::string_view chunk, Tokens& out) {
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  std::size_t i = 0;
  while (i < chunk.size()) {
    if (chunk.substr(i, kFillMarker.size()) == kFillMarker) {
      flush();
      out.emplace_back(kFillMarker);
      i += kFillMarker.size();
      continue;
    }
    const auto c = static_cast<unsigned char>(chunk[i]);
    if (!is_punct_byte(c)) {
      cur.push_back(chunk[i++]);
      continue;
    }
    const bool prev_word = i > 0 && is_word_byte(static_cast<unsigned char>(chunk[i - 1]));
    const bool next_word = i + 1 < chunk.size() && is_word_byte(static_cast<unsigned char>(chunk[i + 1]));
    const bool prev_digit = i > 0 && std::isdigit(static_cast<unsigned char>(chunk[i - 1]));
    const bool next_digit = i + 1 < chunk.size() && std::isdigit(static_cast<unsigned char>(chunk[i + 1]));
    if (((c == '\'' || c == '-') && prev_word && next_word && !cur.empty()) ||
        ((c == '.' || c == ',') && prev_digit && next_digit && !cur.empty())) {
      cur.push_back(chunk[i++]);
      continue;
    }
    flush();
    std::size_t j = i;
    while (j < chunk.size() && chunk[j] == chunk[i] && chunk.substr(j, kFillMarker.size()) != kFillMarker) ++j;
    out.emplace_back(chunk.substr(i, j - i));
    i = j;
  }
  flush();
}

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) split_chunk(text.substr(i, j - i), out);
    i = j;
  }
  return out;
}

std::string join(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Tokens split_ws(std::string_view text) {
  Tokens out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string normalize_ws(std::string_view text) { return join(split_ws(text)); }

}  // namespace gec
