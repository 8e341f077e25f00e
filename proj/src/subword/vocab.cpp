#include "gec/subword/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"

namespace gec::subword {

namespace {

constexpr std::string_view kMagic = "gec-subword-vocab";
constexpr std::string_view kSpecialNames[kNumSpecial] = {"<pad>", "<s>", "</s>", "<unk>", "<fill>"};

std::uint64_t pair_key(Id a, Id b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

std::string escape(std::string_view s) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned char c : s) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case ' ': out += "\\s"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c == 0x7F) {
          out += "\\x";
          out.push_back(kHex[c >> 4]);
          out.push_back(kHex[c & 15]);
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  return out;
}

std::string unescape(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i >= s.size()) throw Error("vocab: dangling escape");
    switch (s[i]) {
      case '\\': out.push_back('\\'); break;
      case 's': out.push_back(' '); break;
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case 'x': {
        if (i + 2 >= s.size()) throw Error("vocab: bad \\x escape");
        out.push_back(static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16)));
        i += 2;
        break;
      }
      default: throw Error("vocab: unknown escape");
    }
  }
  return out;
}

}  // namespace

std::vector<std::string_view> split_chunks(std::string_view text) {
  std::vector<std::string_view> chunks;
  std::size_t i = 0;
  const auto at_marker = [&](std::size_t k) { return text.substr(k, kFillMarker.size()) == kFillMarker; };
  while (i < text.size()) {
    if (at_marker(i)) {
      chunks.push_back(text.substr(i, kFillMarker.size()));
      i += kFillMarker.size();
      continue;
    }
    std::size_t j = i;
    if (text[j] == ' ') ++j;
    while (j < text.size() && text[j] != ' ' && !at_marker(j)) ++j;
    chunks.push_back(text.substr(i, j - i));
    i = j;
  }
  return chunks;
}

void Vocab::init_base(std::vector<char32_t> chars) {
  chars.push_back(U' ');
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  pieces_.clear();
  char_ids_.clear();
  for (auto name : kSpecialNames) pieces_.emplace_back(name);
  for (int b = 0; b < 256; ++b) pieces_.emplace_back(1, static_cast<char>(b));
  for (char32_t c : chars) {
    char_ids_[c] = static_cast<Id>(pieces_.size());
    std::string s;
    utf8::append(s, c);
    pieces_.push_back(std::move(s));
  }
  num_chars_ = chars.size();
}

void Vocab::index_merges() {
  merge_rank_.clear();
  for (std::size_t r = 0; r < merges_.size(); ++r)
    merge_rank_.emplace(pair_key(merges_[r].left, merges_[r].right), static_cast<std::uint32_t>(r));
}

namespace {

std::vector<char32_t> corpus_chars(std::span<const std::string> corpus) {
  std::set<char32_t> seen;
  for (const auto& line : corpus)
    for (auto chunk : split_chunks(line)) {
      if (chunk == kFillMarker) continue;
      for (const auto& u : utf8::units(chunk))
        if (u.valid) seen.insert(u.value);
    }
  return {seen.begin(), seen.end()};
}

}  // namespace

std::size_t Vocab::base_size(std::span<const std::string> corpus) {
  auto chars = corpus_chars(corpus);
  chars.push_back(U' ');
  std::sort(chars.begin(), chars.end());
  chars.erase(std::unique(chars.begin(), chars.end()), chars.end());
  return static_cast<std::size_t>(kFirstChar) + chars.size();
}

Vocab Vocab::train(std::span<const std::string> corpus, std::size_t target_size) {
  bool any = false;
  for (const auto& line : corpus) any = any || !line.empty();
  if (!any) throw EmptyInputError("train_vocab: empty corpus");

  Vocab v;
  v.init_base(corpus_chars(corpus));
  if (target_size < v.size()) {
    throw ConfigError("train_vocab: target size " + std::to_string(target_size) + " is below the " +
                      std::to_string(v.size()) + " base symbols");
  }

  // Unique chunks with frequencies, in a deterministic order.
  std::map<std::string, std::uint64_t> chunk_freq;
  for (const auto& line : corpus)
    for (auto chunk : split_chunks(line))
      if (chunk != kFillMarker) ++chunk_freq[std::string(chunk)];

  struct Word {
    Ids syms;
    std::uint64_t freq;
  };
  std::vector<Word> words;
  words.reserve(chunk_freq.size());
  for (const auto& [chunk, freq] : chunk_freq) {
    Word w{{}, freq};
    for (const auto& u : utf8::units(chunk))
      w.syms.push_back(u.valid ? v.char_ids_.at(u.value) : kByteBase + static_cast<Id>(u.value));
    words.push_back(std::move(w));
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
  for (std::uint32_t wi = 0; wi < words.size(); ++wi) {
    const auto& s = words[wi].syms;
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      const auto key = pair_key(s[k], s[k + 1]);
      counts[key] += static_cast<std::int64_t>(words[wi].freq);
      where[key].push_back(wi);
    }
  }

  struct Cand {
    std::int64_t count;
    Id left;
    Id right;
  };
  const auto& pieces = v.pieces_;
  auto worse = [&pieces](const Cand& a, const Cand& b) {
    if (a.count != b.count) return a.count < b.count;
    const auto& al = pieces[static_cast<std::size_t>(a.left)];
    const auto& bl = pieces[static_cast<std::size_t>(b.left)];
    if (al != bl) return al > bl;
    const auto& ar = pieces[static_cast<std::size_t>(a.right)];
    const auto& br = pieces[static_cast<std::size_t>(b.right)];
    if (ar != br) return ar > br;
    return std::tie(a.left, a.right) > std::tie(b.left, b.right);
  };
  std::priority_queue<Cand, std::vector<Cand>, decltype(worse)> heap(worse);
  for (const auto& [key, c] : counts)
    heap.push({c, static_cast<Id>(key >> 32), static_cast<Id>(key & 0xffffffffu)});

  std::unordered_map<std::string, Id> by_string;
  for (std::size_t i = kFirstChar; i < v.pieces_.size(); ++i) by_string.emplace(v.pieces_[i], static_cast<Id>(i));

  std::vector<std::uint32_t> stamp(words.size(), 0);
  std::uint32_t epoch = 0;
  while (v.pieces_.size() < target_size && !heap.empty()) {
    const Cand top = heap.top();
    heap.pop();
    const auto key = pair_key(top.left, top.right);
    const auto it = counts.find(key);
    if (it == counts.end() || it->second != top.count || top.count <= 0) continue;

    std::string joined = v.pieces_[static_cast<std::size_t>(top.left)] + v.pieces_[static_cast<std::size_t>(top.right)];
    Id result;
    if (auto found = by_string.find(joined); found != by_string.end()) {
      result = found->second;
    } else {
      result = static_cast<Id>(v.pieces_.size());
      v.pieces_.push_back(joined);
      by_string.emplace(std::move(joined), result);
    }
    v.merges_.push_back({top.left, top.right, result});

    ++epoch;
    std::set<std::uint64_t> touched;
    const auto occurrences = where[key];
    for (std::uint32_t wi : occurrences) {
      if (stamp[wi] == epoch) continue;
      stamp[wi] = epoch;
      auto& s = words[wi].syms;
      const auto f = static_cast<std::int64_t>(words[wi].freq);
      bool has = false;
      for (std::size_t k = 0; k + 1 < s.size() && !has; ++k) has = s[k] == top.left && s[k + 1] == top.right;
      if (!has) continue;
      for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        const auto pk = pair_key(s[k], s[k + 1]);
        counts[pk] -= f;
        touched.insert(pk);
      }
      Ids merged;
      merged.reserve(s.size());
      for (std::size_t k = 0; k < s.size();) {
        if (k + 1 < s.size() && s[k] == top.left && s[k + 1] == top.right) {
          merged.push_back(result);
          k += 2;
        } else {
          merged.push_back(s[k++]);
        }
      }
      s = std::move(merged);
      for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        const auto pk = pair_key(s[k], s[k + 1]);
        counts[pk] += f;
        where[pk].push_back(wi);
        touched.insert(pk);
      }
    }
    for (auto pk : touched) {
      const auto c = counts[pk];
      if (c > 0) heap.push({c, static_cast<Id>(pk >> 32), static_cast<Id>(pk & 0xffffffffu)});
    }
  }
  v.index_merges();
  return v;
}

void Vocab::encode_chunk(std::string_view chunk, Ids& out) const {
  if (chunk == kFillMarker) {
    out.push_back(kFill);
    return;
  }
  Ids s;
  for (const auto& u : utf8::units(chunk)) {
    if (u.valid) {
      if (auto it = char_ids_.find(u.value); it != char_ids_.end()) {
        s.push_back(it->second);
        continue;
      }
      for (unsigned char b : u.bytes) s.push_back(kByteBase + b);
    } else {
      s.push_back(kByteBase + static_cast<Id>(u.value));
    }
  }
  while (s.size() > 1) {
    std::uint32_t best = UINT32_MAX;
    for (std::size_t k = 0; k + 1 < s.size(); ++k) {
      if (auto it = merge_rank_.find(pair_key(s[k], s[k + 1])); it != merge_rank_.end()) best = std::min(best, it->second);
    }
    if (best == UINT32_MAX) break;
    const auto& m = merges_[best];
    Ids merged;
    merged.reserve(s.size());
    for (std::size_t k = 0; k < s.size();) {
      if (k + 1 < s.size() && s[k] == m.left && s[k + 1] == m.right) {
        merged.push_back(m.result);
        k += 2;
      } else {
        merged.push_back(s[k++]);
      }
    }
    s = std::move(merged);
  }
  out.insert(out.end(), s.begin(), s.end());
}

Ids Vocab::encode(std::string_view text) const {
  Ids out;
  for (auto chunk : split_chunks(text)) encode_chunk(chunk, out);
  return out;
}

Ids Vocab::encode_framed(std::string_view text) const {
  Ids out{kBos};
  for (auto chunk : split_chunks(text)) encode_chunk(chunk, out);
  out.push_back(kEos);
  return out;
}

std::string Vocab::decode(std::span<const Id> ids) const {
  std::string out;
  for (Id id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= pieces_.size())
      throw RangeError("decode: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(pieces_.size()));
    if (id == kPad || id == kBos || id == kEos) continue;
    if (id == kFill) {
      out += kFillMarker;
      continue;
    }
    out += pieces_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::vector<int> Vocab::word_index(std::span<const Id> ids) const {
  std::vector<int> out(ids.size());
  int word = -1;
  bool after_fill = false;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const Id id = ids[i];
    const bool starts = i == 0 || after_fill || id == kFill || id == kBos || id == kEos ||
                        (id >= kFirstChar && static_cast<std::size_t>(id) < pieces_.size() &&
                         !pieces_[static_cast<std::size_t>(id)].empty() && pieces_[static_cast<std::size_t>(id)][0] == ' ');
    if (starts) ++word;
    out[i] = word;
    after_fill = id == kFill || id == kBos;
  }
  return out;
}

bool Vocab::merge_list_equal(const Vocab& o) const {
  if (merges_.size() != o.merges_.size()) return false;
  for (std::size_t i = 0; i < merges_.size(); ++i)
    if (merges_[i].left != o.merges_[i].left || merges_[i].right != o.merges_[i].right ||
        merges_[i].result != o.merges_[i].result)
      return false;
  return true;
}

std::string Vocab::serialize() const {
  std::ostringstream out;
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "size " << pieces_.size() << '\n';
  out << "specials";
  for (auto name : kSpecialNames) out << ' ' << name;
  out << '\n';
  out << "chars " << num_chars_ << '\n';
  for (std::size_t i = 0; i < num_chars_; ++i) out << escape(pieces_[kFirstChar + i]) << '\n';
  out << "merges " << merges_.size() << '\n';
  for (const auto& m : merges_)
    out << m.left << ' ' << m.right << ' ' << m.result << ' ' << escape(pieces_[static_cast<std::size_t>(m.result)])
        << '\n';
  return out.str();
}

Vocab Vocab::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> std::string& {
    if (!std::getline(in, line)) throw ParseError("vocab", lineno + 1, "unexpected end of file");
    ++lineno;
    return line;
  };
  auto expect_count = [&](std::string_view key) {
    const auto& l = next();
    if (l.rfind(std::string(key) + " ", 0) != 0) throw ParseError("vocab", lineno, "expected '" + std::string(key) + "'");
    return static_cast<std::size_t>(std::stoull(l.substr(key.size() + 1)));
  };

  {
    const auto& l = next();
    std::istringstream hs(l);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != kMagic) throw ParseError("vocab", lineno, "not a subword vocabulary");
    if (version != kFormatVersion) throw ParseError("vocab", lineno, "unsupported version " + std::to_string(version));
  }
  const std::size_t size = expect_count("size");
  if (next().rfind("specials", 0) != 0) throw ParseError("vocab", lineno, "expected 'specials'");
  const std::size_t nchars = expect_count("chars");
  std::vector<char32_t> chars;
  for (std::size_t i = 0; i < nchars; ++i) {
    const auto cps = utf8::decode(unescape(next()));
    if (cps.size() != 1) throw ParseError("vocab", lineno, "character entry must hold one code point");
    chars.push_back(cps[0]);
  }
  Vocab v;
  v.init_base(chars);
  if (v.num_chars_ != nchars) throw ParseError("vocab", lineno, "duplicate or missing characters");
  const std::size_t nmerges = expect_count("merges");
  for (std::size_t i = 0; i < nmerges; ++i) {
    std::istringstream ms(next());
    long long l = -1, r = -1, res = -1;
    ms >> l >> r >> res;
    const auto n = static_cast<long long>(v.pieces_.size());
    if (!ms || l < 0 || r < 0 || l >= n || r >= n || res < kFirstChar || res > n)
      throw ParseError("vocab", lineno, "bad merge entry");
    std::string joined = v.pieces_[static_cast<std::size_t>(l)] + v.pieces_[static_cast<std::size_t>(r)];
    if (res == n) {
      v.pieces_.push_back(std::move(joined));
    } else if (v.pieces_[static_cast<std::size_t>(res)] != joined) {
      throw ParseError("vocab", lineno, "merge result does not match its pieces");
    }
    v.merges_.push_back({static_cast<Id>(l), static_cast<Id>(r), static_cast<Id>(res)});
  }
  if (v.pieces_.size() != size) throw ParseError("vocab", lineno, "size header disagrees with contents");
  v.index_merges();
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << serialize();
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint64_t Vocab::fingerprint() const { return fnv1a(serialize()); }

EncodedPair encode_pair(const Vocab& vocab, const corpus::SentencePair& pair) {
  return {vocab.encode(join(pair.source)), vocab.encode(join(pair.target))};
}

std::vector<corpus::SentencePair> filter_by_length(const Vocab& vocab, std::span<const corpus::SentencePair> pairs,
                                                   std::size_t max_pieces) {
  std::vector<corpus::SentencePair> out;
  for (const auto& p : pairs) {
    if (vocab.encode(join(p.source)).size() <= max_pieces && vocab.encode(join(p.target)).size() <= max_pieces)
      out.push_back(p);
  }
  return out;
}

}  // namespace gec::subword
