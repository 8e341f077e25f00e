#include "gec/corpus/corpus.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include "gec/common/errors.hpp"
#include "gec/common/rng.hpp"

namespace gec::corpus {

SentencePair SentencePair::make(Tokens source, Tokens target, std::string tag) {
  SentencePair p{std::move(source), std::move(target), std::move(tag), false};
  p.is_identity = p.source == p.target;
  return p;
}

Alignment align_tokens(const Tokens& src, const Tokens& tgt) { return align(src, tgt); }

namespace {

struct EdgeCounts {
  std::size_t edits = 0;
  std::size_t total = 0;
};

EdgeCounts count_edges(std::span<const SentencePair> pairs) {
  EdgeCounts c;
  for (const auto& p : pairs) {
    if (p.is_identity) {
      c.total += p.source.size();
      continue;
    }
    const auto a = align_tokens(p.source, p.target);
    c.edits += a.cost();
    c.total += a.size();
  }
  return c;
}

EdgeCounts count_edges_parallel(std::span<const SentencePair> pairs, unsigned workers) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(pairs.size())));
  if (workers == 1) return count_edges(pairs);
  std::vector<EdgeCounts> parts(workers);
  std::vector<std::thread> threads;
  const std::size_t chunk = (pairs.size() + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = std::min(pairs.size(), w * chunk);
    const std::size_t hi = std::min(pairs.size(), lo + chunk);
    threads.emplace_back([&, w, lo, hi] { parts[w] = count_edges(pairs.subspan(lo, hi - lo)); });
  }
  for (auto& t : threads) t.join();
  EdgeCounts total;
  for (const auto& p : parts) {
    total.edits += p.edits;
    total.total += p.total;
  }
  return total;
}

DatasetStats finish(std::size_t n, EdgeCounts c) {
  DatasetStats s;
  s.sentence_count = n;
  s.edit_edges = c.edits;
  s.total_edges = c.total;
  s.error_rate = c.total ? static_cast<double>(c.edits) / static_cast<double>(c.total) : 0.0;
  return s;
}

}  // namespace

DatasetStats compute_stats(std::span<const SentencePair> pairs, unsigned workers) {
  if (pairs.empty()) throw EmptyInputError("compute_stats: empty dataset");
  return finish(pairs.size(), count_edges_parallel(pairs, workers));
}

std::map<std::string, DatasetStats> compute_stats_by_tag(std::span<const SentencePair> pairs, unsigned workers) {
  if (pairs.empty()) throw EmptyInputError("compute_stats: empty dataset");
  std::map<std::string, std::vector<SentencePair>> by_tag;
  for (const auto& p : pairs) by_tag[p.dataset_tag].push_back(p);
  std::map<std::string, DatasetStats> out;
  EdgeCounts all;
  for (const auto& [tag, group] : by_tag) {
    const auto c = count_edges_parallel(group, workers);
    all.edits += c.edits;
    all.total += c.total;
    out[tag] = finish(group.size(), c);
  }
  if (by_tag.size() > 1 || !by_tag.contains("")) out[""] = finish(pairs.size(), all);
  return out;
}

unsigned OversampleSpec::multiplier_for(const std::string& tag) const {
  if (auto it = multipliers.find(tag); it != multipliers.end()) return it->second;
  if (strict) throw RangeError("oversample: no multiplier for dataset tag '" + tag + "'");
  return default_multiplier;
}

std::vector<SentencePair> oversample(std::span<const SentencePair> pairs, const OversampleSpec& spec,
                                     std::uint64_t seed) {
  for (const auto& [tag, m] : spec.multipliers)
    if (m < 1) throw ConfigError("oversample: multiplier for '" + tag + "' must be >= 1");
  if (spec.default_multiplier < 1) throw ConfigError("oversample: default multiplier must be >= 1");

  std::vector<SentencePair> out;
  std::size_t total = 0;
  for (const auto& p : pairs) total += spec.multiplier_for(p.dataset_tag);
  out.reserve(total);
  for (const auto& p : pairs) {
    const unsigned m = spec.multiplier_for(p.dataset_tag);
    for (unsigned k = 0; k < m; ++k) out.push_back(p);
  }
  Rng rng(seed);
  rng.shuffle(out.begin(), out.end());
  return out;
}

std::size_t oversampled_size(const std::map<std::string, std::size_t>& counts, const OversampleSpec& spec) {
  std::size_t total = 0;
  for (const auto& [tag, n] : counts) total += n * spec.multiplier_for(tag);
  return total;
}

OversampleSpec parse_oversample_spec(std::string_view text, bool strict) {
  OversampleSpec spec;
  spec.strict = strict;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.rfind('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("oversample spec: expected tag=N, got '" + item + "'");
    const std::string tag = item.substr(0, eq);
    int n = 0;
    try {
      n = std::stoi(item.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("oversample spec: bad multiplier in '" + item + "'");
    }
    if (n < 1) throw ConfigError("oversample spec: multiplier must be >= 1 in '" + item + "'");
    if (tag == "*") {
      spec.default_multiplier = static_cast<unsigned>(n);
    } else {
      spec.multipliers[tag] = static_cast<unsigned>(n);
    }
  }
  return spec;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

void write_lines(const std::filesystem::path& path, std::span<const std::string> lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
}

std::vector<SentencePair> load_tsv(const std::filesystem::path& path, const std::string& default_tag) {
  const auto lines = read_lines(path);
  std::vector<SentencePair> pairs;
  pairs.reserve(lines.size());
  for (std::size_t row = 0; row < lines.size(); ++row) {
    const auto& line = lines[row];
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.emplace_back(std::string_view(line).substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() < 2) throw ParseError(path.string(), row + 1, "expected source<TAB>target, found no tab");
    if (cols.size() > 3) throw ParseError(path.string(), row + 1, "too many columns");
    auto src = tokenize(cols[0]);
    auto tgt = tokenize(cols[1]);
    if (src.empty() || tgt.empty()) throw ParseError(path.string(), row + 1, "empty source or target");
    std::string tag = cols.size() == 3 ? std::string(cols[2]) : default_tag;
    pairs.push_back(SentencePair::make(std::move(src), std::move(tgt), std::move(tag)));
  }
  return pairs;
}

std::vector<SentencePair> load_two_files(const std::filesystem::path& source, const std::filesystem::path& target,
                                         const std::string& tag) {
  const auto src_lines = read_lines(source);
  const auto tgt_lines = read_lines(target);
  if (src_lines.size() != tgt_lines.size()) {
    const std::size_t line = std::min(src_lines.size(), tgt_lines.size()) + 1;
    throw ParseError(src_lines.size() < tgt_lines.size() ? source.string() : target.string(), line,
                     "line count mismatch: " + std::to_string(src_lines.size()) + " source vs " +
                         std::to_string(tgt_lines.size()) + " target lines");
  }
  std::vector<SentencePair> pairs;
  pairs.reserve(src_lines.size());
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    auto src = tokenize(src_lines[i]);
    auto tgt = tokenize(tgt_lines[i]);
    if (src.empty() || tgt.empty()) throw ParseError(source.string(), i + 1, "empty source or target");
    pairs.push_back(SentencePair::make(std::move(src), std::move(tgt), tag));
  }
  return pairs;
}

void write_tsv(const std::filesystem::path& path, std::span<const SentencePair> pairs, bool with_tags) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& p : pairs) {
    out << join(p.source) << '\t' << join(p.target);
    if (with_tags && !p.dataset_tag.empty()) out << '\t' << p.dataset_tag;
    out << '\n';
  }
}

}  // namespace gec::corpus
