#include "gec/noising/revisions.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <optional>
#include <regex>
#include <thread>

#include "gec/common/errors.hpp"

namespace gec::noising {

namespace fs = std::filesystem;
using corpus::EdgeKind;

void RevisionConfig::validate() const {
  noise.validate();
  if (keep_every < 1) throw ConfigError("keep_every must be >= 1");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

void to_json(nlohmann::json& j, const RevisionConfig& c) {
  j = {{"keep_every", c.keep_every},
       {"context_tokens", c.context_tokens},
       {"max_tokens", c.max_tokens},
       {"noise", c.noise},
       {"spelling_noise", c.spelling_noise}};
}

void from_json(const nlohmann::json& j, RevisionConfig& c) {
  RevisionConfig d;
  c.keep_every = j.value("keep_every", d.keep_every);
  c.context_tokens = j.value("context_tokens", d.context_tokens);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.noise = j.value("noise", d.noise);
  c.spelling_noise = j.value("spelling_noise", d.spelling_noise);
}

namespace {

bool terminator(const Token& t) { return t == "." || t == "!" || t == "?" || t == "..."; }

// Half-open token ranges on each side.
struct Span {
  std::size_t s0, s1, t0, t1;
};

void add_pair(const Tokens& a, const Tokens& b, const Span& sp, const RevisionConfig& cfg, const std::string& tag,
              std::vector<corpus::SentencePair>& out, ExtractCounts& c) {
  Tokens src(a.begin() + static_cast<std::ptrdiff_t>(sp.s0), a.begin() + static_cast<std::ptrdiff_t>(sp.s1));
  Tokens tgt(b.begin() + static_cast<std::ptrdiff_t>(sp.t0), b.begin() + static_cast<std::ptrdiff_t>(sp.t1));
  if (src.empty() && tgt.empty()) return;
  if (src.size() > cfg.max_tokens || tgt.size() > cfg.max_tokens) {
    ++c.dropped_long;
    return;
  }
  auto p = corpus::SentencePair::make(std::move(src), std::move(tgt), tag);
  ++(p.is_identity ? c.identity_pairs : c.edit_pairs);
  out.push_back(std::move(p));
}

void extract_one(const Tokens& a, const Tokens& b, const RevisionConfig& cfg, const std::string& tag,
                 std::vector<corpus::SentencePair>& out, ExtractCounts& c) {
  const auto al = corpus::align(a, b);
  // Segments: maximal runs of MATCH (anchors) or of edits, as source/target ranges.
  struct Seg {
    bool match;
    Span sp;
  };
  std::vector<Seg> segs;
  std::size_t i = 0, j = 0;
  for (const auto& e : al.edges) {
    const bool m = e.kind == EdgeKind::Match;
    if (segs.empty() || segs.back().match != m) segs.push_back({m, {i, i, j, j}});
    if (e.src >= 0) ++i;
    if (e.tgt >= 0) ++j;
    segs.back().sp.s1 = i;
    segs.back().sp.t1 = j;
  }

  for (std::size_t k = 0; k < segs.size(); ++k) {
    const auto& sg = segs[k];
    if (sg.match) {
      // Sentences fully inside the anchor and not used as context.
      const bool edit_before = k > 0, edit_after = k + 1 < segs.size();
      std::vector<std::size_t> cuts;  // positions just after a terminator
      for (std::size_t p = sg.sp.s0; p < sg.sp.s1; ++p)
        if (terminator(a[p])) cuts.push_back(p + 1);
      std::size_t start = sg.sp.s0, stop = sg.sp.s1;
      // The first and last partial sentences serve as context for neighbouring edits.
      if (edit_before) {
        if (cuts.empty()) continue;
        start = cuts.front();
      }
      if (edit_after) {
        if (cuts.empty()) continue;
        stop = cuts.back();
      }
      const auto off = sg.sp.t0 - sg.sp.s0;
      std::size_t cur = start;
      for (auto cut : cuts)
        if (cut > cur && cut <= stop) {
          add_pair(a, b, {cur, cut, cur + off, cut + off}, cfg, tag, out, c);
          cur = cut;
        }
      if (cur < stop) add_pair(a, b, {cur, stop, cur + off, stop + off}, cfg, tag, out, c);
      continue;
    }
    Span sp = sg.sp;
    if (k > 0) {
      // Left context: the tail of the previous anchor back to its last terminator.
      const auto& prev = segs[k - 1].sp;
      std::size_t p = prev.s1, taken = 0;
      while (p > prev.s0 && taken < cfg.context_tokens && !terminator(a[p - 1])) --p, ++taken;
      sp.s0 -= taken;
      sp.t0 -= taken;
    }
    if (k + 1 < segs.size()) {
      // Right context: the head of the next anchor through its first terminator.
      const auto& next = segs[k + 1].sp;
      std::size_t p = next.s0, taken = 0;
      while (p < next.s1 && taken < cfg.context_tokens) {
        ++taken;
        if (terminator(a[p++])) break;
      }
      sp.s1 += taken;
      sp.t1 += taken;
    }
    add_pair(a, b, sp, cfg, tag, out, c);
  }
}

}  // namespace

std::vector<corpus::SentencePair> extract_revision_pairs(std::span<const Snapshot> snapshots, const RevisionConfig& cfg,
                                                         const std::string& tag, ExtractCounts* counts) {
  cfg.validate();
  ExtractCounts local;
  ExtractCounts& c = counts ? *counts : local;
  std::vector<corpus::SentencePair> out;
  std::vector<Tokens> kept;
  for (std::size_t i = 0; i < snapshots.size(); i += static_cast<std::size_t>(cfg.keep_every))
    kept.push_back(tokenize(snapshots[i].text));
  for (std::size_t i = 1; i < kept.size(); ++i) {
    ++c.alignments;
    extract_one(kept[i - 1], kept[i], cfg, tag, out, c);
  }
  return out;
}

std::vector<corpus::SentencePair> mine_pages(std::span<const PageHistory> pages, const RevisionConfig& cfg,
                                             unsigned workers, MiningReport* report) {
  cfg.validate();
  struct PageOut {
    std::vector<corpus::SentencePair> pairs;
    ExtractCounts counts;
    std::size_t identity_kept = 0;
  };
  std::vector<PageOut> results(pages.size());
  auto work = [&](std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      auto& r = results[p];
      Rng rng(derive_seed(cfg.noise.seed, pages[p].page_id));
      auto pairs = extract_revision_pairs(pages[p].snapshots, cfg, "wiki", &r.counts);
      r.pairs = downsample_identity(pairs, cfg.noise, rng);
      for (auto& q : r.pairs) {
        if (q.is_identity) ++r.identity_kept;
        if (cfg.spelling_noise && cfg.noise.p_spell > 0) {
          q = corpus::SentencePair::make(tokenize(apply_spelling_noise(join(q.source), cfg.noise, rng)),
                                         std::move(q.target), q.dataset_tag);
        }
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(pages.size(), 1))));
  if (workers == 1) {
    work(0, pages.size());
  } else {
    const std::size_t chunk = (pages.size() + workers - 1) / workers;
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back(work, std::min(pages.size(), w * chunk), std::min(pages.size(), (w + 1) * chunk));
  }
  std::vector<corpus::SentencePair> out;
  MiningReport rep;
  rep.pages = pages.size();
  for (std::size_t p = 0; p < pages.size(); ++p) {
    rep.snapshots += pages[p].snapshots.size();
    const auto& c = results[p].counts;
    rep.extract.alignments += c.alignments;
    rep.extract.edit_pairs += c.edit_pairs;
    rep.extract.identity_pairs += c.identity_pairs;
    rep.extract.dropped_long += c.dropped_long;
    rep.identity_kept += results[p].identity_kept;
    for (auto& q : results[p].pairs) out.push_back(std::move(q));
  }
  rep.pairs = out.size();
  if (report) *report = rep;
  return out;
}

nlohmann::json to_json(const MiningReport& r) {
  return {{"pages", r.pages},
          {"snapshots", r.snapshots},
          {"alignments", r.extract.alignments},
          {"edit_pairs", r.extract.edit_pairs},
          {"identity_pairs", r.extract.identity_pairs},
          {"identity_kept", r.identity_kept},
          {"dropped_long", r.extract.dropped_long},
          {"pairs", r.pairs}};
}

// ---- markup and XML

std::string strip_wiki_markup(std::string_view wikitext) {
  std::string s(wikitext);
  // Nested templates and tables: remove innermost first.
  static const std::regex templ(R"(\{\{[^{}]*\}\})");
  static const std::regex table(R"(\{\|[^{}]*?\|\})");
  for (std::string prev; prev != s;) {
    prev = s;
    s = std::regex_replace(s, templ, "");
    s = std::regex_replace(s, table, "");
  }
  static const std::vector<std::pair<std::regex, std::string>> rules = {
      {std::regex(R"(<!--[\s\S]*?-->)"), ""},
      {std::regex(R"(<ref[^>]*/>)"), ""},
      {std::regex(R"(<ref[^>]*>[\s\S]*?</ref>)"), ""},
      {std::regex(R"(\[\[(?:File|Image|Category):[^\]]*\]\])", std::regex::icase), ""},
      {std::regex(R"(\[\[[^\]|]*\|([^\]]*)\]\])"), "$1"},
      {std::regex(R"(\[\[([^\]]*)\]\])"), "$1"},
      {std::regex(R"(\[https?://[^\s\]]*\s([^\]]*)\])"), "$1"},
      {std::regex(R"(\[https?://[^\]]*\])"), ""},
      {std::regex(R"(<[^>]+>)"), ""},
      {std::regex(R"('{2,})"), ""},
      {std::regex(R"((^|\n)=+\s*([^=\n]*?)\s*=+\s*(?=\n|$))"), "$1$2"},
      {std::regex(R"((^|\n)[*#:;]+\s*)"), "$1"},
  };
  for (const auto& [re, rep] : rules) s = std::regex_replace(s, re, rep);
  return s;
}

namespace {

std::string unescape_xml(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '&') {
      out += s[i];
      continue;
    }
    const auto semi = s.find(';', i);
    if (semi == std::string_view::npos || semi - i > 10) {
      out += s[i];
      continue;
    }
    const auto ent = s.substr(i + 1, semi - i - 1);
    if (ent == "lt") out += '<';
    else if (ent == "gt") out += '>';
    else if (ent == "amp") out += '&';
    else if (ent == "quot") out += '"';
    else if (ent == "apos") out += '\'';
    else if (!ent.empty() && ent[0] == '#') {
      const bool hex = ent.size() > 1 && (ent[1] == 'x' || ent[1] == 'X');
      try {
        const auto cp = std::stoul(std::string(ent.substr(hex ? 2 : 1)), nullptr, hex ? 16 : 10);
        utf8::append(out, static_cast<char32_t>(cp));
      } catch (const std::exception&) {
        out.append(s.substr(i, semi - i + 1));
      }
    } else {
      out.append(s.substr(i, semi - i + 1));
    }
    i = semi;
  }
  return out;
}

// Text of the first <tag ...>...</tag> in [from, to), or nullopt.
std::optional<std::string_view> element(std::string_view xml, std::string_view tag, std::size_t from, std::size_t to,
                                        std::size_t* end_pos = nullptr) {
  const std::string open = "<" + std::string(tag);
  std::size_t p = from;
  while (true) {
    p = xml.find(open, p);
    if (p == std::string_view::npos || p >= to) return std::nullopt;
    const char after = xml[p + open.size()];
    if (after == '>' || after == ' ' || after == '/' || after == '\t' || after == '\n') break;
    p += open.size();
  }
  const auto gt = xml.find('>', p);
  if (gt == std::string_view::npos || gt >= to) return std::nullopt;
  if (xml[gt - 1] == '/') {
    if (end_pos) *end_pos = gt + 1;
    return std::string_view{};
  }
  const std::string close = "</" + std::string(tag) + ">";
  const auto c = xml.find(close, gt + 1);
  if (c == std::string_view::npos || c > to) return std::nullopt;
  if (end_pos) *end_pos = c + close.size();
  return xml.substr(gt + 1, c - gt - 1);
}

std::string read_maybe_gzip(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  int err = 0;
  const char* msg = gzerror(f, &err);
  gzclose(f);
  if (n < 0 || (err != Z_OK && err != Z_STREAM_END)) throw IoError("cannot read " + path.string() + ": " + msg);
  return out;
}

}  // namespace

std::vector<PageHistory> parse_xml_dump(std::string_view xml) {
  std::vector<PageHistory> pages;
  std::size_t pos = 0;
  while (true) {
    std::size_t page_end;
    const auto page = element(xml, "page", pos, xml.size(), &page_end);
    if (!page) break;
    const auto base = static_cast<std::size_t>(page->data() - xml.data());
    const auto end = base + page->size();
    PageHistory h;
    if (auto t = element(xml, "title", base, end)) h.title = unescape_xml(*t);
    // The page id precedes the first revision.
    const auto first_rev = xml.find("<revision", base);
    if (auto id = element(xml, "id", base, std::min(end, first_rev))) h.page_id = std::string(*id);
    if (h.page_id.empty()) h.page_id = h.title;
    std::size_t rp = base;
    std::size_t rev_end;
    while (auto rev = element(xml, "revision", rp, end, &rev_end)) {
      const auto rb = static_cast<std::size_t>(rev->data() - xml.data());
      const auto re = rb + rev->size();
      Snapshot s;
      if (auto ts = element(xml, "timestamp", rb, re)) s.timestamp = std::string(*ts);
      if (auto text = element(xml, "text", rb, re)) s.text = strip_wiki_markup(unescape_xml(*text));
      if (!tokenize(s.text).empty()) h.snapshots.push_back(std::move(s));
      rp = rev_end;
    }
    std::stable_sort(h.snapshots.begin(), h.snapshots.end(),
                     [](const Snapshot& a, const Snapshot& b) { return a.timestamp < b.timestamp; });
    pages.push_back(std::move(h));
    pos = page_end;
  }
  return pages;
}

std::vector<PageHistory> read_xml_dump(const fs::path& path) { return parse_xml_dump(read_maybe_gzip(path)); }

std::vector<PageHistory> read_snapshot_dirs(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<PageHistory> pages;
  for (const auto& d : dirs) {
    PageHistory h;
    h.page_id = h.title = d.filename().string();
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) h.snapshots.push_back({read_maybe_gzip(f), f.filename().string()});
    pages.push_back(std::move(h));
  }
  return pages;
}

}  // namespace gec::noising
