#include "gec/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "gec/common/errors.hpp"
#include "gec/corpus/alignment.hpp"

namespace gec::eval {

using corpus::EdgeKind;

std::vector<Edit> extract_edits(const Tokens& source, const Tokens& hypothesis) {
  const auto al = corpus::align(source, hypothesis);
  std::vector<Edit> edits;
  int consumed = 0;  // source tokens before the current edge
  bool open = false;
  for (const auto& e : al.edges) {
    if (e.kind == EdgeKind::Match) {
      open = false;
      ++consumed;
      continue;
    }
    if (!open) {
      edits.push_back(Edit{consumed, consumed, {}});
      open = true;
    }
    auto& cur = edits.back();
    if (e.src >= 0) {
      ++cur.end;
      ++consumed;
    }
    if (e.tgt >= 0) cur.replacement.push_back(hypothesis[static_cast<std::size_t>(e.tgt)]);
  }
  return edits;
}

Tokens apply_edits(const Tokens& source, std::span<const Edit> edits) {
  Tokens out;
  int pos = 0;
  const int n = static_cast<int>(source.size());
  for (const auto& e : edits) {
    if (e.start < pos || e.end < e.start || e.end > n) throw RangeError("edits overlap or fall outside the source");
    out.insert(out.end(), source.begin() + pos, source.begin() + e.start);
    out.insert(out.end(), e.replacement.begin(), e.replacement.end());
    pos = e.end;
  }
  out.insert(out.end(), source.begin() + pos, source.end());
  return out;
}

double f_beta(double p, double r, double beta) {
  const double b2 = beta * beta;
  const double denom = b2 * p + r;
  return denom > 0 ? (1 + b2) * p * r / denom : 0.0;
}

ScoreReport report(const Counts& c) {
  ScoreReport r;
  r.counts = c;
  r.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 1.0;
  r.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 1.0;
  r.f05 = f_beta(r.precision, r.recall);
  return r;
}

Counts count_edits(std::span<const Edit> hyp, std::span<const Edit> ref) {
  std::vector<Edit> h(hyp.begin(), hyp.end()), g(ref.begin(), ref.end());
  std::sort(h.begin(), h.end());
  std::sort(g.begin(), g.end());
  std::vector<Edit> common;
  std::set_intersection(h.begin(), h.end(), g.begin(), g.end(), std::back_inserter(common));
  Counts c;
  c.tp = common.size();
  c.fp = h.size() - c.tp;
  c.fn = g.size() - c.tp;
  return c;
}

ScoreReport score(std::span<const std::vector<Edit>> hyp, std::span<const std::vector<Edit>> ref) {
  if (hyp.size() != ref.size()) throw RangeError("hypothesis and reference sentence counts differ");
  Counts total;
  for (std::size_t i = 0; i < hyp.size(); ++i) total += count_edits(hyp[i], ref[i]);
  return report(total);
}

namespace {

std::vector<Counts> per_sentence(std::span<const ScoredSentence> s, unsigned workers) {
  std::vector<Counts> out(s.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
      out[i] = count_edits(extract_edits(s[i].source, s[i].hypothesis), extract_edits(s[i].source, s[i].reference));
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(s.size() / 64 + 1)));
  if (workers == 1) {
    work(0, s.size());
    return out;
  }
  std::vector<std::jthread> pool;
  const std::size_t chunk = (s.size() + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back(work, std::min(s.size(), w * chunk), std::min(s.size(), (w + 1) * chunk));
  return out;
}

}  // namespace

ScoreReport score_sentences(std::span<const ScoredSentence> sentences, unsigned workers) {
  Counts total;
  for (const auto& c : per_sentence(sentences, workers)) total += c;
  return report(total);
}

CombinedReport dev_combined(std::span<const ScoredSentence> sentences, const std::set<std::string>& known_tags,
                            unsigned workers) {
  if (!known_tags.empty())
    for (const auto& s : sentences)
      if (!known_tags.contains(s.tag)) throw ConfigError("unknown subset tag '" + s.tag + "'");
  const auto counts = per_sentence(sentences, workers);
  Counts total;
  std::map<std::string, Counts> by_tag;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    total += counts[i];
    by_tag[sentences[i].tag] += counts[i];
  }
  CombinedReport r;
  r.combined = report(total);
  for (const auto& [tag, c] : by_tag) r.subsets[tag] = report(c);
  return r;
}

namespace {
double pct(double x) { return std::round(x * 10000.0) / 100.0; }
}  // namespace

nlohmann::json to_json(const ScoreReport& r) {
  return {{"P", pct(r.precision)}, {"R", pct(r.recall)}, {"F0.5", pct(r.f05)},
          {"tp", r.counts.tp},     {"fp", r.counts.fp},  {"fn", r.counts.fn}};
}

nlohmann::json to_json(const CombinedReport& r) {
  nlohmann::json j;
  j["combined"] = to_json(r.combined);
  j["subsets"] = nlohmann::json::object();
  for (const auto& [tag, s] : r.subsets) j["subsets"][tag] = to_json(s);
  return j;
}

std::string format_table(const CombinedReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-12s %7s %7s %7s %7s %7s %7s\n", "subset", "P", "R", "F0.5", "tp", "fp", "fn");
  std::string out = buf;
  auto row = [&](const std::string& name, const ScoreReport& s) {
    std::snprintf(buf, sizeof buf, "%-12s %7.2f %7.2f %7.2f %7zu %7zu %7zu\n", name.c_str(), 100 * s.precision,
                  100 * s.recall, 100 * s.f05, s.counts.tp, s.counts.fp, s.counts.fn);
    out += buf;
  };
  if (r.subsets.size() > 1 || (r.subsets.size() == 1 && !r.subsets.begin()->first.empty()))
    for (const auto& [tag, s] : r.subsets) row(tag.empty() ? "(untagged)" : tag, s);
  row("combined", r.combined);
  return out;
}

}  // namespace gec::eval
