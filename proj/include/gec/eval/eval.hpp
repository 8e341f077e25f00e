#pragma once

#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "gec/common/text.hpp"
#include "json.hpp"

namespace gec::eval {

/// Replace source tokens [start, end) with `replacement`. Insertions have start == end.
struct Edit {
  int start = 0;
  int end = 0;
  Tokens replacement;

  friend bool operator==(const Edit&, const Edit&) = default;
  friend auto operator<=>(const Edit&, const Edit&) = default;
};

/// Maximal runs of adjacent non-MATCH alignment edges, one edit per run.
std::vector<Edit> extract_edits(const Tokens& source, const Tokens& hypothesis);

/// Applies non-overlapping edits sorted by position. Throws RangeError otherwise.
Tokens apply_edits(const Tokens& source, std::span<const Edit> edits);

struct Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  Counts& operator+=(const Counts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const Counts&, const Counts&) = default;
};

/// Fractions in [0, 1].
struct ScoreReport {
  double precision = 1.0;
  double recall = 1.0;
  double f05 = 1.0;
  Counts counts;
};

/// (1 + b²)PR / (b²P + R); 0 when P = R = 0.
double f_beta(double precision, double recall, double beta = 0.5);

/// P = tp/(tp+fp) and R = tp/(tp+fn), each 1 when its denominator is 0.
ScoreReport report(const Counts& counts);

/// Exact (span, replacement) matching for one sentence.
Counts count_edits(std::span<const Edit> hypothesis, std::span<const Edit> reference);

/// Micro-averaged over sentences.
ScoreReport score(std::span<const std::vector<Edit>> hypothesis, std::span<const std::vector<Edit>> reference);

struct ScoredSentence {
  Tokens source;
  Tokens hypothesis;
  Tokens reference;
  std::string tag;
};

/// Counts over all sentences via extract_edits on both sides.
ScoreReport score_sentences(std::span<const ScoredSentence> sentences, unsigned workers = 1);

struct CombinedReport {
  ScoreReport combined;
  std::map<std::string, ScoreReport> subsets;
};

/// Per-tag scores plus micro-averaged counts over the concatenation.
/// With a non-empty `known_tags`, any other tag is a ConfigError.
CombinedReport dev_combined(std::span<const ScoredSentence> sentences, const std::set<std::string>& known_tags = {},
                            unsigned workers = 1);

/// P, R, F0.5 as percentages rounded to 2 decimals, plus raw counts.
nlohmann::json to_json(const ScoreReport& r);
nlohmann::json to_json(const CombinedReport& r);

/// Fixed-width text table, one row per subset and a "combined" row.
std::string format_table(const CombinedReport& r);

}  // namespace gec::eval
